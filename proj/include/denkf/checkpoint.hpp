#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "denkf/dataset_io.hpp"
#include "denkf/errors.hpp"
#include "denkf/models.hpp"
#include "denkf/version.hpp"

namespace denkf {

/// Provenance recorded alongside the trained parameters.
struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs_completed = 0;
  double final_loss = 0.0;
  std::vector<double> loss_curve;
};

struct Checkpoint {
  ModelBundle models;
  TrainingMeta training;
};

namespace detail {

inline nlohmann::json network_to_json(const NetworkModel& m) {
  nlohmann::json j;
  j["dropout_rate"] = m.dropout_rate;
  j["layers"] = nlohmann::json::array();
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerSpec& s = m.layers[l];
    j["layers"].push_back({{"in", s.in_dim},
                           {"out", s.out_dim},
                           {"activation", s.activation == Activation::relu ? "relu" : "none"},
                           {"stochastic", s.stochastic}});
    std::vector<double> w(m.weights[l].size());
    Eigen::Map<Eigen::MatrixXd>(w.data(), m.weights[l].rows(), m.weights[l].cols()) =
        m.weights[l];
    j["weights"].push_back(std::move(w));
    j["biases"].push_back(std::vector<double>(m.biases[l].data(),
                                              m.biases[l].data() + m.biases[l].size()));
  }
  return j;
}

inline NetworkModel network_from_json(const nlohmann::json& j) {
  NetworkModel m;
  try {
    m.dropout_rate = j.at("dropout_rate").get<double>();
    const auto& layers = j.at("layers");
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (layers.size() != weights.size() || layers.size() != biases.size())
      throw ParseError("checkpoint network: layer/parameter array length mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      LayerSpec s;
      s.in_dim = layers[l].at("in").get<int>();
      s.out_dim = layers[l].at("out").get<int>();
      const std::string act = layers[l].at("activation").get<std::string>();
      if (act == "relu")
        s.activation = Activation::relu;
      else if (act == "none")
        s.activation = Activation::none;
      else
        throw ParseError("checkpoint network: unknown activation '" + act + "'");
      s.stochastic = layers[l].at("stochastic").get<bool>();
      m.layers.push_back(s);

      const std::vector<double> w = weights[l].get<std::vector<double>>();
      if (static_cast<int>(w.size()) != s.in_dim * s.out_dim)
        throw ParseError("checkpoint network: weight array size mismatch at layer " +
                         std::to_string(l));
      m.weights.push_back(Eigen::Map<const Eigen::MatrixXd>(w.data(), s.out_dim, s.in_dim));

      const std::vector<double> b = biases[l].get<std::vector<double>>();
      if (static_cast<int>(b.size()) != s.out_dim)
        throw ParseError("checkpoint network: bias array size mismatch at layer " +
                         std::to_string(l));
      m.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), b.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint network: ") + e.what());
  }
  m.validate();
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

template <typename Vec>
inline void vector_from_json(const nlohmann::json& j, Vec& out, const char* what) {
  const std::vector<double> v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != out.size())
    throw ParseError(std::string("checkpoint: ") + what + " length mismatch");
  out = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.models.validate();
  nlohmann::json j;
  j["layout_version"] = kCheckpointLayoutVersion;
  j["tool_version"] = kVersion;
  j["variant"] = variant_name(ckpt.models.variant);
  j["dropout_rate"] = ckpt.models.dropout_rate;
  j["embedding"] = {{"d_model", ckpt.models.embedding.d_model},
                    {"base", ckpt.models.embedding.base}};
  j["normalizer"] = {{"state_mean", detail::vector_to_json(ckpt.models.normalizer.state_mean)},
                     {"state_std", detail::vector_to_json(ckpt.models.normalizer.state_std)},
                     {"action_mean", detail::vector_to_json(ckpt.models.normalizer.action_mean)},
                     {"action_std", detail::vector_to_json(ckpt.models.normalizer.action_std)},
                     {"obs_mean", detail::vector_to_json(ckpt.models.normalizer.obs_mean)},
                     {"obs_std", detail::vector_to_json(ckpt.models.normalizer.obs_std)}};
  j["networks"] = {{"transition_encoder", detail::network_to_json(ckpt.models.transition.encoder)},
                   {"transition_head", detail::network_to_json(ckpt.models.transition.head)},
                   {"observation", detail::network_to_json(ckpt.models.observation.net)},
                   {"sensor", detail::network_to_json(ckpt.models.sensor.net)},
                   {"noise", detail::network_to_json(ckpt.models.noise.net)}};
  j["training"] = {{"seed", ckpt.training.seed},
                   {"epochs_completed", ckpt.training.epochs_completed},
                   {"final_loss", ckpt.training.final_loss},
                   {"loss_curve", ckpt.training.loss_curve}};
  io::write_file_atomic(path, j.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed checkpoint " + path.string() + ": " + e.what());
  }

  const int layout = j.value("layout_version", -1);
  if (layout != kCheckpointLayoutVersion)
    throw IncompatibleLayout("checkpoint layout version " + std::to_string(layout) +
                             " not supported (this build reads version " +
                             std::to_string(kCheckpointLayoutVersion) + ")");

  Checkpoint ckpt;
  try {
    ckpt.models.variant = variant_from_string(j.at("variant").get<std::string>());
    ckpt.models.dropout_rate = j.at("dropout_rate").get<double>();
    ckpt.models.embedding.d_model = j.at("embedding").at("d_model").get<int>();
    ckpt.models.embedding.base = j.at("embedding").at("base").get<double>();

    const auto& n = j.at("normalizer");
    detail::vector_from_json(n.at("state_mean"), ckpt.models.normalizer.state_mean, "state_mean");
    detail::vector_from_json(n.at("state_std"), ckpt.models.normalizer.state_std, "state_std");
    detail::vector_from_json(n.at("action_mean"), ckpt.models.normalizer.action_mean,
                             "action_mean");
    detail::vector_from_json(n.at("action_std"), ckpt.models.normalizer.action_std, "action_std");
    detail::vector_from_json(n.at("obs_mean"), ckpt.models.normalizer.obs_mean, "obs_mean");
    detail::vector_from_json(n.at("obs_std"), ckpt.models.normalizer.obs_std, "obs_std");

    const auto& nets = j.at("networks");
    ckpt.models.transition.encoder = detail::network_from_json(nets.at("transition_encoder"));
    ckpt.models.transition.head = detail::network_from_json(nets.at("transition_head"));
    ckpt.models.observation.net = detail::network_from_json(nets.at("observation"));
    ckpt.models.sensor.net = detail::network_from_json(nets.at("sensor"));
    ckpt.models.noise.net = detail::network_from_json(nets.at("noise"));

    if (j.contains("training")) {
      const auto& t = j.at("training");
      ckpt.training.seed = t.value("seed", std::uint64_t(0));
      ckpt.training.epochs_completed = t.value("epochs_completed", 0);
      ckpt.training.final_loss = t.value("final_loss", 0.0);
      ckpt.training.loss_curve = t.value("loss_curve", std::vector<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint field error: ") + e.what());
  }
  ckpt.models.validate();
  return ckpt;
}

/// Exact parameter equality across two bundles (round-trip verification).
inline bool bundles_equal(const ModelBundle& a, const ModelBundle& b) {
  const auto nets_equal = [](const NetworkModel& x, const NetworkModel& y) {
    if (x.layers.size() != y.layers.size() || x.dropout_rate != y.dropout_rate) return false;
    for (std::size_t l = 0; l < x.layers.size(); ++l) {
      if (x.layers[l].in_dim != y.layers[l].in_dim || x.layers[l].out_dim != y.layers[l].out_dim ||
          x.layers[l].activation != y.layers[l].activation ||
          x.layers[l].stochastic != y.layers[l].stochastic)
        return false;
      if (x.weights[l] != y.weights[l] || x.biases[l] != y.biases[l]) return false;
    }
    return true;
  };
  return a.variant == b.variant && a.embedding.d_model == b.embedding.d_model &&
         a.embedding.base == b.embedding.base && a.dropout_rate == b.dropout_rate &&
         a.normalizer.state_mean == b.normalizer.state_mean &&
         a.normalizer.state_std == b.normalizer.state_std &&
         a.normalizer.action_mean == b.normalizer.action_mean &&
         a.normalizer.action_std == b.normalizer.action_std &&
         a.normalizer.obs_mean == b.normalizer.obs_mean &&
         a.normalizer.obs_std == b.normalizer.obs_std &&
         nets_equal(a.transition.encoder, b.transition.encoder) &&
         nets_equal(a.transition.head, b.transition.head) &&
         nets_equal(a.observation.net, b.observation.net) &&
         nets_equal(a.sensor.net, b.sensor.net) && nets_equal(a.noise.net, b.noise.net);
}

}  // namespace denkf
