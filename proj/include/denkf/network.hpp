#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "denkf/errors.hpp"
#include "denkf/rng.hpp"

namespace denkf {

enum class Activation { relu, none };
enum class ForwardMode { deterministic, stochastic };

/// One fully-connected layer.  `stochastic` marks the layer as an SNN layer:
/// in stochastic mode a dropout mask is applied to its *input* (the
/// MC-dropout construction: dropout before every stochastic weight layer),
/// which stays active at inference time to generate sampled forward passes.
struct LayerSpec {
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::relu;
  bool stochastic = false;
};

/// A feed-forward network: layer specs plus parameters.  Weight matrices are
/// (out_dim x in_dim); the model is a value type, so snapshots are cheap to
/// copy and immutable copies can be evaluated concurrently.
struct NetworkModel {
  std::vector<LayerSpec> layers;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  double dropout_rate = 0.1;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<std::size_t>(weights[l].size()) + static_cast<std::size_t>(biases[l].size());
    return n;
  }

  void validate() const {
    if (layers.empty()) throw InvalidArgument("network has no layers");
    if (layers.size() != weights.size() || layers.size() != biases.size())
      throw InvalidArgument("network layer/parameter count mismatch");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw InvalidArgument("dropout_rate must lie in [0, 1), got " +
                            std::to_string(dropout_rate));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const LayerSpec& s = layers[l];
      if (s.in_dim <= 0 || s.out_dim <= 0)
        throw InvalidArgument("layer " + std::to_string(l) + " has non-positive dimensions");
      if (l > 0 && layers[l - 1].out_dim != s.in_dim)
        throw InvalidArgument("layer " + std::to_string(l) + " input dim " +
                              std::to_string(s.in_dim) + " does not match previous output dim " +
                              std::to_string(layers[l - 1].out_dim));
      if (weights[l].rows() != s.out_dim || weights[l].cols() != s.in_dim)
        throw InvalidArgument("layer " + std::to_string(l) + " weight shape mismatch");
      if (biases[l].size() != s.out_dim)
        throw InvalidArgument("layer " + std::to_string(l) + " bias shape mismatch");
      if (!weights[l].allFinite() || !biases[l].allFinite())
        throw InvalidArgument("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
};

/// Everything the backward pass needs from one forward pass.  Single-use:
/// backward() consumes the tape and a second call throws StateError.
struct GradientTape {
  bool recorded = false;
  bool consumed = false;
  long batch_size = 0;
  std::vector<Eigen::MatrixXd> inputs;    // per layer: masked input actually fed to the weights
  std::vector<Eigen::MatrixXd> preacts;   // per layer: pre-activation Z
  std::vector<Eigen::MatrixXd> masks;     // per layer: dropout multiplier on the input (empty if none)
};

/// Parameter gradients aligned with a model's layers.
struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  static Gradients zeros_like(const NetworkModel& m) {
    Gradients g;
    g.weight.reserve(m.weights.size());
    g.bias.reserve(m.biases.size());
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      g.weight.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
      g.bias.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
    }
    return g;
  }

  void accumulate(const Gradients& o, double scale = 1.0) {
    if (o.weight.size() != weight.size())
      throw InvalidArgument("gradient accumulate: layer count mismatch");
    for (std::size_t l = 0; l < weight.size(); ++l) {
      weight[l] += scale * o.weight[l];
      bias[l] += scale * o.bias[l];
    }
  }

  void scale(double s) {
    for (std::size_t l = 0; l < weight.size(); ++l) {
      weight[l] *= s;
      bias[l] *= s;
    }
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weight.size(); ++l)
      if (!weight[l].allFinite() || !bias[l].allFinite()) return false;
    return true;
  }
};

namespace detail {

/// Samples one row's dropout multiplier for one layer.  Inverted dropout:
/// kept entries are scaled by 1/(1-rate) so the deterministic pass equals the
/// expectation, and rate 0 reduces to the deterministic pass bit-for-bit.
inline Eigen::RowVectorXd dropout_row(Eigen::Index width, double rate, std::uint64_t row_seed,
                                      std::size_t layer_index) {
  std::mt19937_64 eng(derive_seed({row_seed, static_cast<std::uint64_t>(layer_index), salt::kMask}));
  std::bernoulli_distribution drop(rate);
  const double keep_scale = 1.0 / (1.0 - rate);
  Eigen::RowVectorXd row(width);
  for (Eigen::Index j = 0; j < width; ++j) row(j) = drop(eng) ? 0.0 : keep_scale;
  return row;
}

}  // namespace detail

/// Runs the network on a batch (rows are independent inputs).  In stochastic
/// mode each row draws its own dropout masks from `row_seeds[row]`, so a
/// member's sample depends only on its own seed, never on batch order.
/// Set `want_tape` to record the intermediates needed by backward_batch.
inline std::pair<Eigen::MatrixXd, GradientTape> forward_batch(
    const NetworkModel& m, const Eigen::MatrixXd& input, ForwardMode mode,
    const std::vector<std::uint64_t>& row_seeds = {}, bool want_tape = false) {
  m.validate();
  if (input.cols() != m.input_dim())
    throw InvalidArgument("network input dim mismatch: expected " +
                          std::to_string(m.input_dim()) + ", got " +
                          std::to_string(input.cols()));
  if (!input.allFinite()) throw InvalidArgument("network input contains non-finite values");
  const long n = input.rows();
  const bool dropout_active = mode == ForwardMode::stochastic && m.dropout_rate > 0.0;
  if (dropout_active) {
    bool any_stochastic = false;
    for (const LayerSpec& s : m.layers) any_stochastic |= s.stochastic;
    if (any_stochastic && static_cast<long>(row_seeds.size()) != n)
      throw InvalidArgument("stochastic forward needs one seed per batch row");
  }

  GradientTape tape;
  if (want_tape) {
    tape.recorded = true;
    tape.batch_size = n;
    tape.inputs.resize(m.layers.size());
    tape.preacts.resize(m.layers.size());
    tape.masks.resize(m.layers.size());
  }

  Eigen::MatrixXd x = input;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerSpec& spec = m.layers[l];
    if (dropout_active && spec.stochastic) {
      Eigen::MatrixXd mask(n, spec.in_dim);
      for (long r = 0; r < n; ++r)
        mask.row(r) = detail::dropout_row(mask.cols(), m.dropout_rate, row_seeds[r], l);
      x = x.cwiseProduct(mask);
      if (want_tape) tape.masks[l] = std::move(mask);
    }
    if (want_tape) tape.inputs[l] = x;
    Eigen::MatrixXd z = x * m.weights[l].transpose();
    z.rowwise() += m.biases[l].transpose();
    if (want_tape) tape.preacts[l] = z;
    x = spec.activation == Activation::relu ? z.cwiseMax(0.0).eval() : std::move(z);
  }
  return {std::move(x), std::move(tape)};
}

/// Single-input convenience wrapper over forward_batch.
inline std::pair<Eigen::VectorXd, GradientTape> forward(const NetworkModel& m,
                                                        const Eigen::VectorXd& input,
                                                        ForwardMode mode,
                                                        std::uint64_t seed = 0,
                                                        bool want_tape = false) {
  auto [out, tape] = forward_batch(m, input.transpose(), mode, {seed}, want_tape);
  return {out.row(0).transpose(), std::move(tape)};
}

/// Reverse pass through one recorded forward.  Returns the parameter
/// gradients and the gradient with respect to the batch input.  The tape is
/// consumed: reuse throws StateError.
inline std::pair<Gradients, Eigen::MatrixXd> backward_batch(const NetworkModel& m,
                                                            GradientTape& tape,
                                                            const Eigen::MatrixXd& output_grad) {
  if (!tape.recorded) throw StateError("backward called on a tape that was never recorded");
  if (tape.consumed) throw StateError("gradient tape already consumed");
  if (tape.inputs.size() != m.layers.size())
    throw StateError("gradient tape does not match this network");
  if (output_grad.rows() != tape.batch_size || output_grad.cols() != m.output_dim())
    throw InvalidArgument("output_grad shape mismatch in backward");
  tape.consumed = true;

  Gradients grads = Gradients::zeros_like(m);
  Eigen::MatrixXd dy = output_grad;
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    if (m.layers[li].activation == Activation::relu)
      dy = dy.cwiseProduct((tape.preacts[li].array() > 0.0).cast<double>().matrix());
    grads.weight[li] = dy.transpose() * tape.inputs[li];
    grads.bias[li] = dy.colwise().sum().transpose();
    dy = dy * m.weights[li];                       // gradient w.r.t. the (masked) layer input
    if (tape.masks[li].size() > 0) dy = dy.cwiseProduct(tape.masks[li]);
  }
  return {std::move(grads), std::move(dy)};
}

/// Single-input convenience wrapper over backward_batch.
inline std::pair<Gradients, Eigen::VectorXd> backward(const NetworkModel& m, GradientTape& tape,
                                                      const Eigen::VectorXd& output_grad) {
  auto [grads, dx] = backward_batch(m, tape, output_grad.transpose());
  return {std::move(grads), dx.row(0).transpose()};
}

/// He-uniform init for ReLU layers, Xavier-uniform for linear ones; biases
/// start at zero.  Fully determined by `seed`.
inline NetworkModel init_network(std::vector<LayerSpec> specs, double dropout_rate,
                                 std::uint64_t seed) {
  NetworkModel m;
  m.layers = std::move(specs);
  m.dropout_rate = dropout_rate;
  std::mt19937_64 eng(derive_seed({seed, salt::kWeights}));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerSpec& s = m.layers[l];
    const double limit = s.activation == Activation::relu
                             ? std::sqrt(6.0 / s.in_dim)
                             : std::sqrt(6.0 / (s.in_dim + s.out_dim));
    std::uniform_real_distribution<double> u(-limit, limit);
    Eigen::MatrixXd w(s.out_dim, s.in_dim);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(eng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(s.out_dim));
  }
  m.validate();
  return m;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction.  Holds the moment estimates; step() is
/// functional over the model (returns the updated copy) so callers can keep
/// the previous snapshot as the last-known-good state.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const NetworkModel& shape, AdamConfig cfg = {}) : cfg_(cfg) {
    for (std::size_t l = 0; l < shape.weights.size(); ++l) {
      mw_.push_back(Eigen::MatrixXd::Zero(shape.weights[l].rows(), shape.weights[l].cols()));
      vw_.push_back(Eigen::MatrixXd::Zero(shape.weights[l].rows(), shape.weights[l].cols()));
      mb_.push_back(Eigen::VectorXd::Zero(shape.biases[l].size()));
      vb_.push_back(Eigen::VectorXd::Zero(shape.biases[l].size()));
    }
  }

  long step_count() const { return t_; }

  NetworkModel step(const NetworkModel& m, const Gradients& g, double lr) {
    if (g.weight.size() != mw_.size())
      throw InvalidArgument("optimizer state does not match this network");
    if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be nonnegative");
    if (!g.all_finite()) throw TrainingError("non-finite gradient in optimizer step");
    NetworkModel out = m;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t l = 0; l < mw_.size(); ++l) {
      mw_[l] = cfg_.beta1 * mw_[l] + (1.0 - cfg_.beta1) * g.weight[l];
      vw_[l] = cfg_.beta2 * vw_[l] + (1.0 - cfg_.beta2) * g.weight[l].cwiseProduct(g.weight[l]);
      mb_[l] = cfg_.beta1 * mb_[l] + (1.0 - cfg_.beta1) * g.bias[l];
      vb_[l] = cfg_.beta2 * vb_[l] + (1.0 - cfg_.beta2) * g.bias[l].cwiseProduct(g.bias[l]);
      out.weights[l] -=
          (lr * (mw_[l] / bc1).array() / ((vw_[l] / bc2).array().sqrt() + cfg_.epsilon)).matrix();
      out.biases[l] -=
          (lr * (mb_[l] / bc1).array() / ((vb_[l] / bc2).array().sqrt() + cfg_.epsilon)).matrix();
    }
    if (!std::all_of(out.weights.begin(), out.weights.end(),
                     [](const Eigen::MatrixXd& w) { return w.allFinite(); }))
      throw TrainingError("optimizer produced non-finite parameters");
    return out;
  }

 private:
  AdamConfig cfg_;
  std::vector<Eigen::MatrixXd> mw_, vw_;
  std::vector<Eigen::VectorXd> mb_, vb_;
  long t_ = 0;
};

}  // namespace denkf
