#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "denkf/embedding.hpp"
#include "denkf/errors.hpp"
#include "denkf/network.hpp"
#include "denkf/normalize.hpp"
#include "denkf/rng.hpp"
#include "denkf/types.hpp"

namespace denkf {

/// Input-conditioning ablations: `fix` feeds raw IMU channels only, `pe`
/// interleaves per-IMU positional embeddings into the sensor input, `pe_te`
/// additionally adds a sampling-frequency embedding to the transition latent.
enum class Variant { fix, pe, pe_te };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::fix: return "fix";
    case Variant::pe: return "pe";
    case Variant::pe_te: return "pe+te";
  }
  throw InvalidArgument("unknown variant");
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "fix") return Variant::fix;
  if (s == "pe") return Variant::pe;
  if (s == "pe+te" || s == "pe_te") return Variant::pe_te;
  throw InvalidArgument("unknown variant '" + s + "' (expected fix | pe | pe+te)");
}

/// State-transition network f.  Split at the temporal-embedding injection
/// point: `encoder` produces the 64-dim latent, the frequency embedding is
/// added element-wise to it (pe+te only), and `head` maps the latent to a
/// normalized state delta.  All layers are stochastic (MC-dropout).
struct TransitionModel {
  NetworkModel encoder;  // 47 -> 64 -> 64
  NetworkModel head;     // 64 -> 128 -> 128 -> 7
};

/// Deterministic observation map h: normalized state -> predicted
/// normalized observation.
struct ObservationModel {
  NetworkModel net;  // 7 -> 32 -> 32 -> 64 -> 64 -> 7
};

/// Stochastic sensor encoder s: assembled IMU input -> sampled normalized
/// observation.
struct SensorModel {
  NetworkModel net;  // (30 | 350) -> 128 -> 512 -> 512 -> 256 -> 128 -> 7
};

/// Observation-noise head r: mean learned observation -> per-channel
/// variance via softplus (strictly positive, floored).
struct NoiseModel {
  NetworkModel net;  // 7 -> 16 -> 16 -> 7
};

inline constexpr double kNoiseFloor = 1e-6;

namespace instrument {
/// Counts sensor-model forward invocations; lets tests verify that
/// missing-observation steps never touch the sensor model.
inline std::atomic<long> sensor_forward_count{0};
}  // namespace instrument

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double softplus_derivative(double x) {  // the logistic sigmoid
  return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Everything the filter needs to run: the four learned models, the
/// normalizer they were trained against, and the conditioning configuration.
struct ModelBundle {
  Variant variant = Variant::fix;
  EmbeddingConfig embedding;
  double dropout_rate = 0.1;
  TransitionModel transition;
  ObservationModel observation;
  SensorModel sensor;
  NoiseModel noise;
  Normalizer normalizer;

  int sensor_input_dim() const {
    return variant == Variant::fix ? kObsDim : kNumImus * (kImuChannels + embedding.d_model);
  }

  void validate() const {
    embedding.validate();
    normalizer.validate();
    transition.encoder.validate();
    transition.head.validate();
    observation.net.validate();
    sensor.net.validate();
    noise.net.validate();
    if (transition.encoder.input_dim() != kStateDim + kActionDim)
      throw InvalidArgument("transition encoder must take state+action input");
    if (transition.head.input_dim() != transition.encoder.output_dim())
      throw InvalidArgument("transition encoder/head latent width mismatch");
    if (transition.head.output_dim() != kStateDim)
      throw InvalidArgument("transition head must emit a 7-dim state delta");
    if (variant == Variant::pe_te && embedding.d_model != transition.encoder.output_dim())
      throw InvalidArgument("pe+te needs d_model equal to the transition latent width");
    if (observation.net.input_dim() != kStateDim || observation.net.output_dim() != kStateDim)
      throw InvalidArgument("observation model must map 7 -> 7");
    if (sensor.net.input_dim() != sensor_input_dim())
      throw InvalidArgument("sensor input dim " + std::to_string(sensor.net.input_dim()) +
                            " does not match variant layout " +
                            std::to_string(sensor_input_dim()));
    if (sensor.net.output_dim() != kStateDim)
      throw InvalidArgument("sensor model must emit a 7-dim observation");
    if (noise.net.input_dim() != kStateDim || noise.net.output_dim() != kStateDim)
      throw InvalidArgument("noise model must map 7 -> 7");
  }

  /// Fresh bundle with the published layer widths, seeded deterministically.
  static ModelBundle init(Variant v, std::uint64_t seed, double dropout_rate = 0.1,
                          EmbeddingConfig embedding = {}) {
    ModelBundle b;
    b.variant = v;
    b.embedding = embedding;
    b.dropout_rate = dropout_rate;

    const auto snn = [&](int in, int out, Activation act = Activation::relu) {
      return LayerSpec{in, out, act, true};
    };
    const auto fc = [&](int in, int out, Activation act = Activation::relu) {
      return LayerSpec{in, out, act, false};
    };

    b.transition.encoder = init_network({snn(kStateDim + kActionDim, 64), snn(64, 64)},
                                        dropout_rate, derive_seed({seed, 1}));
    b.transition.head =
        init_network({snn(64, 128), snn(128, 128), snn(128, kStateDim, Activation::none)},
                     dropout_rate, derive_seed({seed, 2}));
    b.observation.net =
        init_network({fc(kStateDim, 32), fc(32, 32), fc(32, 64), fc(64, 64),
                      fc(64, kStateDim, Activation::none)},
                     0.0, derive_seed({seed, 3}));
    const int sense_in = v == Variant::fix ? kObsDim : kNumImus * (kImuChannels + embedding.d_model);
    b.sensor.net = init_network({fc(sense_in, 128), snn(128, 512), snn(512, 512), snn(512, 256),
                                 snn(256, 128), snn(128, kStateDim, Activation::none)},
                                dropout_rate, derive_seed({seed, 4}));
    b.noise.net = init_network(
        {fc(kStateDim, 16), fc(16, 16), fc(16, kStateDim, Activation::none)}, 0.0,
        derive_seed({seed, 5}));
    b.validate();
    return b;
  }
};

// ---------------------------------------------------------------------------
// Input assembly
// ---------------------------------------------------------------------------

/// Transition input for a batch of raw states under one action: rows are
/// [zscore(state); zscore(action)].
inline Eigen::MatrixXd assemble_transition_input(const ModelBundle& b,
                                                 const Eigen::MatrixXd& members_raw,
                                                 const Action& action) {
  if (members_raw.cols() != kStateDim)
    throw InvalidArgument("transition input needs 7-dim state rows");
  action.validate();
  const long n = members_raw.rows();
  Eigen::MatrixXd in(n, kStateDim + kActionDim);
  const Vector40 za = b.normalizer.zscore_action(action.pressures);
  for (long i = 0; i < n; ++i) {
    in.row(i).head<kStateDim>() = b.normalizer.zscore_state(members_raw.row(i)).transpose();
    in.row(i).tail<kActionDim>() = za.transpose();
  }
  return in;
}

/// Sensor input for one raw IMU frame.  `fix` feeds the 30 z-scored
/// channels; `pe`/`pe+te` interleave each IMU's 6 channels with that IMU's
/// positional-embedding row: [imu_0 | PE_0 | imu_1 | PE_1 | ...].
inline Eigen::VectorXd assemble_sensor_input(const ModelBundle& b, const RawObservation& raw,
                                             const PlacementSet& placement) {
  raw.validate();
  const Vector30 zy = b.normalizer.zscore_obs(raw.imu);
  if (b.variant == Variant::fix) return zy;
  const int d = b.embedding.d_model;
  const Eigen::MatrixXd pe = placement_embedding(placement, b.embedding);
  Eigen::VectorXd in(kNumImus * (kImuChannels + d));
  for (int i = 0; i < kNumImus; ++i) {
    const int off = i * (kImuChannels + d);
    in.segment(off, kImuChannels) = zy.segment(i * kImuChannels, kImuChannels);
    in.segment(off + kImuChannels, d) = pe.row(i).transpose();
  }
  return in;
}

// ---------------------------------------------------------------------------
// Semantic forward ops (single-sample convenience; the filter works on
// batches through the same assembly + forward_batch path)
// ---------------------------------------------------------------------------

/// Sub-network seed split: the encoder and head draw their dropout masks
/// from disjoint streams even for the same member seed.
inline std::uint64_t encoder_seed(std::uint64_t member_seed) { return derive_seed({member_seed, 1}); }
inline std::uint64_t head_seed(std::uint64_t member_seed) { return derive_seed({member_seed, 2}); }

/// One stochastic (or deterministic) transition sample: x' = x + std-scaled
/// network delta.  The quaternion block is left un-renormalized; the filter
/// renormalizes only at its exposure boundaries.
inline RobotState transition_sample(const ModelBundle& b, const RobotState& state,
                                    const Action& action, SamplingFrequency f,
                                    ForwardMode mode, std::uint64_t seed) {
  state.validate();
  const Eigen::MatrixXd in = assemble_transition_input(b, state.to_vector().transpose(), action);
  Eigen::MatrixXd latent =
      forward_batch(b.transition.encoder, in, mode, {encoder_seed(seed)}).first;
  if (b.variant == Variant::pe_te)
    latent.rowwise() += embed_frequency(f, b.embedding).transpose();
  const Eigen::MatrixXd delta =
      forward_batch(b.transition.head, latent, mode, {head_seed(seed)}).first;
  Vector7 next = state.to_vector() +
                 (delta.row(0).transpose().array() * b.normalizer.state_std.array()).matrix();
  return RobotState::from_vector(next);
}

/// Deterministic observation map on one raw state.
inline Vector7 observe(const ModelBundle& b, const RobotState& state) {
  state.validate();
  return forward(b.observation.net, b.normalizer.zscore_state(state.to_vector()),
                 ForwardMode::deterministic)
      .first;
}

/// One sampled learned observation from a raw IMU frame.
inline LearnedObservation sense(const ModelBundle& b, const RawObservation& raw,
                                const PlacementSet& placement, ForwardMode mode,
                                std::uint64_t seed) {
  instrument::sensor_forward_count.fetch_add(1, std::memory_order_relaxed);
  return LearnedObservation{
      forward(b.sensor.net, assemble_sensor_input(b, raw, placement), mode, seed).first};
}

/// Learned per-channel observation-noise variances: softplus of the network
/// output plus a small floor, so the diagonal is always strictly positive.
inline Vector7 noise_diag(const ModelBundle& b, const Vector7& learned_obs_mean) {
  if (!learned_obs_mean.allFinite())
    throw InvalidArgument("noise_diag input contains non-finite values");
  const Vector7 out =
      forward(b.noise.net, learned_obs_mean, ForwardMode::deterministic).first;
  Vector7 diag;
  for (int i = 0; i < kStateDim; ++i) diag(i) = softplus(out(i)) + kNoiseFloor;
  return diag;
}

// ---------------------------------------------------------------------------
// Ensemble-batch ops (one GEMM per layer across all members)
// ---------------------------------------------------------------------------

inline Eigen::MatrixXd zscore_state_rows(const Normalizer& n, const Eigen::MatrixXd& members_raw) {
  return ((members_raw.rowwise() - n.state_mean.transpose()).array().rowwise() /
          n.state_std.transpose().array())
      .matrix();
}

/// Propagates every member through the transition model.  `member_seeds`
/// drive per-member dropout; pass deterministic mode for mean propagation.
inline Eigen::MatrixXd transition_ensemble(const ModelBundle& b,
                                           const Eigen::MatrixXd& members_raw,
                                           const Action& action, SamplingFrequency f,
                                           ForwardMode mode,
                                           const std::vector<std::uint64_t>& member_seeds) {
  const long n = members_raw.rows();
  if (mode == ForwardMode::stochastic && static_cast<long>(member_seeds.size()) != n)
    throw InvalidArgument("transition_ensemble needs one seed per member in stochastic mode");
  std::vector<std::uint64_t> enc_seeds(n), head_seeds(n);
  for (long i = 0; i < n; ++i) {
    enc_seeds[i] = encoder_seed(member_seeds.empty() ? 0 : member_seeds[i]);
    head_seeds[i] = head_seed(member_seeds.empty() ? 0 : member_seeds[i]);
  }
  const Eigen::MatrixXd in = assemble_transition_input(b, members_raw, action);
  Eigen::MatrixXd latent = forward_batch(b.transition.encoder, in, mode, enc_seeds).first;
  if (b.variant == Variant::pe_te)
    latent.rowwise() += embed_frequency(f, b.embedding).transpose();
  const Eigen::MatrixXd delta = forward_batch(b.transition.head, latent, mode, head_seeds).first;
  return members_raw +
         (delta.array().rowwise() * b.normalizer.state_std.transpose().array()).matrix();
}

/// Maps every member to its predicted normalized observation (deterministic).
inline Eigen::MatrixXd observe_ensemble(const ModelBundle& b, const Eigen::MatrixXd& members_raw) {
  return forward_batch(b.observation.net, zscore_state_rows(b.normalizer, members_raw),
                       ForwardMode::deterministic)
      .first;
}

/// Draws one learned-observation sample per member from the same raw frame;
/// the rows differ only through each member's dropout stream.
inline Eigen::MatrixXd sense_ensemble(const ModelBundle& b, const RawObservation& raw,
                                      const PlacementSet& placement, ForwardMode mode,
                                      const std::vector<std::uint64_t>& member_seeds) {
  instrument::sensor_forward_count.fetch_add(1, std::memory_order_relaxed);
  const Eigen::VectorXd in = assemble_sensor_input(b, raw, placement);
  const Eigen::MatrixXd rows = in.transpose().replicate(static_cast<long>(member_seeds.size()), 1);
  return forward_batch(b.sensor.net, rows, mode, member_seeds).first;
}

}  // namespace denkf
