#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "denkf/errors.hpp"
#include "denkf/rng.hpp"
#include "denkf/types.hpp"
#include "denkf/version.hpp"

namespace denkf {

inline constexpr int kLatentDim = 4;  // bend_x, bend_y, extension, twist

/// Synthetic soft-arm stand-in for the physical robot.  A 4-dim latent
/// posture (two bend axes, an extension proxy, a twist angle) follows
/// critically damped 2nd-order dynamics toward targets projected linearly
/// from the 40-dim pressure vector; the end-effector pose comes from a
/// constant-curvature arc map, and IMU-like channels mix the latent posture
/// and its rates per mounting location.
struct SyntheticArmConfig {
  int layers = 5;               // tensegrity layers; locations spread evenly across them
  std::uint64_t seed = 0;       // identity of the arm: projection + response tensors
  double bend_gain = 2.0;       // latent bend amplitude per unit projected pressure
  double twist_gain = 1.0;      // latent twist amplitude
  double noise_std_obs = 0.02;  // per-channel observation noise (std)
  double arm_length_mm = 500.0;
  double response_omega = 1.5;  // natural frequency of the critically damped response (rad/s)
  double min_hold_s = 2.0;      // pressure targets hold for U(min_hold, max_hold) seconds
  double max_hold_s = 5.0;

  /// 20 x (6 x 8) mixing tensor: location -> 6 IMU channels from the 8-dim
  /// [posture; posture rate] latent vector.  Rows are unit-norm.
  std::vector<Eigen::MatrixXd> placement_response;

  /// 4 x 40 projection from pressures to latent targets.
  Eigen::MatrixXd pressure_projection;

  SyntheticArmConfig() { rebuild_arm(); }

  /// Regenerates the arm-identity tensors from `seed` (call after changing
  /// seed or layers).
  void rebuild_arm() {
    std::mt19937_64 eng(derive_seed({seed, salt::kSimPlacement}));
    std::normal_distribution<double> gauss(0.0, 1.0);

    pressure_projection = Eigen::MatrixXd(kLatentDim, kActionDim);
    for (int i = 0; i < kLatentDim; ++i)
      for (int j = 0; j < kActionDim; ++j)
        pressure_projection(i, j) = gauss(eng) / std::sqrt(double(kActionDim));

    placement_response.assign(kNumLocations, Eigen::MatrixXd(kImuChannels, 2 * kLatentDim));
    for (int loc = 0; loc < kNumLocations; ++loc) {
      // Locations closer to the tip respond more strongly to posture.
      const double arc = double(loc + 1) / double(kNumLocations);
      for (int c = 0; c < kImuChannels; ++c) {
        Eigen::VectorXd row(2 * kLatentDim);
        for (int k = 0; k < 2 * kLatentDim; ++k) row(k) = gauss(eng);
        row.head(kLatentDim) *= 0.5 + arc;  // posture part scales along the arm
        placement_response[loc].row(c) = row.transpose() / row.norm();
      }
    }
  }

  void validate() const {
    if (layers <= 0) throw InvalidArgument("layers must be positive");
    if (!(noise_std_obs >= 0.0)) throw InvalidArgument("noise_std_obs must be >= 0");
    if (!(arm_length_mm > 0.0)) throw InvalidArgument("arm_length_mm must be positive");
    if (!(response_omega > 0.0)) throw InvalidArgument("response_omega must be positive");
    if (!(min_hold_s > 0.0) || !(max_hold_s >= min_hold_s))
      throw InvalidArgument("hold-time bounds must satisfy 0 < min <= max");
    if (static_cast<int>(placement_response.size()) != kNumLocations)
      throw InvalidArgument("placement_response must have 20 location entries");
    for (int a = 0; a < kNumLocations; ++a)
      for (int b = a + 1; b < kNumLocations; ++b)
        if ((placement_response[a] - placement_response[b]).norm() < 1e-9)
          throw InvalidArgument("placement_response rows for locations " + std::to_string(a + 1) +
                                " and " + std::to_string(b + 1) + " are identical");
  }
};

/// Dataset provenance carried in the sidecar metadata file.
struct DatasetMeta {
  std::string name;
  std::uint64_t seed = 0;
  std::string generator_version = kVersion;
  int layout_version = kDatasetLayoutVersion;
  std::vector<double> segment_boundaries;  // pressure-target switch times (s)
};

/// An ordered trajectory recording: all frames share one placement set and
/// one sampling frequency.
struct TrajectoryDataset {
  std::vector<Frame> frames;
  PlacementSet placement;
  SamplingFrequency frequency;
  DatasetMeta metadata;

  void validate() const {
    if (frames.empty()) throw InvalidArgument("dataset has no frames");
    const double period = frequency.period();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      frames[i].action.validate();
      frames[i].obs.validate();
      frames[i].truth.validate();
      const double qnorm = frames[i].truth.orientation.norm();
      if (std::abs(qnorm - 1.0) > 1e-6)
        throw InvalidArgument("ground-truth quaternion at frame " + std::to_string(i) +
                              " is not unit-norm");
      if (i > 0) {
        const double dt = frames[i].timestamp - frames[i - 1].timestamp;
        if (!(dt > 0.0))
          throw InvalidArgument("timestamps not strictly increasing at frame " +
                                std::to_string(i));
        if (std::abs(dt - period) > 1e-9)
          throw InvalidArgument("timestamp spacing at frame " + std::to_string(i) +
                                " deviates from 1/" + std::to_string(frequency.hz()));
      }
    }
  }
};

namespace detail {

/// Hamilton product, components ordered [x, y, z, w].
inline Eigen::Vector4d quat_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  Eigen::Vector4d q;
  q(0) = a(3) * b(0) + a(0) * b(3) + a(1) * b(2) - a(2) * b(1);
  q(1) = a(3) * b(1) - a(0) * b(2) + a(1) * b(3) + a(2) * b(0);
  q(2) = a(3) * b(2) + a(0) * b(1) - a(1) * b(0) + a(2) * b(3);
  q(3) = a(3) * b(3) - a(0) * b(0) - a(1) * b(1) - a(2) * b(2);
  return q;
}

inline Eigen::Vector4d axis_angle_quat(const Eigen::Vector3d& axis, double angle) {
  Eigen::Vector4d q;
  q.head<3>() = axis * std::sin(0.5 * angle);
  q(3) = std::cos(0.5 * angle);
  return q;
}

/// Constant-curvature arc map: latent posture -> end-effector pose.
inline RobotState ee_pose_from_latent(const Eigen::Vector4d& q, const SyntheticArmConfig& cfg) {
  const double bx = q(0), by = q(1), ext = q(2), tw = q(3);
  const double theta = std::hypot(bx, by);
  const double len = cfg.arm_length_mm * (1.0 + 0.2 * std::tanh(ext));

  RobotState s;
  if (theta < 1e-10) {
    s.position = Eigen::Vector3d(0.0, 0.0, len);
    s.orientation = axis_angle_quat(Eigen::Vector3d::UnitZ(), tw);
  } else {
    const double phi = std::atan2(by, bx);
    const double r = len / theta;
    s.position = Eigen::Vector3d(r * (1.0 - std::cos(theta)) * std::cos(phi),
                                 r * (1.0 - std::cos(theta)) * std::sin(phi),
                                 r * std::sin(theta));
    const Eigen::Vector3d bend_axis(-std::sin(phi), std::cos(phi), 0.0);
    s.orientation = quat_multiply(axis_angle_quat(bend_axis, theta),
                                  axis_angle_quat(Eigen::Vector3d::UnitZ(), tw));
  }
  s.orientation.normalize();
  return s;
}

/// One piecewise-constant command segment of the latent trajectory.
struct LatentSegment {
  double start_time = 0.0;
  Eigen::Vector4d q0 = Eigen::Vector4d::Zero();  // latent posture at segment start
  Eigen::Vector4d v0 = Eigen::Vector4d::Zero();  // latent rate at segment start
  Eigen::Vector4d target = Eigen::Vector4d::Zero();
  Vector40 pressures = Vector40::Zero();
};

/// Critically damped response, exact closed form: with e = q - target,
///   e(t) = (e0 + (v0 + w e0) t) exp(-w t),
///   v(t) = (v0 - w t (v0 + w e0)) exp(-w t).
/// Being closed-form in continuous time, the trajectory is independent of
/// the sampling frequency used to read it out.
inline void propagate_latent(const LatentSegment& seg, double elapsed, double omega,
                             Eigen::Vector4d& q, Eigen::Vector4d& v) {
  const Eigen::Vector4d e0 = seg.q0 - seg.target;
  const Eigen::Vector4d c = seg.v0 + omega * e0;
  const double decay = std::exp(-omega * elapsed);
  q = seg.target + (e0 + c * elapsed) * decay;
  v = (seg.v0 - omega * elapsed * c) * decay;
}

}  // namespace detail

/// Generates one synthetic recording: random pressure targets held for
/// 2-5 s each, smooth latent response, exact ground-truth EE pose, and
/// noisy placement-dependent IMU channels.  Bit-deterministic in
/// (cfg, placement, f, duration, seed); the latent trajectory itself does
/// not depend on placement or sampling frequency.
inline TrajectoryDataset generate_trajectory(const SyntheticArmConfig& cfg,
                                             const PlacementSet& placement,
                                             SamplingFrequency f, double duration_s,
                                             std::uint64_t seed) {
  cfg.validate();
  if (!(duration_s > 0.0)) throw InvalidArgument("duration must be positive");

  const long n_frames = std::lround(duration_s * f.hz());
  if (n_frames < 1) throw InvalidArgument("duration too short for one frame at this frequency");

  // Latent command stream: independent of placement and frequency.
  std::mt19937_64 latent_eng(derive_seed({seed, salt::kSimLatent}));
  std::uniform_real_distribution<double> hold_dist(cfg.min_hold_s, cfg.max_hold_s);
  std::uniform_real_distribution<double> pressure_dist(0.0, 1.0);
  const Eigen::Vector4d target_gains(cfg.bend_gain, cfg.bend_gain, 0.5 * cfg.bend_gain,
                                     cfg.twist_gain);

  std::vector<detail::LatentSegment> segments;
  {
    detail::LatentSegment seg;  // arm starts at rest with a first random command
    double t = 0.0;
    while (t < duration_s) {
      seg.start_time = t;
      for (int j = 0; j < kActionDim; ++j) seg.pressures(j) = pressure_dist(latent_eng);
      seg.target = target_gains.asDiagonal() *
                   (cfg.pressure_projection * (seg.pressures.array() - 0.5).matrix());
      segments.push_back(seg);
      const double hold = hold_dist(latent_eng);
      // Seed the next segment's initial conditions exactly at the switch time.
      Eigen::Vector4d q_end, v_end;
      detail::propagate_latent(seg, hold, cfg.response_omega, q_end, v_end);
      seg.q0 = q_end;
      seg.v0 = v_end;
      t += hold;
    }
  }

  std::mt19937_64 noise_eng(derive_seed({seed, salt::kSimNoise}));
  std::normal_distribution<double> gauss(0.0, 1.0);

  TrajectoryDataset ds;
  ds.placement = placement;
  ds.frequency = f;
  ds.metadata.seed = seed;
  ds.metadata.generator_version = kVersion;
  for (std::size_t s = 1; s < segments.size(); ++s)
    ds.metadata.segment_boundaries.push_back(segments[s].start_time);

  ds.frames.reserve(n_frames);
  std::size_t seg_idx = 0;
  for (long k = 0; k < n_frames; ++k) {
    const double t = double(k) / f.hz();
    while (seg_idx + 1 < segments.size() && segments[seg_idx + 1].start_time <= t) ++seg_idx;
    const detail::LatentSegment& seg = segments[seg_idx];

    Eigen::Vector4d q, v;
    detail::propagate_latent(seg, t - seg.start_time, cfg.response_omega, q, v);

    Frame frame;
    frame.timestamp = t;
    frame.action.pressures = seg.pressures;
    frame.truth = detail::ee_pose_from_latent(q, cfg);

    Eigen::Matrix<double, 2 * kLatentDim, 1> latvec;
    latvec << q, v;
    for (int i = 0; i < kNumImus; ++i) {
      const int loc = placement.labels()[i] - 1;
      Eigen::Matrix<double, kImuChannels, 1> channels = cfg.placement_response[loc] * latvec;
      for (int c = 0; c < kImuChannels; ++c)
        frame.obs.imu(i * kImuChannels + c) = channels(c) + cfg.noise_std_obs * gauss(noise_eng);
    }
    ds.frames.push_back(std::move(frame));
  }
  ds.validate();
  return ds;
}

/// Downsamples by selecting frames on the target grid (nearest timestamp).
/// The target rate must divide the source rate so selected timestamps land
/// exactly on the grid; equal rates return a copy.
inline TrajectoryDataset resample(const TrajectoryDataset& ds, SamplingFrequency target) {
  ds.validate();
  const int src = ds.frequency.hz();
  if (target.hz() > src)
    throw InvalidArgument("cannot resample upward from " + std::to_string(src) + " Hz to " +
                          std::to_string(target.hz()) + " Hz");
  if (target.hz() == src) return ds;
  if (src % target.hz() != 0)
    throw InvalidArgument("resample needs the target rate to divide the source rate (" +
                          std::to_string(src) + " Hz -> " + std::to_string(target.hz()) +
                          " Hz); generate natively instead");
  const int stride = src / target.hz();
  TrajectoryDataset out;
  out.placement = ds.placement;
  out.frequency = target;
  out.metadata = ds.metadata;
  out.frames.reserve(ds.frames.size() / stride + 1);
  for (std::size_t k = 0; k < ds.frames.size(); k += stride) out.frames.push_back(ds.frames[k]);
  out.validate();
  return out;
}

/// The ten canonical placement sets D1-D10 used across experiments.
inline const std::vector<PlacementSet>& canonical_placements() {
  static const std::vector<PlacementSet> sets = {
      PlacementSet({1, 4, 9, 14, 18}),  PlacementSet({1, 5, 9, 15, 19}),
      PlacementSet({2, 6, 10, 15, 19}), PlacementSet({2, 6, 10, 16, 20}),
      PlacementSet({2, 6, 10, 13, 17}), PlacementSet({3, 7, 11, 14, 18}),
      PlacementSet({3, 7, 11, 16, 20}), PlacementSet({4, 8, 12, 16, 20}),
      PlacementSet({4, 8, 12, 14, 18}), PlacementSet({4, 8, 12, 15, 19})};
  return sets;
}

}  // namespace denkf
