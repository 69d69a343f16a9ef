#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "denkf/errors.hpp"

namespace denkf {

inline constexpr int kStateDim = 7;    // x, y, z, qx, qy, qz, qw
inline constexpr int kActionDim = 40;  // pneumatic chamber pressures
inline constexpr int kObsDim = 30;     // 5 IMUs x 6 channels
inline constexpr int kNumImus = 5;
inline constexpr int kImuChannels = 6;
inline constexpr int kNumLocations = 20;  // mountable IMU positions along the arm

using Vector7 = Eigen::Matrix<double, kStateDim, 1>;
using Vector40 = Eigen::Matrix<double, kActionDim, 1>;
using Vector30 = Eigen::Matrix<double, kObsDim, 1>;

namespace detail {
inline void require_finite(const Eigen::Ref<const Eigen::VectorXd>& v, const char* what) {
  if (!v.allFinite()) throw InvalidArgument(std::string(what) + " contains non-finite values");
}
}  // namespace detail

/// End-effector pose: position in millimetres plus unit quaternion
/// (x, y, z components then scalar w).
struct RobotState {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector4d orientation = Eigen::Vector4d(0, 0, 0, 1);  // qx, qy, qz, qw

  Vector7 to_vector() const {
    Vector7 v;
    v << position, orientation;
    return v;
  }

  static RobotState from_vector(const Vector7& v) {
    RobotState s;
    s.position = v.head<3>();
    s.orientation = v.tail<4>();
    return s;
  }

  /// Returns a copy with the quaternion scaled to unit norm.  Throws if the
  /// quaternion is numerically zero (no direction to preserve).
  RobotState normalized() const {
    const double n = orientation.norm();
    if (!(n > 1e-12)) throw InvalidArgument("cannot normalize near-zero quaternion");
    RobotState s = *this;
    s.orientation /= n;
    return s;
  }

  void validate() const {
    detail::require_finite(position, "RobotState.position");
    detail::require_finite(orientation, "RobotState.orientation");
  }
};

/// One frame of commanded chamber pressures.
struct Action {
  Vector40 pressures = Vector40::Zero();
  void validate() const { detail::require_finite(pressures, "Action.pressures"); }
};

/// One frame of IMU readings, ordered [imu0 ch0..5, imu1 ch0..5, ...].
struct RawObservation {
  Vector30 imu = Vector30::Zero();
  void validate() const { detail::require_finite(imu, "RawObservation.imu"); }
};

/// A sensor-model output: the learned 7-dim observation (normalized state
/// layout) inferred from one raw IMU frame.
struct LearnedObservation {
  Vector7 values = Vector7::Zero();
};

/// Which 5 of the 20 mountable positions carry IMUs.  Stored sorted; labels
/// are 1-based and must be distinct.
class PlacementSet {
 public:
  PlacementSet() : labels_{1, 2, 3, 4, 5} {}

  explicit PlacementSet(std::array<int, kNumImus> labels) : labels_(labels) {
    std::sort(labels_.begin(), labels_.end());
    for (int i = 0; i < kNumImus; ++i) {
      if (labels_[i] < 1 || labels_[i] > kNumLocations)
        throw InvalidArgument("placement label " + std::to_string(labels_[i]) +
                              " outside [1, " + std::to_string(kNumLocations) + "]");
      if (i > 0 && labels_[i] == labels_[i - 1])
        throw InvalidArgument("duplicate placement label " + std::to_string(labels_[i]));
    }
  }

  const std::array<int, kNumImus>& labels() const { return labels_; }

  bool operator==(const PlacementSet& o) const { return labels_ == o.labels_; }
  bool operator!=(const PlacementSet& o) const { return !(*this == o); }

  std::string to_string() const {
    std::string s = "[";
    for (int i = 0; i < kNumImus; ++i) {
      if (i) s += ",";
      s += std::to_string(labels_[i]);
    }
    return s + "]";
  }

 private:
  std::array<int, kNumImus> labels_;
};

/// Supported sampling rates.  The ordinal index feeds the temporal embedding.
class SamplingFrequency {
 public:
  SamplingFrequency() : hz_(50) {}

  static SamplingFrequency from_hz(int hz) {
    for (int i = 0; i < kCount; ++i)
      if (kSupported[i] == hz) return SamplingFrequency(hz);
    throw InvalidArgument("unsupported sampling frequency " + std::to_string(hz) +
                          " Hz (supported: 5, 10, 30, 50)");
  }

  int hz() const { return hz_; }
  double period() const { return 1.0 / hz_; }

  /// 5 Hz -> 0, 10 Hz -> 1, 30 Hz -> 2, 50 Hz -> 3.
  int ordinal() const {
    for (int i = 0; i < kCount; ++i)
      if (kSupported[i] == hz_) return i;
    return -1;  // unreachable: hz_ is validated at construction
  }

  bool operator==(const SamplingFrequency& o) const { return hz_ == o.hz_; }
  bool operator!=(const SamplingFrequency& o) const { return hz_ != o.hz_; }

  static constexpr int kCount = 4;
  static constexpr std::array<int, kCount> kSupported = {5, 10, 30, 50};

 private:
  explicit SamplingFrequency(int hz) : hz_(hz) {}
  int hz_;
};

/// A set of state hypotheses, one per row (E x 7).  At least two members are
/// required so anomalies and covariances are defined.
class Ensemble {
 public:
  explicit Ensemble(Eigen::MatrixXd members) : members_(std::move(members)) {
    if (members_.rows() < 2)
      throw InvalidArgument("ensemble needs at least 2 members, got " +
                            std::to_string(members_.rows()));
    if (members_.cols() != kStateDim)
      throw InvalidArgument("ensemble member dimension must be 7, got " +
                            std::to_string(members_.cols()));
    if (!members_.allFinite()) throw InvalidArgument("ensemble contains non-finite values");
  }

  int size() const { return static_cast<int>(members_.rows()); }
  const Eigen::MatrixXd& members() const { return members_; }
  Eigen::MatrixXd& members() { return members_; }

 private:
  Eigen::MatrixXd members_;  // E x 7, raw units
};

/// One frame of a recorded or simulated trajectory.
struct Frame {
  double timestamp = 0.0;
  Action action;
  RawObservation obs;
  RobotState truth;
  bool missing = false;  // when set, the filter runs predict-only on this frame
};

/// Column-wise mean of the ensemble with the quaternion block renormalized.
inline RobotState ensemble_mean(const Ensemble& ens) {
  const Vector7 mean = ens.members().colwise().mean();
  return RobotState::from_vector(mean).normalized();
}

/// Raw (un-renormalized) column-wise mean as a 7-vector.
inline Vector7 ensemble_mean_raw(const Ensemble& ens) {
  return ens.members().colwise().mean();
}

/// Centered members: row i is member i minus the ensemble mean.  Columns of
/// the result sum to zero by construction.
inline Eigen::MatrixXd anomaly_matrix(const Ensemble& ens) {
  return ens.members().rowwise() - ens.members().colwise().mean();
}

/// Per-component sample standard deviation (1/(E-1) normalization).
inline Vector7 ensemble_std(const Ensemble& ens) {
  const Eigen::MatrixXd a = anomaly_matrix(ens);
  const double denom = static_cast<double>(ens.size() - 1);
  return (a.array().square().colwise().sum() / denom).sqrt().matrix().transpose();
}

}  // namespace denkf
