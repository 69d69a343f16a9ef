#pragma once

#include <Eigen/Dense>

#include "denkf/errors.hpp"
#include "denkf/types.hpp"

namespace denkf {

/// Per-channel z-score statistics for states, actions and raw observations.
/// Fitted on the training split and carried inside every checkpoint so that
/// inference applies exactly the statistics training saw.  Defaults to the
/// identity transform (zero mean, unit scale).
struct Normalizer {
  Vector7 state_mean = Vector7::Zero();
  Vector7 state_std = Vector7::Ones();
  Vector40 action_mean = Vector40::Zero();
  Vector40 action_std = Vector40::Ones();
  Vector30 obs_mean = Vector30::Zero();
  Vector30 obs_std = Vector30::Ones();

  void validate() const {
    const auto check = [](const Eigen::Ref<const Eigen::VectorXd>& mean,
                          const Eigen::Ref<const Eigen::VectorXd>& std, const char* what) {
      if (!mean.allFinite() || !std.allFinite())
        throw InvalidArgument(std::string("normalizer ") + what + " stats non-finite");
      if ((std.array() <= 0.0).any())
        throw InvalidArgument(std::string("normalizer ") + what + " std must be positive");
    };
    check(state_mean, state_std, "state");
    check(action_mean, action_std, "action");
    check(obs_mean, obs_std, "observation");
  }

  Vector7 zscore_state(const Vector7& x) const {
    return ((x - state_mean).array() / state_std.array()).matrix();
  }
  Vector7 unscale_state(const Vector7& z) const {
    return (z.array() * state_std.array()).matrix() + state_mean;
  }
  Vector40 zscore_action(const Vector40& a) const {
    return ((a - action_mean).array() / action_std.array()).matrix();
  }
  Vector30 zscore_obs(const Vector30& y) const {
    return ((y - obs_mean).array() / obs_std.array()).matrix();
  }

  /// Fits channel-wise statistics from row-per-frame matrices.  Channels
  /// with (near-)zero variance keep unit scale so z-scoring stays defined.
  static Normalizer fit(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                        const Eigen::MatrixXd& observations) {
    if (states.cols() != kStateDim || actions.cols() != kActionDim ||
        observations.cols() != kObsDim)
      throw InvalidArgument("normalizer fit: column counts must be 7/40/30");
    if (states.rows() < 2) throw InvalidArgument("normalizer fit needs at least 2 frames");

    Normalizer n;
    const auto fit_one = [](const Eigen::MatrixXd& data, Eigen::Ref<Eigen::VectorXd> mean,
                            Eigen::Ref<Eigen::VectorXd> std) {
      mean = data.colwise().mean();
      const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
      std = (centered.array().square().colwise().sum() / double(data.rows() - 1))
                .sqrt()
                .matrix()
                .transpose();
      for (Eigen::Index i = 0; i < std.size(); ++i)
        if (!(std(i) > 1e-8)) std(i) = 1.0;
    };
    fit_one(states, n.state_mean, n.state_std);
    fit_one(actions, n.action_mean, n.action_std);
    fit_one(observations, n.obs_mean, n.obs_std);
    n.validate();
    return n;
  }
};

}  // namespace denkf
