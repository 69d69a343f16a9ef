#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "denkf/errors.hpp"
#include "denkf/models.hpp"
#include "denkf/rng.hpp"
#include "denkf/types.hpp"

namespace denkf {

using Matrix7 = Eigen::Matrix<double, kStateDim, kStateDim>;

struct FilterConfig {
  int ensemble_size = 32;
  double jitter = 1e-6;          // base diagonal regularizer on the innovation covariance
  double init_noise_scale = 0.1; // initial member spread, in state-std units
  std::uint64_t seed = 0;

  void validate() const {
    if (ensemble_size < 2)
      throw InvalidArgument("ensemble_size must be at least 2, got " +
                            std::to_string(ensemble_size));
    if (!(jitter > 0.0)) throw InvalidArgument("jitter must be positive");
    if (!(init_noise_scale >= 0.0)) throw InvalidArgument("init_noise_scale must be >= 0");
  }
};

/// Per-update byproducts useful for diagnostics and downstream detectors.
struct UpdateDiagnostics {
  Matrix7 innovation_cov = Matrix7::Zero();  // S, jitter included
  Matrix7 kalman_gain = Matrix7::Zero();     // K
  Vector7 predicted_obs_mean = Vector7::Zero();
  Vector7 noise_diag = Vector7::Zero();
  double applied_jitter = 0.0;
};

/// Filter state between steps.  `predicted_mean` is the pre-update forecast
/// of the current step; `updated_mean` the posterior of the last completed
/// step.  predict() begins a step, update()/skip_update() completes it.
struct FilterState {
  Ensemble ensemble;
  RobotState predicted_mean;
  RobotState updated_mean;
  Vector7 last_innovation = Vector7::Zero();
  long step_index = 0;
  bool awaiting_update = false;

  explicit FilterState(Ensemble ens)
      : ensemble(std::move(ens)),
        predicted_mean(ensemble_mean(ensemble)),
        updated_mean(predicted_mean) {}
};

/// Seeds the ensemble around an initial state estimate: each member adds
/// independent Gaussian noise scaled per channel by init_noise_scale *
/// state_std.
inline FilterState init_filter(const RobotState& initial, const FilterConfig& cfg,
                               const Normalizer& norm = {}) {
  cfg.validate();
  initial.validate();
  norm.validate();
  Eigen::MatrixXd members(cfg.ensemble_size, kStateDim);
  const Vector7 x0 = initial.to_vector();
  for (int i = 0; i < cfg.ensemble_size; ++i) {
    std::mt19937_64 eng(
        derive_seed({cfg.seed, static_cast<std::uint64_t>(i), salt::kInit}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int j = 0; j < kStateDim; ++j)
      members(i, j) = x0(j) + cfg.init_noise_scale * norm.state_std(j) * gauss(eng);
  }
  return FilterState(Ensemble(std::move(members)));
}

/// Intermediates of one Kalman update, kept for the training backward pass.
struct KalmanCoreCache {
  Eigen::MatrixXd HtA;  // centered predicted observations (E x 7)
  Eigen::MatrixXd A;    // centered predicted members (E x 7)
  Eigen::MatrixXd D;    // per-member innovations Ytilde - HtX (E x 7)
  Matrix7 C = Matrix7::Zero();  // cross-covariance A' HtA / (E-1)
  Eigen::LLT<Matrix7> llt;      // factorization of S at the applied jitter
};

struct KalmanCoreResult {
  Eigen::MatrixXd members;  // updated ensemble (E x 7)
  UpdateDiagnostics diagnostics;
};

/// The update algebra on prepared matrices (members as rows):
///   HtA = HtX - mean(HtX)
///   S   = HtA' HtA / (E-1) + diag(r) + jitter * I
///   A   = X - mean(X)
///   K   = [A' HtA / (E-1)] S^{-1}
///   X'  = X + (Ytilde - HtX) K'
/// If the Cholesky factorization of S fails, the jitter escalates
/// (base -> 1e-4 -> 1e-2) before giving up with FilterDivergence.
inline KalmanCoreResult kalman_update_core(const Eigen::MatrixXd& X_pred,
                                           const Eigen::MatrixXd& HtX,
                                           const Eigen::MatrixXd& Ytilde,
                                           const Vector7& noise_diag, double jitter,
                                           KalmanCoreCache* cache = nullptr) {
  const long e = X_pred.rows();
  if (e < 2) throw InvalidArgument("kalman update needs at least 2 members");
  if (HtX.rows() != e || Ytilde.rows() != e || X_pred.cols() != kStateDim ||
      HtX.cols() != kStateDim || Ytilde.cols() != kStateDim)
    throw InvalidArgument("kalman update: matrix shape mismatch");
  if (!X_pred.allFinite() || !HtX.allFinite() || !Ytilde.allFinite() || !noise_diag.allFinite())
    throw FilterDivergence("kalman update received non-finite inputs");
  if ((noise_diag.array() <= 0.0).any())
    throw InvalidArgument("observation noise diagonal must be strictly positive");

  const double denom = static_cast<double>(e - 1);
  const Eigen::MatrixXd HtA = HtX.rowwise() - HtX.colwise().mean();
  const Matrix7 S_base = (HtA.transpose() * HtA) / denom +
                         Eigen::DiagonalMatrix<double, kStateDim>(noise_diag).toDenseMatrix();

  Eigen::LLT<Matrix7> llt;
  double applied = jitter;
  Matrix7 S;
  const double ladder[] = {jitter, 1e-4, 1e-2};
  bool ok = false;
  for (double j : ladder) {
    if (j < jitter) continue;
    applied = j;
    S = S_base + j * Matrix7::Identity();
    llt.compute(S);
    if (llt.info() == Eigen::Success && S.allFinite()) {
      ok = true;
      break;
    }
  }
  if (!ok)
    throw FilterDivergence("innovation covariance not positive definite at jitter 1e-2");

  const Eigen::MatrixXd A = X_pred.rowwise() - X_pred.colwise().mean();
  const Matrix7 C = (A.transpose() * HtA) / denom;
  const Matrix7 K = llt.solve(C.transpose()).transpose();  // K = C S^{-1}, S symmetric
  const Eigen::MatrixXd D = Ytilde - HtX;

  KalmanCoreResult out{X_pred + D * K.transpose(), {}};
  out.diagnostics.innovation_cov = S;
  out.diagnostics.kalman_gain = K;
  out.diagnostics.predicted_obs_mean = HtX.colwise().mean().transpose();
  out.diagnostics.noise_diag = noise_diag;
  out.diagnostics.applied_jitter = applied;
  if (cache) {
    cache->HtA = HtA;
    cache->A = A;
    cache->D = D;
    cache->C = C;
    cache->llt = llt;
  }
  return out;
}

/// Per-member seed for one purpose at one step.
inline std::uint64_t member_seed(const FilterConfig& cfg, long step, int member,
                                 std::uint64_t purpose) {
  return derive_seed({cfg.seed, static_cast<std::uint64_t>(step),
                      static_cast<std::uint64_t>(member), purpose});
}

inline std::vector<std::uint64_t> member_seeds(const FilterConfig& cfg, long step, int count,
                                               std::uint64_t purpose) {
  std::vector<std::uint64_t> seeds(count);
  for (int i = 0; i < count; ++i) seeds[i] = member_seed(cfg, step, i, purpose);
  return seeds;
}

/// Forecast: every member takes one stochastic transition sample.  Process
/// noise enters only through the transition model's dropout.  Leaves
/// step_index unchanged; update()/skip_update() completes the step.
inline FilterState predict(const FilterState& fs, const Action& action, SamplingFrequency f,
                           const ModelBundle& models, const FilterConfig& cfg) {
  cfg.validate();
  if (fs.awaiting_update)
    throw StateError("predict called twice without update or skip_update in between");
  if (fs.ensemble.size() != cfg.ensemble_size)
    throw InvalidArgument("filter state ensemble size does not match config");

  const auto seeds = member_seeds(cfg, fs.step_index, fs.ensemble.size(), salt::kTransition);
  Eigen::MatrixXd propagated = transition_ensemble(models, fs.ensemble.members(), action, f,
                                                   ForwardMode::stochastic, seeds);
  if (!propagated.allFinite())
    throw FilterDivergence("transition produced non-finite ensemble members");

  FilterState out = fs;
  out.ensemble = Ensemble(std::move(propagated));
  out.predicted_mean = ensemble_mean(out.ensemble);
  out.awaiting_update = true;
  return out;
}

/// Measurement update: maps members to predicted observations, draws one
/// sensor sample per member from the raw frame, and applies the Kalman
/// update.  Completes the step (step_index advances).
inline std::pair<FilterState, UpdateDiagnostics> update(const FilterState& fs,
                                                        const RawObservation& raw,
                                                        const PlacementSet& placement,
                                                        const ModelBundle& models,
                                                        const FilterConfig& cfg) {
  cfg.validate();
  if (!fs.awaiting_update) throw StateError("update called before predict");

  const Eigen::MatrixXd HtX = observe_ensemble(models, fs.ensemble.members());
  const auto seeds = member_seeds(cfg, fs.step_index, fs.ensemble.size(), salt::kSensor);
  const Eigen::MatrixXd Ytilde =
      sense_ensemble(models, raw, placement, ForwardMode::stochastic, seeds);
  const Vector7 ybar = Ytilde.colwise().mean().transpose();
  const Vector7 r = noise_diag(models, ybar);

  KalmanCoreResult core = kalman_update_core(fs.ensemble.members(), HtX, Ytilde, r, cfg.jitter);

  FilterState out = fs;
  out.ensemble = Ensemble(std::move(core.members));
  out.updated_mean = ensemble_mean(out.ensemble);
  out.last_innovation = (Ytilde - HtX).colwise().mean().transpose();
  out.step_index += 1;
  out.awaiting_update = false;
  return {std::move(out), core.diagnostics};
}

/// Missing-observation step: the forecast is adopted as the posterior
/// unchanged and the step completes.  Keeps per-step seeds advancing so
/// masked frames do not replay the previous frame's dropout.
inline FilterState skip_update(const FilterState& fs) {
  if (!fs.awaiting_update) throw StateError("skip_update called before predict");
  FilterState out = fs;
  out.updated_mean = out.predicted_mean;
  out.last_innovation = Vector7::Zero();
  out.step_index += 1;
  out.awaiting_update = false;
  return out;
}

/// One row of a filtering trajectory.
struct StepRecord {
  long step = 0;
  double timestamp = 0.0;
  Vector7 predicted_mean = Vector7::Zero();
  Vector7 updated_mean = Vector7::Zero();
  Vector7 ensemble_std = Vector7::Zero();
  Vector7 innovation = Vector7::Zero();
  bool updated = true;  // false on missing-observation steps
};

/// Filters a frame sequence: predict on every frame, update on frames with
/// observations, skip on frames flagged missing.  Pure function of
/// (initial state, frames, models, config seed).
inline std::vector<StepRecord> run_sequence(FilterState fs, const std::vector<Frame>& frames,
                                            const PlacementSet& placement, SamplingFrequency f,
                                            const ModelBundle& models, const FilterConfig& cfg) {
  if (frames.empty()) throw InvalidArgument("run_sequence needs at least one frame");
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (!(frames[i].timestamp > frames[i - 1].timestamp))
      throw InvalidArgument("frame timestamps must be strictly increasing");

  std::vector<StepRecord> records;
  records.reserve(frames.size());
  for (const Frame& frame : frames) {
    fs = predict(fs, frame.action, f, models, cfg);
    StepRecord rec;
    rec.step = fs.step_index;
    rec.timestamp = frame.timestamp;
    rec.predicted_mean = fs.predicted_mean.to_vector();
    if (frame.missing) {
      fs = skip_update(fs);
      rec.updated = false;
    } else {
      auto [next, diag] = update(fs, frame.obs, placement, models, cfg);
      fs = std::move(next);
    }
    rec.updated_mean = fs.updated_mean.to_vector();
    rec.ensemble_std = ensemble_std(fs.ensemble);
    rec.innovation = fs.last_innovation;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace denkf
