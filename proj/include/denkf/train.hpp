#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "denkf/errors.hpp"
#include "denkf/filter.hpp"
#include "denkf/models.hpp"
#include "denkf/normalize.hpp"
#include "denkf/rng.hpp"
#include "denkf/simulator.hpp"
#include "denkf/types.hpp"

namespace denkf {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double lr = 1e-5;
  int ensemble_size = 32;
  int bptt_window = 1;  // filter steps unrolled per training sample
  double lambda_e2e = 1.0;
  double lambda_f = 1.0;
  double lambda_s = 1.0;
  std::uint64_t seed = 0;
  double init_noise_scale = 0.1;  // training ensemble spread around the truth, in std units
  double jitter = 1e-6;
  bool stop_gain_gradient = false;  // treat the Kalman gain as a constant in backward
  bool refit_normalizer = true;     // fit z-score stats on the given datasets before training

  void validate() const {
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(lr >= 0.0)) throw InvalidArgument("lr must be >= 0");
    if (ensemble_size < 2) throw InvalidArgument("ensemble_size must be >= 2");
    if (bptt_window < 1) throw InvalidArgument("bptt_window must be >= 1");
    if (!(lambda_e2e >= 0.0 && lambda_f >= 0.0 && lambda_s >= 0.0))
      throw InvalidArgument("loss weights must be >= 0");
    if (!(init_noise_scale >= 0.0)) throw InvalidArgument("init_noise_scale must be >= 0");
    if (!(jitter > 0.0)) throw InvalidArgument("jitter must be positive");
  }
};

/// Parameter gradients for the whole bundle.
struct BundleGradients {
  Gradients encoder, head, observation, sensor, noise;

  static BundleGradients zeros_like(const ModelBundle& b) {
    return {Gradients::zeros_like(b.transition.encoder), Gradients::zeros_like(b.transition.head),
            Gradients::zeros_like(b.observation.net), Gradients::zeros_like(b.sensor.net),
            Gradients::zeros_like(b.noise.net)};
  }

  void accumulate(const BundleGradients& o, double scale = 1.0) {
    encoder.accumulate(o.encoder, scale);
    head.accumulate(o.head, scale);
    observation.accumulate(o.observation, scale);
    sensor.accumulate(o.sensor, scale);
    noise.accumulate(o.noise, scale);
  }

  void scale(double s) {
    encoder.scale(s);
    head.scale(s);
    observation.scale(s);
    sensor.scale(s);
    noise.scale(s);
  }

  bool all_finite() const {
    return encoder.all_finite() && head.all_finite() && observation.all_finite() &&
           sensor.all_finite() && noise.all_finite();
  }
};

/// Adam over all five networks; step() is one optimizer step per batch.
class BundleOptimizer {
 public:
  explicit BundleOptimizer(const ModelBundle& b, AdamConfig cfg = {})
      : encoder_(b.transition.encoder, cfg),
        head_(b.transition.head, cfg),
        observation_(b.observation.net, cfg),
        sensor_(b.sensor.net, cfg),
        noise_(b.noise.net, cfg) {}

  ModelBundle step(const ModelBundle& b, const BundleGradients& g, double lr) {
    ModelBundle out = b;
    out.transition.encoder = encoder_.step(b.transition.encoder, g.encoder, lr);
    out.transition.head = head_.step(b.transition.head, g.head, lr);
    out.observation.net = observation_.step(b.observation.net, g.observation, lr);
    out.sensor.net = sensor_.step(b.sensor.net, g.sensor, lr);
    out.noise.net = noise_.step(b.noise.net, g.noise, lr);
    return out;
  }

 private:
  AdamOptimizer encoder_, head_, observation_, sensor_, noise_;
};

namespace traindetail {

/// Forward intermediates of one differentiable filter step.
struct StepTape {
  Eigen::MatrixXd X_prev, X_pred, Ytilde, HtX, X_new;
  GradientTape tape_enc, tape_head, tape_obs, tape_sensor, tape_noise;
  KalmanCoreCache kalman;
  Matrix7 K = Matrix7::Zero();
  Eigen::RowVectorXd r_raw;  // noise-net output before softplus (1 x 7)
  Vector7 ybar = Vector7::Zero();
};

inline std::uint64_t step_member_seed(std::uint64_t step_seed, int member,
                                      std::uint64_t purpose) {
  return derive_seed({step_seed, static_cast<std::uint64_t>(member), purpose});
}

/// One predict+update with every intermediate recorded.  Mirrors the
/// inference path exactly: same assembly helpers, same core algebra, same
/// per-member seeding discipline.
inline StepTape forward_train_step(const ModelBundle& b, const Eigen::MatrixXd& X_prev,
                                   const Frame& frame, const PlacementSet& placement,
                                   SamplingFrequency f, const TrainConfig& cfg,
                                   std::uint64_t step_seed) {
  const long e = X_prev.rows();
  StepTape t;
  t.X_prev = X_prev;

  std::vector<std::uint64_t> enc_seeds(e), hd_seeds(e), sen_seeds(e);
  for (long i = 0; i < e; ++i) {
    const std::uint64_t ms = step_member_seed(step_seed, int(i), salt::kTransition);
    enc_seeds[i] = encoder_seed(ms);
    hd_seeds[i] = head_seed(ms);
    sen_seeds[i] = step_member_seed(step_seed, int(i), salt::kSensor);
  }

  // Forecast through the stochastic transition model.
  const Eigen::MatrixXd enc_in = assemble_transition_input(b, X_prev, frame.action);
  auto [latent, tape_enc] =
      forward_batch(b.transition.encoder, enc_in, ForwardMode::stochastic, enc_seeds, true);
  t.tape_enc = std::move(tape_enc);
  if (b.variant == Variant::pe_te)
    latent.rowwise() += embed_frequency(f, b.embedding).transpose();
  auto [delta, tape_head] =
      forward_batch(b.transition.head, latent, ForwardMode::stochastic, hd_seeds, true);
  t.tape_head = std::move(tape_head);
  t.X_pred = X_prev + (delta.array().rowwise() * b.normalizer.state_std.transpose().array()).matrix();

  // Predicted observations (deterministic) and sensor samples (stochastic).
  auto [HtX, tape_obs] = forward_batch(
      b.observation.net, zscore_state_rows(b.normalizer, t.X_pred), ForwardMode::deterministic,
      {}, true);
  t.HtX = std::move(HtX);
  t.tape_obs = std::move(tape_obs);

  const Eigen::VectorXd sens_in = assemble_sensor_input(b, frame.obs, placement);
  auto [Ytilde, tape_sensor] = forward_batch(b.sensor.net, sens_in.transpose().replicate(e, 1),
                                             ForwardMode::stochastic, sen_seeds, true);
  t.Ytilde = std::move(Ytilde);
  t.tape_sensor = std::move(tape_sensor);
  t.ybar = t.Ytilde.colwise().mean().transpose();

  // Learned observation noise from the mean sensor sample.
  auto [r_raw, tape_noise] = forward_batch(b.noise.net, t.ybar.transpose(),
                                           ForwardMode::deterministic, {}, true);
  t.r_raw = r_raw.row(0);
  t.tape_noise = std::move(tape_noise);
  Vector7 r;
  for (int i = 0; i < kStateDim; ++i) r(i) = softplus(t.r_raw(i)) + kNoiseFloor;

  KalmanCoreResult core =
      kalman_update_core(t.X_pred, t.HtX, t.Ytilde, r, cfg.jitter, &t.kalman);
  t.K = core.diagnostics.kalman_gain;
  t.X_new = std::move(core.members);
  return t;
}

struct StepLosses {
  double e2e = 0.0;
  double forward = 0.0;
  double sensor = 0.0;
  double total(const TrainConfig& cfg) const {
    return cfg.lambda_e2e * e2e + cfg.lambda_f * forward + cfg.lambda_s * sensor;
  }
};

/// MSE losses in normalized units, each a mean over the 7 state components.
inline StepLosses step_losses(const ModelBundle& b, const StepTape& t, const RobotState& truth) {
  const Vector7 zt = b.normalizer.zscore_state(truth.to_vector());
  const Vector7 zpost = b.normalizer.zscore_state(t.X_new.colwise().mean().transpose());
  const Vector7 zpred = b.normalizer.zscore_state(t.X_pred.colwise().mean().transpose());
  StepLosses l;
  l.e2e = (zpost - zt).squaredNorm() / kStateDim;
  l.forward = (zpred - zt).squaredNorm() / kStateDim;
  l.sensor = (t.ybar - zt).squaredNorm() / kStateDim;
  return l;
}

/// Reverse pass of one filter step.  `dX_new` carries the gradient flowing
/// into this step's posterior from later steps; returns the gradient with
/// respect to this step's input ensemble.  The Kalman algebra backward uses
/// the Cholesky-solve adjoint:
///   K = C S^{-1}:  dC = dK S^{-1},  dS = -S^{-1} C' dK S^{-1}
///   S = HtA' HtA/(E-1) + diag(r):  dHtA += HtA (dS + dS')/(E-1),  dr = diag(dS)
///   C = A' HtA/(E-1):  dA += HtA dC'/(E-1),  dHtA += A dC/(E-1)
/// followed by the centering and network backward passes.
inline Eigen::MatrixXd backward_train_step(const ModelBundle& b, StepTape& t,
                                           const RobotState& truth, const TrainConfig& cfg,
                                           Eigen::MatrixXd dX_new, BundleGradients& grads) {
  const long e = t.X_prev.rows();
  const double denom = double(e - 1);
  const double inv_e = 1.0 / double(e);
  const Eigen::Array<double, kStateDim, 1> var =
      b.normalizer.state_std.array() * b.normalizer.state_std.array();
  const Vector7 zt = b.normalizer.zscore_state(truth.to_vector());

  // d(total)/d(posterior mean) from the end-to-end loss, spread over members.
  {
    const Vector7 xbar_new = t.X_new.colwise().mean().transpose();
    const Vector7 g_e2e =
        (cfg.lambda_e2e * (2.0 / kStateDim) * (xbar_new - truth.to_vector()).array() / var)
            .matrix();
    dX_new.rowwise() += inv_e * g_e2e.transpose();
  }

  // --- Kalman update backward ---
  Eigen::MatrixXd dX_pred = dX_new;  // X_new = X_pred + D K'
  Eigen::MatrixXd dD = dX_new * t.K;
  Vector7 dr = Vector7::Zero();
  Eigen::MatrixXd dHtA = Eigen::MatrixXd::Zero(e, kStateDim);
  Eigen::MatrixXd dA = Eigen::MatrixXd::Zero(e, kStateDim);
  if (!cfg.stop_gain_gradient) {
    const Matrix7 dK = dX_new.transpose() * t.kalman.D;           // dL/dK
    const Matrix7 dC = t.kalman.llt.solve(dK.transpose()).transpose();  // dK S^{-1}
    const Matrix7 P = t.kalman.llt.solve(t.kalman.C.transpose() * dK);
    const Matrix7 dS = -t.kalman.llt.solve(P.transpose()).transpose();  // -S^{-1}C'dK S^{-1}
    dA = t.kalman.HtA * dC.transpose() / denom;
    dHtA = t.kalman.A * dC / denom + t.kalman.HtA * (dS + dS.transpose()) / denom;
    dr = dS.diagonal();
  }
  Eigen::MatrixXd dYtilde = dD;
  Eigen::MatrixXd dHtX = -dD;
  // Centering backward: d(center(X)) -> dX = dA - mean_row(dA).
  dHtX += dHtA;
  dHtX.rowwise() -= (inv_e * dHtA.colwise().sum());
  dX_pred += dA;
  dX_pred.rowwise() -= (inv_e * dA.colwise().sum());

  // Forward-model loss on the predicted mean.
  {
    const Vector7 xbar_pred = t.X_pred.colwise().mean().transpose();
    const Vector7 g_f =
        (cfg.lambda_f * (2.0 / kStateDim) * (xbar_pred - truth.to_vector()).array() / var)
            .matrix();
    dX_pred.rowwise() += inv_e * g_f.transpose();
  }

  // Observation network backward; its input is the z-scored prediction.
  {
    auto [g_obs, dZ] = backward_batch(b.observation.net, t.tape_obs, dHtX);
    grads.observation.accumulate(g_obs);
    dX_pred += (dZ.array().rowwise() / b.normalizer.state_std.transpose().array()).matrix();
  }

  // Noise network backward (softplus chain), then the sensor-sample mean.
  Eigen::RowVectorXd dybar = Eigen::RowVectorXd::Zero(kStateDim);
  {
    Eigen::RowVectorXd dr_raw(kStateDim);
    for (int i = 0; i < kStateDim; ++i) dr_raw(i) = dr(i) * softplus_derivative(t.r_raw(i));
    auto [g_noise, dyb] = backward_batch(b.noise.net, t.tape_noise, dr_raw);
    grads.noise.accumulate(g_noise);
    dybar += dyb.row(0);
  }
  dybar += (cfg.lambda_s * (2.0 / kStateDim) * (t.ybar - zt)).transpose();
  dYtilde.rowwise() += inv_e * dybar;

  // Sensor network backward (its input is constant w.r.t. parameters).
  {
    auto [g_sensor, d_in] = backward_batch(b.sensor.net, t.tape_sensor, dYtilde);
    grads.sensor.accumulate(g_sensor);
  }

  // Transition backward: X_pred = X_prev + delta .* state_std.
  Eigen::MatrixXd dX_prev = dX_pred;
  {
    const Eigen::MatrixXd dDelta =
        (dX_pred.array().rowwise() * b.normalizer.state_std.transpose().array()).matrix();
    auto [g_head, dLatent] = backward_batch(b.transition.head, t.tape_head, dDelta);
    grads.head.accumulate(g_head);
    auto [g_enc, dTin] = backward_batch(b.transition.encoder, t.tape_enc, dLatent);
    grads.encoder.accumulate(g_enc);
    dX_prev += (dTin.leftCols<kStateDim>().array().rowwise() /
                b.normalizer.state_std.transpose().array())
                   .matrix();
  }
  return dX_prev;
}

/// Truth-centered training ensemble: truth + N(0, (scale * std)^2) per channel.
inline Eigen::MatrixXd make_train_ensemble(const ModelBundle& b, const RobotState& truth,
                                           const TrainConfig& cfg, std::uint64_t sample_seed) {
  Eigen::MatrixXd members(cfg.ensemble_size, kStateDim);
  const Vector7 x0 = truth.to_vector();
  for (int i = 0; i < cfg.ensemble_size; ++i) {
    std::mt19937_64 eng(derive_seed({sample_seed, std::uint64_t(i), salt::kInit}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int j = 0; j < kStateDim; ++j)
      members(i, j) = x0(j) + cfg.init_noise_scale * b.normalizer.state_std(j) * gauss(eng);
  }
  return members;
}

}  // namespace traindetail

/// Loss of one training sample: a bptt_window-step filter rollout from a
/// truth-initialized ensemble, averaged over the window.  Deterministic in
/// (models, dataset, target_frame, cfg, sample_seed) — dropout masks are a
/// pure function of the seeds, which is what makes finite-difference
/// gradient checks exact.
inline double train_sample_loss(const ModelBundle& b, const TrajectoryDataset& ds,
                                int target_frame, const TrainConfig& cfg,
                                std::uint64_t sample_seed) {
  cfg.validate();
  const int w = cfg.bptt_window;
  if (target_frame < 1 || target_frame + w - 1 >= static_cast<int>(ds.frames.size()))
    throw InvalidArgument("target_frame outside trainable range");
  Eigen::MatrixXd X = traindetail::make_train_ensemble(
      b, ds.frames[target_frame - 1].truth, cfg, sample_seed);
  double total = 0.0;
  for (int k = 0; k < w; ++k) {
    const Frame& frame = ds.frames[target_frame + k];
    traindetail::StepTape t = traindetail::forward_train_step(
        b, X, frame, ds.placement, ds.frequency, cfg, derive_seed({sample_seed, std::uint64_t(k)}));
    total += traindetail::step_losses(b, t, frame.truth).total(cfg);
    X = t.X_new;
  }
  return total / w;
}

/// Loss and parameter gradients of one training sample (reverse-mode through
/// the whole window, including the Kalman algebra).
inline std::pair<double, BundleGradients> train_sample_gradients(const ModelBundle& b,
                                                                 const TrajectoryDataset& ds,
                                                                 int target_frame,
                                                                 const TrainConfig& cfg,
                                                                 std::uint64_t sample_seed) {
  cfg.validate();
  const int w = cfg.bptt_window;
  if (target_frame < 1 || target_frame + w - 1 >= static_cast<int>(ds.frames.size()))
    throw InvalidArgument("target_frame outside trainable range");

  Eigen::MatrixXd X = traindetail::make_train_ensemble(
      b, ds.frames[target_frame - 1].truth, cfg, sample_seed);
  std::vector<traindetail::StepTape> tapes;
  tapes.reserve(w);
  double total = 0.0;
  for (int k = 0; k < w; ++k) {
    const Frame& frame = ds.frames[target_frame + k];
    tapes.push_back(traindetail::forward_train_step(
        b, X, frame, ds.placement, ds.frequency, cfg, derive_seed({sample_seed, std::uint64_t(k)})));
    total += traindetail::step_losses(b, tapes.back(), frame.truth).total(cfg);
    X = tapes.back().X_new;
  }

  BundleGradients grads = BundleGradients::zeros_like(b);
  Eigen::MatrixXd dX_next = Eigen::MatrixXd::Zero(cfg.ensemble_size, kStateDim);
  for (int k = w - 1; k >= 0; --k)
    dX_next = traindetail::backward_train_step(b, tapes[k], ds.frames[target_frame + k].truth,
                                               cfg, std::move(dX_next), grads);
  grads.scale(1.0 / w);
  return {total / w, std::move(grads)};
}

struct TrainResult {
  ModelBundle models;              // trained, or last-known-good on abort
  std::vector<double> loss_curve;  // mean training loss per completed epoch
  int epochs_completed = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// End-to-end training through the filter recursion.  One optimizer step
/// per batch; samples are (dataset, frame) pairs shuffled per epoch with a
/// seeded engine, so the whole run is deterministic in cfg.seed.  A
/// non-finite loss or gradient aborts and returns the parameters as of the
/// last completed epoch.
inline TrainResult train(ModelBundle models, const std::vector<TrajectoryDataset>& datasets,
                         const TrainConfig& cfg,
                         const std::function<void(int, double)>& epoch_callback = {}) {
  cfg.validate();
  models.validate();
  if (datasets.empty()) throw InvalidArgument("train needs at least one dataset");
  for (const TrajectoryDataset& ds : datasets) ds.validate();

  if (cfg.refit_normalizer) {
    long total_frames = 0;
    for (const auto& ds : datasets) total_frames += static_cast<long>(ds.frames.size());
    Eigen::MatrixXd states(total_frames, kStateDim);
    Eigen::MatrixXd actions(total_frames, kActionDim);
    Eigen::MatrixXd observations(total_frames, kObsDim);
    long r = 0;
    for (const auto& ds : datasets)
      for (const Frame& f : ds.frames) {
        states.row(r) = f.truth.to_vector().transpose();
        actions.row(r) = f.action.pressures.transpose();
        observations.row(r) = f.obs.imu.transpose();
        ++r;
      }
    models.normalizer = Normalizer::fit(states, actions, observations);
  }

  struct SampleRef {
    int dataset;
    int target_frame;
  };
  std::vector<SampleRef> samples;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const int n = static_cast<int>(datasets[d].frames.size());
    for (int tf = 1; tf + cfg.bptt_window - 1 < n; ++tf)
      samples.push_back({static_cast<int>(d), tf});
  }
  if (samples.empty())
    throw InvalidArgument("no trainable samples (datasets shorter than bptt_window + 1)");

  TrainResult result;
  result.models = models;  // last-known-good
  BundleOptimizer optimizer(models);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_eng(derive_seed({cfg.seed, std::uint64_t(epoch), salt::kTrain}));
    std::shuffle(order.begin(), order.end(), shuffle_eng);

    double epoch_loss = 0.0;
    long counted = 0;
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += cfg.batch_size) {
      const std::size_t batch_end =
          std::min(order.size(), batch_start + static_cast<std::size_t>(cfg.batch_size));
      BundleGradients batch_grads = BundleGradients::zeros_like(models);
      const double inv_batch = 1.0 / double(batch_end - batch_start);

      for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
        const SampleRef& s = samples[order[bi]];
        const std::uint64_t sample_seed =
            derive_seed({cfg.seed, std::uint64_t(epoch), std::uint64_t(s.dataset),
                         std::uint64_t(s.target_frame), salt::kTrain});
        double loss;
        BundleGradients g = BundleGradients::zeros_like(models);
        try {
          std::tie(loss, g) = train_sample_gradients(models, datasets[s.dataset],
                                                     s.target_frame, cfg, sample_seed);
        } catch (const FilterDivergence& e) {
          result.aborted = true;
          result.abort_reason = e.what();
          return result;
        }
        if (!std::isfinite(loss) || !g.all_finite()) {
          result.aborted = true;
          result.abort_reason = "non-finite loss or gradient at epoch " +
                                std::to_string(epoch + 1);
          return result;
        }
        epoch_loss += loss;
        ++counted;
        batch_grads.accumulate(g, inv_batch);
      }

      try {
        models = optimizer.step(models, batch_grads, cfg.lr);
      } catch (const TrainingError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        return result;
      }
    }

    epoch_loss /= double(counted);
    if (!std::isfinite(epoch_loss)) {
      result.aborted = true;
      result.abort_reason = "non-finite epoch loss at epoch " + std::to_string(epoch + 1);
      return result;
    }
    result.loss_curve.push_back(epoch_loss);
    result.models = models;  // epoch completed: new last-known-good
    result.epochs_completed = epoch + 1;
    if (epoch_callback) epoch_callback(epoch + 1, epoch_loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ConditionMetrics {
  std::string placement;
  int frequency_hz = 0;
  double mae_position = 0.0;
  double rmse_position = 0.0;
  double mae_quaternion = 0.0;
  long steps = 0;
};

/// Position errors are Euclidean distances in mm; the quaternion error is
/// the mean absolute difference over the 4 components (dimensionless).
struct EvalReport {
  double mae_position = 0.0;
  double rmse_position = 0.0;
  double mae_quaternion = 0.0;
  double wall_clock_per_step = 0.0;  // seconds
  std::vector<ConditionMetrics> per_condition;

  void validate() const {
    if (mae_position < 0 || rmse_position < 0 || mae_quaternion < 0 || wall_clock_per_step < 0)
      throw InvalidArgument("EvalReport metrics must be nonnegative");
  }
};

/// Runs the filter over the dataset (ensemble initialized at the first
/// frame's ground truth, frames after it filtered) and scores updated_mean
/// against ground truth.
inline EvalReport evaluate(const ModelBundle& models, const TrajectoryDataset& ds,
                           const FilterConfig& cfg) {
  models.validate();
  ds.validate();
  cfg.validate();
  if (ds.frames.size() < 2) throw InvalidArgument("evaluate needs at least 2 frames");

  FilterState fs = init_filter(ds.frames[0].truth, cfg, models.normalizer);
  const std::vector<Frame> rest(ds.frames.begin() + 1, ds.frames.end());

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<StepRecord> records =
      run_sequence(std::move(fs), rest, ds.placement, ds.frequency, models, cfg);
  const auto t1 = std::chrono::steady_clock::now();

  double abs_sum = 0.0, sq_sum = 0.0, quat_sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Vector7 est = records[i].updated_mean;
    const Vector7 truth = rest[i].truth.to_vector();
    const double pos_err = (est.head<3>() - truth.head<3>()).norm();
    abs_sum += pos_err;
    sq_sum += pos_err * pos_err;
    quat_sum += (est.tail<4>() - truth.tail<4>()).cwiseAbs().mean();
  }
  const double n = double(records.size());

  EvalReport report;
  report.mae_position = abs_sum / n;
  report.rmse_position = std::sqrt(sq_sum / n);
  report.mae_quaternion = quat_sum / n;
  report.wall_clock_per_step =
      std::chrono::duration<double>(t1 - t0).count() / n;
  report.per_condition.push_back({ds.placement.to_string(), ds.frequency.hz(),
                                  report.mae_position, report.rmse_position,
                                  report.mae_quaternion, static_cast<long>(records.size())});
  report.validate();
  return report;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct CrossValReport {
  std::vector<EvalReport> fold_reports;
  double mae_position_mean = 0.0, mae_position_stderr = 0.0;
  double rmse_position_mean = 0.0, rmse_position_stderr = 0.0;
  double mae_quaternion_mean = 0.0, mae_quaternion_stderr = 0.0;

  /// "mean±stderr" with 4/3 decimals, e.g. "25.7765±7.827".
  static std::string format_mean_stderr(double mean, double stderr_) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f±%.3f", mean, stderr_);
    return buf;
  }
  std::string format_position() const {
    return format_mean_stderr(mae_position_mean, mae_position_stderr);
  }
  std::string format_quaternion() const {
    return format_mean_stderr(mae_quaternion_mean, mae_quaternion_stderr);
  }
};

/// K-fold cross-validation over dataset segments: contiguous blocks (no
/// shuffling across time), each fold trains a fresh bundle from the factory
/// on the remaining segments and evaluates on the held-out block.
inline CrossValReport crossvalidate(
    const std::function<ModelBundle(std::uint64_t fold_seed)>& factory,
    const std::vector<TrajectoryDataset>& datasets, int folds, const TrainConfig& train_cfg,
    const FilterConfig& filter_cfg) {
  if (folds < 2) throw InvalidArgument("need at least 2 folds");
  if (static_cast<int>(datasets.size()) < folds)
    throw InvalidArgument("too few dataset segments (" + std::to_string(datasets.size()) +
                          ") for " + std::to_string(folds) + " folds");

  const std::size_t n = datasets.size();
  CrossValReport report;
  for (int fold = 0; fold < folds; ++fold) {
    const std::size_t lo = fold * n / folds;
    const std::size_t hi = (fold + 1) * n / folds;
    std::vector<TrajectoryDataset> train_sets, held_out;
    for (std::size_t i = 0; i < n; ++i)
      (i >= lo && i < hi ? held_out : train_sets).push_back(datasets[i]);

    ModelBundle fold_models = factory(derive_seed({train_cfg.seed, std::uint64_t(fold)}));
    TrainResult tr = train(std::move(fold_models), train_sets, train_cfg);
    if (tr.aborted)
      throw TrainingError("fold " + std::to_string(fold + 1) +
                          " training aborted: " + tr.abort_reason);

    EvalReport fold_report;
    double steps_total = 0.0;
    for (const TrajectoryDataset& ds : held_out) {
      const EvalReport r = evaluate(tr.models, ds, filter_cfg);
      const double w = double(r.per_condition.front().steps);
      fold_report.mae_position += w * r.mae_position;
      fold_report.rmse_position += w * r.rmse_position;
      fold_report.mae_quaternion += w * r.mae_quaternion;
      fold_report.wall_clock_per_step += w * r.wall_clock_per_step;
      fold_report.per_condition.push_back(r.per_condition.front());
      steps_total += w;
    }
    fold_report.mae_position /= steps_total;
    fold_report.rmse_position /= steps_total;
    fold_report.mae_quaternion /= steps_total;
    fold_report.wall_clock_per_step /= steps_total;
    report.fold_reports.push_back(std::move(fold_report));
  }

  const auto mean_stderr = [&](const std::function<double(const EvalReport&)>& metric,
                               double& mean, double& se) {
    const double k = double(report.fold_reports.size());
    mean = 0.0;
    for (const auto& r : report.fold_reports) mean += metric(r);
    mean /= k;
    double var = 0.0;
    for (const auto& r : report.fold_reports) {
      const double d = metric(r) - mean;
      var += d * d;
    }
    var = k > 1 ? var / (k - 1) : 0.0;
    se = std::sqrt(var / k);
  };
  mean_stderr([](const EvalReport& r) { return r.mae_position; }, report.mae_position_mean,
              report.mae_position_stderr);
  mean_stderr([](const EvalReport& r) { return r.rmse_position; }, report.rmse_position_mean,
              report.rmse_position_stderr);
  mean_stderr([](const EvalReport& r) { return r.mae_quaternion; }, report.mae_quaternion_mean,
              report.mae_quaternion_stderr);
  return report;
}

}  // namespace denkf
