#include <catch_amalgamated.hpp>

#include <random>

#include "denkf/denkf.hpp"
#include "helpers.hpp"

using namespace denkf;

namespace {

FilterConfig small_cfg(int e = 8, std::uint64_t seed = 5) {
  FilterConfig cfg;
  cfg.ensemble_size = e;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("filter config validation", "[filter]") {
  FilterConfig cfg;
  cfg.ensemble_size = 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = FilterConfig{};
  cfg.jitter = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("ensemble initialization spreads members around the estimate", "[filter]") {
  const RobotState truth = testutil::rand_state(1);
  Normalizer norm;
  norm.state_std.setConstant(4.0);
  FilterConfig cfg = small_cfg(64, 9);
  const FilterState fs = init_filter(truth, cfg, norm);
  REQUIRE(fs.ensemble.size() == 64);
  CHECK(fs.step_index == 0);
  CHECK_FALSE(fs.awaiting_update);

  // mean near truth, spread near init_noise_scale * state_std
  const Vector7 mean = ensemble_mean_raw(fs.ensemble);
  const Vector7 sd = ensemble_std(fs.ensemble);
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(mean(j) - truth.to_vector()(j)) < 0.4);  // 0.4 std of the mean estimator
    CHECK(sd(j) == Catch::Approx(0.1 * 4.0).epsilon(0.5));
  }

  // bit-reproducible in the seed
  const FilterState again = init_filter(truth, cfg, norm);
  CHECK(again.ensemble.members() == fs.ensemble.members());
  cfg.seed = 10;
  CHECK(init_filter(truth, cfg, norm).ensemble.members() != fs.ensemble.members());
}

TEST_CASE("kalman update reduces a two-member toy case exactly", "[filter]") {
  // Two members straddling the observation in one channel: with unit
  // HtA'HtA the gain is 1 and both members land on the observation.
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, kStateDim);
  X(0, 0) = 1.0;
  X(1, 0) = 3.0;
  Eigen::MatrixXd Ytilde = Eigen::MatrixXd::Zero(2, kStateDim);
  Ytilde(0, 0) = 2.0;
  Ytilde(1, 0) = 2.0;
  const Vector7 r = Vector7::Constant(1e-12);

  const KalmanCoreResult res = kalman_update_core(X, X, Ytilde, r, 1e-12);
  CHECK(res.members(0, 0) == Catch::Approx(2.0).margin(1e-9));
  CHECK(res.members(1, 0) == Catch::Approx(2.0).margin(1e-9));
  // untouched channels keep their (identical) values
  CHECK(res.members.col(1).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-12));
  // S = spread 2 + r + jitter in the informative channel
  CHECK(res.diagnostics.innovation_cov(0, 0) == Catch::Approx(2.0).margin(1e-9));
  CHECK(res.diagnostics.kalman_gain(0, 0) == Catch::Approx(1.0).margin(1e-9));
  CHECK(res.diagnostics.applied_jitter == 1e-12);
}

TEST_CASE("innovation covariance is symmetric positive definite", "[filter]") {
  std::mt19937_64 eng(33);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd X(16, kStateDim), H(16, kStateDim), Y(16, kStateDim);
    for (long i = 0; i < 16; ++i)
      for (int j = 0; j < kStateDim; ++j) {
        X(i, j) = gauss(eng);
        H(i, j) = gauss(eng);
        Y(i, j) = gauss(eng);
      }
    const Vector7 r = Vector7::Constant(0.01);
    const KalmanCoreResult res = kalman_update_core(X, H, Y, r, 1e-6);
    const Matrix7& S = res.diagnostics.innovation_cov;
    CHECK((S - S.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::SelfAdjointEigenSolver<Matrix7> es(S);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK(res.members.allFinite());
  }
}

TEST_CASE("degenerate ensembles update through the noise diagonal alone", "[filter]") {
  // Identical members: zero spread, so S = diag(r) + jitter and the gain
  // vanishes; members must pass through unchanged.
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, kStateDim);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(4, kStateDim, 2.0);
  const KalmanCoreResult res = kalman_update_core(X, X, Y, Vector7::Constant(0.5), 1e-6);
  CHECK((res.members - X).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(res.diagnostics.kalman_gain.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kalman core rejects invalid inputs", "[filter]") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, kStateDim);
  CHECK_THROWS_AS(kalman_update_core(X.topRows(1), X.topRows(1), X.topRows(1),
                                     Vector7::Constant(0.1), 1e-6),
                  InvalidArgument);
  CHECK_THROWS_AS(kalman_update_core(X, X, X, Vector7::Zero(), 1e-6), InvalidArgument);
  Eigen::MatrixXd bad = X;
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(kalman_update_core(bad, X, X, Vector7::Constant(0.1), 1e-6), FilterDivergence);
}

TEST_CASE("predict/update alternate and advance the step counter", "[filter]") {
  const ModelBundle models = testutil::small_bundle(Variant::fix, 2, 0.1);
  const FilterConfig cfg = small_cfg();
  const auto f = SamplingFrequency::from_hz(50);
  const Action a = testutil::rand_action(3);
  const RawObservation obs = testutil::rand_obs(4);
  const PlacementSet& placement = canonical_placements()[0];

  FilterState fs = init_filter(testutil::rand_state(2), cfg);
  CHECK_THROWS_AS(update(fs, obs, placement, models, cfg), StateError);
  CHECK_THROWS_AS(skip_update(fs), StateError);

  FilterState predicted = predict(fs, a, f, models, cfg);
  CHECK(predicted.awaiting_update);
  CHECK(predicted.step_index == 0);  // the step completes at update time
  CHECK_THROWS_AS(predict(predicted, a, f, models, cfg), StateError);

  auto [updated, diag] = update(predicted, obs, placement, models, cfg);
  CHECK(updated.step_index == 1);
  CHECK_FALSE(updated.awaiting_update);
  CHECK(diag.applied_jitter >= cfg.jitter);
  CHECK((diag.noise_diag.array() > 0.0).all());

  // posterior mean quaternion stays unit
  CHECK(updated.updated_mean.orientation.norm() == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("skipping an update adopts the forecast and advances seeds", "[filter]") {
  const ModelBundle models = testutil::small_bundle(Variant::fix, 2, 0.2);
  const FilterConfig cfg = small_cfg();
  const auto f = SamplingFrequency::from_hz(50);
  const Action a = testutil::rand_action(5);

  FilterState fs = init_filter(testutil::rand_state(6), cfg);
  FilterState p1 = predict(fs, a, f, models, cfg);
  FilterState s1 = skip_update(p1);
  CHECK(s1.step_index == 1);
  CHECK(s1.updated_mean.to_vector() == s1.predicted_mean.to_vector());
  CHECK(s1.last_innovation == Vector7::Zero());

  // The next predict must draw fresh dropout masks, not replay step 0's.
  FilterState p2 = predict(s1, a, f, models, cfg);
  CHECK(p2.ensemble.members() != p1.ensemble.members());
}

TEST_CASE("filtering a frame sequence is deterministic", "[filter]") {
  const ModelBundle models = testutil::small_bundle(Variant::fix, 7, 0.1);
  const FilterConfig cfg = small_cfg(6, 77);
  const TrajectoryDataset ds = testutil::tiny_dataset(0.5, 50, 21);
  const std::vector<Frame> rest(ds.frames.begin() + 1, ds.frames.end());

  const auto run = [&] {
    return run_sequence(init_filter(ds.frames[0].truth, cfg, models.normalizer), rest,
                        ds.placement, ds.frequency, models, cfg);
  };
  const auto rec1 = run();
  const auto rec2 = run();
  REQUIRE(rec1.size() == rest.size());
  for (std::size_t i = 0; i < rec1.size(); ++i) {
    CHECK(rec1[i].updated_mean == rec2[i].updated_mean);
    CHECK(rec1[i].ensemble_std == rec2[i].ensemble_std);
    CHECK(rec1[i].step == static_cast<long>(i));  // records number the steps from 0
    CHECK(rec1[i].updated);
  }
}

TEST_CASE("frame sequences must have strictly increasing timestamps", "[filter]") {
  const ModelBundle models = testutil::small_bundle(Variant::fix, 7, 0.1);
  const FilterConfig cfg = small_cfg();
  TrajectoryDataset ds = testutil::tiny_dataset(0.2, 50, 22);
  std::vector<Frame> frames(ds.frames.begin() + 1, ds.frames.end());
  frames[2].timestamp = frames[1].timestamp;  // duplicate
  CHECK_THROWS_AS(run_sequence(init_filter(ds.frames[0].truth, cfg), frames, ds.placement,
                               ds.frequency, models, cfg),
                  InvalidArgument);
}

TEST_CASE("ensemble size mismatches are rejected at predict time", "[filter]") {
  const ModelBundle models = testutil::small_bundle(Variant::fix, 2, 0.1);
  FilterConfig cfg = small_cfg(8);
  FilterState fs = init_filter(testutil::rand_state(8), cfg);
  cfg.ensemble_size = 16;
  CHECK_THROWS_AS(predict(fs, testutil::rand_action(9), SamplingFrequency::from_hz(50), models, cfg),
                  InvalidArgument);
}
