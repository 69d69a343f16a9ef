#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "denkf/errors.hpp"
#include "denkf/filter.hpp"
#include "denkf/types.hpp"

namespace denkf {

/// Per-frame observation availability: true = observation unavailable.
struct MissingMask {
  std::vector<bool> missing;

  void validate(std::size_t frame_count) const {
    if (missing.size() != frame_count)
      throw InvalidArgument("missing mask length " + std::to_string(missing.size()) +
                            " does not match frame count " + std::to_string(frame_count));
  }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), true));
  }
};

/// One contiguous masked window covering `fraction` of the frames, with a
/// seeded random start — the shape of the dropout windows used for the
/// missing-observation experiments.
inline MissingMask random_window_mask(std::size_t frame_count, double fraction,
                                      std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw InvalidArgument("mask fraction must lie in [0, 1]");
  MissingMask mask;
  mask.missing.assign(frame_count, false);
  const std::size_t len = static_cast<std::size_t>(std::lround(fraction * frame_count));
  if (len == 0) return mask;
  std::mt19937_64 eng(derive_seed({seed, salt::kMask}));
  std::uniform_int_distribution<std::size_t> start_dist(0, frame_count - len);
  const std::size_t start = start_dist(eng);
  for (std::size_t i = start; i < start + len; ++i) mask.missing[i] = true;
  return mask;
}

/// Filters the frames with the mask applied: masked frames run predict-only
/// (posterior = forecast, spread carried forward); the sensor model is never
/// invoked for them.
inline std::vector<StepRecord> run_with_missing(FilterState initial,
                                                const std::vector<Frame>& frames,
                                                const MissingMask& mask,
                                                const PlacementSet& placement,
                                                SamplingFrequency f, const ModelBundle& models,
                                                const FilterConfig& cfg) {
  mask.validate(frames.size());
  std::vector<Frame> masked = frames;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (mask.missing[i]) masked[i].missing = true;
  return run_sequence(std::move(initial), masked, placement, f, models, cfg);
}

/// Minkowski-p distance between two states over the raw 7-vector (position
/// in mm, quaternion unitless), optionally channel-weighted.  Computed in a
/// scale-invariant form so large p does not overflow.
inline double minkowski_delta(const RobotState& updated, const RobotState& predicted,
                              double p = 10.0, const Vector7& weights = Vector7::Ones()) {
  if (!(p >= 1.0)) throw InvalidArgument("Minkowski order p must be >= 1");
  if ((weights.array() < 0.0).any())
    throw InvalidArgument("Minkowski weights must be nonnegative");
  const Vector7 diff =
      ((updated.to_vector() - predicted.to_vector()).array() * weights.array()).matrix();
  const double m = diff.cwiseAbs().maxCoeff();
  if (m == 0.0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < kStateDim; ++i) acc += std::pow(std::abs(diff(i)) / m, p);
  return m * std::pow(acc, 1.0 / p);
}

/// Interaction-detection output: the per-step distance between posterior and
/// forecast, the calibration threshold, and the alarm intervals.
struct ForceTrace {
  std::vector<double> deltas;
  double threshold = 0.0;
  std::vector<std::pair<long, long>> alarms;  // [first, last] step index, inclusive

  void validate() const {
    for (double d : deltas)
      if (!(d >= 0.0)) throw InvalidArgument("force-trace deltas must be nonnegative");
    for (const auto& [lo, hi] : alarms)
      for (long s = lo; s <= hi; ++s)
        if (!(deltas[static_cast<std::size_t>(s)] > threshold))
          throw InvalidArgument("alarm interval covers a step at or below threshold");
  }
};

inline std::vector<double> trajectory_deltas(const std::vector<StepRecord>& records, double p,
                                             const Vector7& weights = Vector7::Ones()) {
  std::vector<double> deltas;
  deltas.reserve(records.size());
  for (const StepRecord& r : records)
    deltas.push_back(minkowski_delta(RobotState::from_vector(r.updated_mean),
                                     RobotState::from_vector(r.predicted_mean), p, weights));
  return deltas;
}

/// Nearest-rank percentile (q in [0, 1]) of a sample.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("percentile rank must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const std::size_t rank =
      std::min(values.size() - 1,
               static_cast<std::size_t>(std::ceil(q * double(values.size()))) -
                   (q > 0.0 ? 1 : 0));
  return values[rank];
}

/// Detects interaction episodes: delta_t = ||updated - predicted||_p per
/// step, thresholded at a percentile of a force-free calibration run;
/// alarms are the maximal runs of consecutive steps above the threshold.
inline ForceTrace detect_forces(const std::vector<StepRecord>& trajectory,
                                const std::vector<StepRecord>& calibration, double p = 10.0,
                                double threshold_percentile = 0.99,
                                const Vector7& weights = Vector7::Ones()) {
  if (calibration.empty())
    throw ConfigError("force detection needs a force-free calibration trajectory");
  if (trajectory.empty()) throw InvalidArgument("force detection needs a trajectory");

  ForceTrace trace;
  trace.threshold = percentile(trajectory_deltas(calibration, p, weights), threshold_percentile);
  trace.deltas = trajectory_deltas(trajectory, p, weights);

  long run_start = -1;
  for (long i = 0; i < static_cast<long>(trace.deltas.size()); ++i) {
    const bool above = trace.deltas[static_cast<std::size_t>(i)] > trace.threshold;
    if (above && run_start < 0) run_start = i;
    if (!above && run_start >= 0) {
      trace.alarms.emplace_back(run_start, i - 1);
      run_start = -1;
    }
  }
  if (run_start >= 0)
    trace.alarms.emplace_back(run_start, static_cast<long>(trace.deltas.size()) - 1);
  trace.validate();
  return trace;
}

}  // namespace denkf
