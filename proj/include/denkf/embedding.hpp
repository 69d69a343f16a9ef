#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "denkf/errors.hpp"
#include "denkf/types.hpp"

namespace denkf {

/// Sinusoidal embedding geometry.  d_model must be even: entries come in
/// (sin, cos) pairs sharing a wavelength.
struct EmbeddingConfig {
  int d_model = 64;
  double base = 10000.0;

  void validate() const {
    if (d_model <= 0 || d_model % 2 != 0)
      throw InvalidArgument("d_model must be a positive even number, got " +
                            std::to_string(d_model));
    if (!(base > 1.0)) throw InvalidArgument("embedding base must exceed 1");
  }
};

/// Classic transformer-style sinusoid: entry 2k   = sin(pos / base^(2k/d)),
///                                     entry 2k+1 = cos(pos / base^(2k/d)).
inline Eigen::VectorXd embed_position(double pos, const EmbeddingConfig& cfg = {}) {
  cfg.validate();
  if (!std::isfinite(pos)) throw InvalidArgument("embedding position must be finite");
  Eigen::VectorXd e(cfg.d_model);
  for (int k = 0; 2 * k < cfg.d_model; ++k) {
    const double angle = pos / std::pow(cfg.base, (2.0 * k) / cfg.d_model);
    e(2 * k) = std::sin(angle);
    e(2 * k + 1) = std::cos(angle);
  }
  return e;
}

/// Sampling frequencies embed by ordinal index (5 Hz -> 0, ..., 50 Hz -> 3),
/// not by the raw Hz value, so the four supported rates stay well separated
/// at every wavelength.
inline Eigen::VectorXd embed_frequency(SamplingFrequency f, const EmbeddingConfig& cfg = {}) {
  return embed_position(static_cast<double>(f.ordinal()), cfg);
}

/// One embedding row per mounted IMU, in sorted label order (5 x d_model).
inline Eigen::MatrixXd placement_embedding(const PlacementSet& placement,
                                           const EmbeddingConfig& cfg = {}) {
  cfg.validate();
  Eigen::MatrixXd rows(kNumImus, cfg.d_model);
  for (int i = 0; i < kNumImus; ++i)
    rows.row(i) = embed_position(static_cast<double>(placement.labels()[i]), cfg).transpose();
  return rows;
}

}  // namespace denkf
