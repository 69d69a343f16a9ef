#pragma once

// Shared fixtures for the unit suites: scratch directories, small synthetic
// datasets, and random-but-valid domain objects.

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "denkf/denkf.hpp"

namespace testutil {

/// Fresh scratch directory under the build-tree test area.
inline std::filesystem::path tmpdir(const std::string& name) {
  const char* base_env = std::getenv("TMPDIR");
#ifdef DENKF_TEST_TMPDIR
  const std::filesystem::path base = DENKF_TEST_TMPDIR;
#else
  const std::filesystem::path base = base_env ? base_env : "/tmp";
#endif
  const std::filesystem::path dir = base / ("denkf_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small, cheap arm used throughout the suites.
inline denkf::SyntheticArmConfig tiny_arm(std::uint64_t seed = 7) {
  denkf::SyntheticArmConfig arm;
  arm.seed = seed;
  arm.min_hold_s = 0.5;
  arm.max_hold_s = 1.0;
  arm.rebuild_arm();
  return arm;
}

inline denkf::TrajectoryDataset tiny_dataset(double duration_s = 1.0, int hz = 50,
                                             std::uint64_t seed = 11, int placement_index = 0) {
  return denkf::generate_trajectory(tiny_arm(), denkf::canonical_placements()[placement_index],
                                    denkf::SamplingFrequency::from_hz(hz), duration_s, seed);
}

/// Random valid state: position in a +-100 mm box, random unit quaternion.
inline denkf::RobotState rand_state(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  denkf::RobotState s;
  for (int i = 0; i < 3; ++i) s.position(i) = 100.0 * gauss(eng);
  for (int i = 0; i < 4; ++i) s.orientation(i) = gauss(eng);
  s.orientation.normalize();
  return s;
}

inline denkf::RawObservation rand_obs(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  denkf::RawObservation o;
  for (int i = 0; i < denkf::kObsDim; ++i) o.imu(i) = gauss(eng);
  return o;
}

inline denkf::Action rand_action(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  denkf::Action a;
  for (int i = 0; i < denkf::kActionDim; ++i) a.pressures(i) = u(eng);
  return a;
}

/// Smallest fully-stochastic bundle that exercises every code path cheaply.
/// pe+te needs d_model equal to the transition latent width, so only fix/pe
/// get the shrunken embedding.
inline denkf::ModelBundle small_bundle(denkf::Variant v = denkf::Variant::fix,
                                       std::uint64_t seed = 3, double dropout = 0.1) {
  denkf::EmbeddingConfig embed;
  embed.d_model = v == denkf::Variant::pe_te ? 64 : 8;
  return denkf::ModelBundle::init(v, seed, dropout, embed);
}

}  // namespace testutil
