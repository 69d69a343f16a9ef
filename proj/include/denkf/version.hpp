#pragma once

namespace denkf {

inline constexpr const char* kVersion = "1.0.0";

/// Bumped whenever the checkpoint serialization layout changes.
inline constexpr int kCheckpointLayoutVersion = 1;

/// Bumped whenever the dataset CSV/metadata layout changes.
inline constexpr int kDatasetLayoutVersion = 1;

/// Bumped whenever the run-manifest layout changes.
inline constexpr int kManifestLayoutVersion = 1;

}  // namespace denkf
