#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "denkf/dataset_io.hpp"
#include "denkf/errors.hpp"
#include "denkf/version.hpp"

namespace denkf {

inline std::string iso_timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Provenance record written next to every command's outputs.  Holds the
/// fully-resolved configuration, so any run can be reproduced from its
/// manifest alone.
struct RunManifest {
  std::string command;
  nlohmann::json config;  // resolved per-verb configuration snapshot
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version = kVersion;
  int layout_version = kManifestLayoutVersion;
  std::string start_time;
  std::string end_time;
};

inline void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["layout_version"] = m.layout_version;
  j["tool_version"] = m.tool_version;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["start_time"] = m.start_time;
  j["end_time"] = m.end_time;
  io::write_file_atomic(path, j.dump(2) + "\n");
}

inline RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed manifest " + path.string() + ": " + e.what());
  }
  RunManifest m;
  try {
    m.layout_version = j.at("layout_version").get<int>();
    if (m.layout_version > kManifestLayoutVersion)
      throw IncompatibleLayout("manifest layout version " + std::to_string(m.layout_version) +
                               " is newer than supported");
    m.tool_version = j.at("tool_version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.value("inputs", std::vector<std::string>());
    m.outputs = j.value("outputs", std::vector<std::string>());
    m.start_time = j.value("start_time", std::string());
    m.end_time = j.value("end_time", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest field error: ") + e.what());
  }
  return m;
}

}  // namespace denkf
