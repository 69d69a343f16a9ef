#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "denkf/errors.hpp"
#include "denkf/simulator.hpp"
#include "denkf/types.hpp"
#include "denkf/version.hpp"

namespace denkf {

namespace io {

/// Shortest round-trip decimal rendering: parsing the text recovers the
/// exact bits, so save -> load is lossless.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view token, std::size_t line, std::size_t field) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ParseError("malformed number '" + std::string(token) + "'", line, field);
  return v;
}

/// Writes content to `path` atomically (temp file + rename), so readers
/// never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.good()) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("atomic rename to " + path.string() + " failed: " + ec.message());
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& dataset_path) {
  std::filesystem::path p = dataset_path;
  p.replace_extension(".meta.json");
  return p;
}

}  // namespace io

inline constexpr int kDatasetColumns = 1 + kActionDim + kObsDim + kNumImus + kStateDim;  // 83

inline std::string dataset_header() {
  std::string h = "t";
  for (int i = 0; i < kActionDim; ++i) h += ",a_" + std::to_string(i);
  for (int i = 0; i < kObsDim; ++i) h += ",y_" + std::to_string(i);
  for (int i = 0; i < kNumImus; ++i) h += ",z_" + std::to_string(i);
  h += ",x,y,z,qx,qy,qz,qw";
  return h;
}

/// Writes the dataset as one-header CSV with fixed column order
/// [t, a_0..a_39, y_0..y_29, z_0..z_4, x..qw] plus a JSON metadata sidecar
/// next to it.  Numbers round-trip bit-exactly.
inline void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::string out = dataset_header();
  out += '\n';
  for (const Frame& f : ds.frames) {
    out += io::format_double(f.timestamp);
    for (int i = 0; i < kActionDim; ++i) {
      out += ',';
      out += io::format_double(f.action.pressures(i));
    }
    for (int i = 0; i < kObsDim; ++i) {
      out += ',';
      out += io::format_double(f.obs.imu(i));
    }
    for (int i = 0; i < kNumImus; ++i) {
      out += ',';
      out += std::to_string(ds.placement.labels()[i]);
    }
    const Vector7 x = f.truth.to_vector();
    for (int i = 0; i < kStateDim; ++i) {
      out += ',';
      out += io::format_double(x(i));
    }
    out += '\n';
  }
  io::write_file_atomic(path, out);

  nlohmann::json meta;
  meta["name"] = ds.metadata.name;
  meta["seed"] = ds.metadata.seed;
  meta["generator_version"] = ds.metadata.generator_version;
  meta["layout_version"] = ds.metadata.layout_version;
  meta["segment_boundaries"] = ds.metadata.segment_boundaries;
  meta["frequency_hz"] = ds.frequency.hz();
  meta["placement"] = ds.placement.labels();
  io::write_file_atomic(io::sidecar_path(path), meta.dump(2) + "\n");
}

/// Loads and validates a dataset written by save_dataset.  Any violation
/// (wrong column count, malformed number, non-monotone time, inconsistent
/// placement) throws ParseError with the offending line/field; nothing is
/// returned partially.
inline TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset file " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file " + path.string(), 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != dataset_header())
    throw ParseError("unexpected header (wrong column names or order)", 1);

  std::vector<Frame> frames;
  std::array<int, kNumImus> labels{};
  bool have_labels = false;
  std::size_t line_no = 1;
  std::vector<std::string_view> fields;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    fields.clear();
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.emplace_back(line.data() + start, i - start);
        start = i + 1;
      }
    }
    if (static_cast<int>(fields.size()) != kDatasetColumns)
      throw ParseError("expected " + std::to_string(kDatasetColumns) + " columns, got " +
                           std::to_string(fields.size()),
                       line_no);

    Frame f;
    std::size_t col = 0;
    f.timestamp = io::parse_double(fields[col], line_no, col + 1);
    ++col;
    for (int i = 0; i < kActionDim; ++i, ++col)
      f.action.pressures(i) = io::parse_double(fields[col], line_no, col + 1);
    for (int i = 0; i < kObsDim; ++i, ++col)
      f.obs.imu(i) = io::parse_double(fields[col], line_no, col + 1);
    std::array<int, kNumImus> row_labels{};
    for (int i = 0; i < kNumImus; ++i, ++col) {
      const double v = io::parse_double(fields[col], line_no, col + 1);
      row_labels[i] = static_cast<int>(v);
      if (double(row_labels[i]) != v)
        throw ParseError("placement label must be an integer", line_no, col + 1);
    }
    Vector7 x;
    for (int i = 0; i < kStateDim; ++i, ++col)
      x(i) = io::parse_double(fields[col], line_no, col + 1);
    f.truth = RobotState::from_vector(x);

    if (!have_labels) {
      labels = row_labels;
      have_labels = true;
    } else if (row_labels != labels) {
      throw ParseError("placement labels change at frame " + std::to_string(frames.size()),
                       line_no);
    }
    frames.push_back(std::move(f));
  }
  if (frames.size() < 2)
    throw ParseError("dataset needs at least 2 frames, got " + std::to_string(frames.size()));

  for (std::size_t i = 1; i < frames.size(); ++i)
    if (!(frames[i].timestamp > frames[i - 1].timestamp))
      throw ParseError("timestamps not strictly increasing at frame " + std::to_string(i),
                       i + 2);

  // The file is self-describing up to the rate, which the spacing implies.
  const double dt = frames[1].timestamp - frames[0].timestamp;
  SamplingFrequency freq = [&] {
    const int hz = static_cast<int>(std::lround(1.0 / dt));
    try {
      return SamplingFrequency::from_hz(hz);
    } catch (const InvalidArgument& e) {
      throw ParseError(std::string("cannot infer a supported sampling frequency: ") + e.what());
    }
  }();

  TrajectoryDataset ds;
  ds.frames = std::move(frames);
  ds.placement = PlacementSet(labels);  // normalizes unsorted labels
  ds.frequency = freq;

  const std::filesystem::path meta_path = io::sidecar_path(path);
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta_in(meta_path, std::ios::binary);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("malformed metadata sidecar " + meta_path.string() + ": " + e.what());
    }
    const int layout = meta.value("layout_version", kDatasetLayoutVersion);
    if (layout > kDatasetLayoutVersion)
      throw IncompatibleLayout("dataset layout version " + std::to_string(layout) +
                               " is newer than supported version " +
                               std::to_string(kDatasetLayoutVersion));
    ds.metadata.name = meta.value("name", std::string());
    ds.metadata.seed = meta.value("seed", std::uint64_t(0));
    ds.metadata.generator_version = meta.value("generator_version", std::string());
    ds.metadata.layout_version = layout;
    ds.metadata.segment_boundaries =
        meta.value("segment_boundaries", std::vector<double>());
    if (meta.contains("frequency_hz") && meta["frequency_hz"].get<int>() != ds.frequency.hz())
      throw ParseError("sidecar frequency " + meta["frequency_hz"].dump() +
                       " Hz disagrees with timestamp spacing (" +
                       std::to_string(ds.frequency.hz()) + " Hz)");
  } else {
    ds.metadata.name = path.stem().string();
  }

  ds.validate();
  return ds;
}

/// Exact structural equality, used by round-trip and reproducibility tests.
inline bool dataset_equal(const TrajectoryDataset& a, const TrajectoryDataset& b) {
  if (a.frames.size() != b.frames.size() || a.placement != b.placement ||
      a.frequency != b.frequency)
    return false;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const Frame& fa = a.frames[i];
    const Frame& fb = b.frames[i];
    if (fa.timestamp != fb.timestamp || fa.action.pressures != fb.action.pressures ||
        fa.obs.imu != fb.obs.imu || fa.truth.position != fb.truth.position ||
        fa.truth.orientation != fb.truth.orientation)
      return false;
  }
  return a.metadata.seed == b.metadata.seed &&
         a.metadata.segment_boundaries == b.metadata.segment_boundaries;
}

}  // namespace denkf
