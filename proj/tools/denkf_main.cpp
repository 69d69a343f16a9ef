// denkf — differentiable ensemble Kalman filtering for soft-robot state
// estimation.  Verbs: simulate | train | eval | forces.  Every run writes a
// manifest holding its fully-resolved configuration; --from-manifest replays
// a previous run bit-for-bit.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "denkf/denkf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

/// Overlays `file_cfg` onto `cfg`, rejecting unknown keys so typos fail
/// loudly instead of silently running defaults.
void merge_config(json& cfg, const json& file_cfg, const std::string& scope) {
  if (!file_cfg.is_object())
    throw denkf::ConfigError("config " + scope + " must be a JSON object");
  for (const auto& [key, value] : file_cfg.items()) {
    if (!cfg.contains(key))
      throw denkf::ConfigError("unknown config field '" + scope + key + "'");
    if (cfg[key].is_object() && !cfg[key].empty()) {
      merge_config(cfg[key], value, scope + key + ".");
    } else {
      cfg[key] = value;
    }
  }
}

json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw denkf::ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw denkf::ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

void apply_env_seed(json& cfg) {
  if (const char* env = std::getenv("DENKF_SEED")) {
    try {
      cfg["seed"] = std::stoull(env);
    } catch (const std::exception&) {
      throw denkf::ConfigError(std::string("DENKF_SEED is not an unsigned integer: ") + env);
    }
  }
}

template <typename T>
T get_field(const json& cfg, const char* key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw denkf::ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

denkf::TrainConfig train_config_from_json(const json& cfg) {
  denkf::TrainConfig tc;
  tc.epochs = get_field<int>(cfg, "epochs");
  tc.batch_size = get_field<int>(cfg, "batch_size");
  tc.lr = get_field<double>(cfg, "lr");
  tc.ensemble_size = get_field<int>(cfg, "ensemble_size");
  tc.bptt_window = get_field<int>(cfg, "bptt_window");
  tc.lambda_e2e = get_field<double>(cfg, "lambda_e2e");
  tc.lambda_f = get_field<double>(cfg, "lambda_f");
  tc.lambda_s = get_field<double>(cfg, "lambda_s");
  tc.seed = get_field<std::uint64_t>(cfg, "seed");
  tc.init_noise_scale = get_field<double>(cfg, "init_noise_scale");
  tc.jitter = get_field<double>(cfg, "jitter");
  tc.stop_gain_gradient = get_field<bool>(cfg, "stop_gain_gradient");
  tc.validate();
  return tc;
}

denkf::FilterConfig filter_config_from_json(const json& cfg) {
  denkf::FilterConfig fc;
  fc.ensemble_size = get_field<int>(cfg, "ensemble_size");
  fc.jitter = get_field<double>(cfg, "jitter");
  fc.init_noise_scale = get_field<double>(cfg, "init_noise_scale");
  fc.seed = get_field<std::uint64_t>(cfg, "seed");
  fc.validate();
  return fc;
}

denkf::SyntheticArmConfig arm_config_from_json(const json& cfg) {
  denkf::SyntheticArmConfig arm;
  arm.layers = get_field<int>(cfg, "layers");
  arm.seed = get_field<std::uint64_t>(cfg, "arm_seed");
  arm.bend_gain = get_field<double>(cfg, "bend_gain");
  arm.twist_gain = get_field<double>(cfg, "twist_gain");
  arm.noise_std_obs = get_field<double>(cfg, "noise_std_obs");
  arm.arm_length_mm = get_field<double>(cfg, "arm_length_mm");
  arm.response_omega = get_field<double>(cfg, "response_omega");
  arm.min_hold_s = get_field<double>(cfg, "min_hold_s");
  arm.max_hold_s = get_field<double>(cfg, "max_hold_s");
  arm.rebuild_arm();
  arm.validate();
  return arm;
}

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

std::string trajectory_header() {
  std::string h = "step,t";
  const char* state_cols[] = {"x", "y", "z", "qx", "qy", "qz", "qw"};
  for (const char* c : state_cols) h += std::string(",pred_") + c;
  for (const char* c : state_cols) h += std::string(",upd_") + c;
  for (const char* c : state_cols) h += std::string(",std_") + c;
  for (int i = 0; i < denkf::kStateDim; ++i) h += ",innov_" + std::to_string(i);
  return h;
}

void write_trajectory(const std::vector<denkf::StepRecord>& records, const fs::path& path) {
  std::string out = trajectory_header() + "\n";
  for (const denkf::StepRecord& r : records) {
    out += std::to_string(r.step) + "," + denkf::io::format_double(r.timestamp);
    for (int i = 0; i < denkf::kStateDim; ++i)
      out += "," + denkf::io::format_double(r.predicted_mean(i));
    for (int i = 0; i < denkf::kStateDim; ++i)
      out += "," + denkf::io::format_double(r.updated_mean(i));
    for (int i = 0; i < denkf::kStateDim; ++i)
      out += "," + denkf::io::format_double(r.ensemble_std(i));
    for (int i = 0; i < denkf::kStateDim; ++i)
      out += "," + denkf::io::format_double(r.innovation(i));
    out += "\n";
  }
  denkf::io::write_file_atomic(path, out);
}

void write_loss_curve(const std::vector<double>& curve, const fs::path& path) {
  std::string out = "epoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    out += std::to_string(i + 1) + "," + denkf::io::format_double(curve[i]) + "\n";
  denkf::io::write_file_atomic(path, out);
}

void write_force_trace(const denkf::ForceTrace& trace, const fs::path& path) {
  std::string out = "step,delta,alarm\n";
  std::vector<char> alarm(trace.deltas.size(), '0');
  for (const auto& [lo, hi] : trace.alarms)
    for (long s = lo; s <= hi; ++s) alarm[static_cast<std::size_t>(s)] = '1';
  for (std::size_t i = 0; i < trace.deltas.size(); ++i) {
    out += std::to_string(i) + "," + denkf::io::format_double(trace.deltas[i]) + ",";
    out += alarm[i];
    out += "\n";
  }
  denkf::io::write_file_atomic(path, out);
}

denkf::RunManifest make_manifest(const std::string& command, const json& cfg,
                                 std::uint64_t seed) {
  denkf::RunManifest m;
  m.command = command;
  m.config = cfg;
  m.seed = seed;
  m.start_time = denkf::iso_timestamp_utc();
  return m;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

json default_simulate_config() {
  return json{{"seed", 0},
              {"duration_s", 30.0},
              {"frequencies", {50, 30, 10, 5}},
              {"datasets", 10},
              {"out", ""},
              {"arm",
               {{"layers", 5},
                {"arm_seed", 0},
                {"bend_gain", 2.0},
                {"twist_gain", 1.0},
                {"noise_std_obs", 0.02},
                {"arm_length_mm", 500.0},
                {"response_omega", 1.5},
                {"min_hold_s", 2.0},
                {"max_hold_s", 5.0}}}};
}

int run_simulate(const json& cfg) {
  const fs::path out_dir = get_field<std::string>(cfg, "out");
  if (out_dir.empty()) throw denkf::ConfigError("simulate needs an output directory (--out)");
  fs::create_directories(out_dir);

  const denkf::SyntheticArmConfig arm = arm_config_from_json(cfg.at("arm"));
  const double duration = get_field<double>(cfg, "duration_s");
  const std::uint64_t seed = get_field<std::uint64_t>(cfg, "seed");
  const int n_datasets = get_field<int>(cfg, "datasets");
  if (n_datasets < 1 || n_datasets > 10)
    throw denkf::ConfigError("datasets must lie in [1, 10] (canonical placement sets)");
  std::vector<int> freqs;
  for (const auto& f : cfg.at("frequencies")) {
    const int hz = f.get<int>();
    denkf::SamplingFrequency::from_hz(hz);  // validates
    freqs.push_back(hz);
  }
  if (freqs.empty()) throw denkf::ConfigError("frequencies must be non-empty");

  denkf::RunManifest manifest = make_manifest("simulate", cfg, seed);

  for (int d = 0; d < n_datasets; ++d) {
    const denkf::PlacementSet& placement = denkf::canonical_placements()[d];
    const std::uint64_t traj_seed = denkf::derive_seed({seed, std::uint64_t(d)});
    const std::string base = "D" + std::to_string(d + 1);

    // 10/5 Hz variants are downsampled from the 50 Hz recording; 50 and
    // 30 Hz are read natively off the same continuous latent trajectory.
    std::optional<denkf::TrajectoryDataset> ds50;
    const auto native_or_resampled = [&](int hz) {
      const auto target = denkf::SamplingFrequency::from_hz(hz);
      if (hz == 50 || hz == 30)
        return denkf::generate_trajectory(arm, placement, target, duration, traj_seed);
      if (!ds50)
        ds50 = denkf::generate_trajectory(arm, placement,
                                          denkf::SamplingFrequency::from_hz(50), duration,
                                          traj_seed);
      return denkf::resample(*ds50, target);
    };

    for (int hz : freqs) {
      denkf::TrajectoryDataset ds = native_or_resampled(hz);
      ds.metadata.name = base + "_" + std::to_string(hz) + "hz";
      const fs::path path = out_dir / (ds.metadata.name + ".csv");
      denkf::save_dataset(ds, path);
      manifest.outputs.push_back(path.string());
      std::cout << "wrote " << path.string() << " (" << ds.frames.size() << " frames, placement "
                << placement.to_string() << ")\n";
    }
  }

  manifest.end_time = denkf::iso_timestamp_utc();
  denkf::save_manifest(manifest, out_dir / "simulate_manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

json default_train_config() {
  return json{{"epochs", 50},
              {"batch_size", 64},
              {"lr", 1e-5},
              {"ensemble_size", 32},
              {"bptt_window", 1},
              {"lambda_e2e", 1.0},
              {"lambda_f", 1.0},
              {"lambda_s", 1.0},
              {"seed", 0},
              {"init_noise_scale", 0.1},
              {"jitter", 1e-6},
              {"stop_gain_gradient", false},
              {"variant", "fix"},
              {"dropout_rate", 0.1},
              {"d_model", 64},
              {"embedding_base", 10000.0},
              {"data", ""},
              {"out", ""},
              {"resume", ""},
              {"datasets", json::array()}};
}

/// Loads the training pool: an explicit file list if given, otherwise every
/// dataset in the directory matching the variant's regime (fix: first
/// placement at 50 Hz; pe: all placements at 50 Hz; pe+te: everything).
std::vector<denkf::TrajectoryDataset> load_training_sets(const json& cfg,
                                                         denkf::Variant variant) {
  const fs::path data_dir = get_field<std::string>(cfg, "data");
  if (data_dir.empty()) throw denkf::ConfigError("train needs a dataset directory (--data)");
  if (!fs::is_directory(data_dir))
    throw denkf::ConfigError("data directory not found: " + data_dir.string());

  std::vector<fs::path> files;
  if (cfg.contains("datasets") && !cfg.at("datasets").empty()) {
    for (const auto& name : cfg.at("datasets")) files.push_back(data_dir / name.get<std::string>());
  } else {
    for (const auto& entry : fs::directory_iterator(data_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
          entry.path().string().find(".meta") == std::string::npos)
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  }

  std::vector<denkf::TrajectoryDataset> pool;
  for (const fs::path& f : files) {
    denkf::TrajectoryDataset ds = denkf::load_dataset(f);
    const bool is_first_placement = ds.placement == denkf::canonical_placements().front();
    const bool at_50 = ds.frequency.hz() == 50;
    const bool keep = variant == denkf::Variant::fix  ? (is_first_placement && at_50)
                      : variant == denkf::Variant::pe ? at_50
                                                      : true;
    if (keep) pool.push_back(std::move(ds));
  }
  if (pool.empty())
    throw denkf::ConfigError("no datasets matching the " +
                             std::string(variant == denkf::Variant::fix  ? "fix"
                                         : variant == denkf::Variant::pe ? "pe"
                                                                         : "pe+te") +
                             " regime under " + data_dir.string());
  return pool;
}

int run_train(const json& cfg) {
  const fs::path out_path = get_field<std::string>(cfg, "out");
  if (out_path.empty()) throw denkf::ConfigError("train needs a checkpoint output path (--out)");
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());

  const denkf::Variant variant =
      denkf::variant_from_string(get_field<std::string>(cfg, "variant"));
  denkf::TrainConfig tc = train_config_from_json(cfg);

  denkf::ModelBundle models;
  const std::string resume = get_field<std::string>(cfg, "resume");
  if (!resume.empty()) {
    denkf::Checkpoint prev = denkf::load_checkpoint(resume);
    if (prev.models.variant != variant)
      throw denkf::ConfigError("resume checkpoint variant '" +
                               denkf::variant_name(prev.models.variant) +
                               "' does not match requested '" + denkf::variant_name(variant) +
                               "'");
    models = std::move(prev.models);
    tc.refit_normalizer = false;  // keep the stats the checkpoint was trained with
  } else {
    denkf::EmbeddingConfig embed;
    embed.d_model = get_field<int>(cfg, "d_model");
    embed.base = get_field<double>(cfg, "embedding_base");
    models = denkf::ModelBundle::init(variant, tc.seed, get_field<double>(cfg, "dropout_rate"),
                                      embed);
  }

  const std::vector<denkf::TrajectoryDataset> pool = load_training_sets(cfg, variant);
  std::cout << "training variant " << denkf::variant_name(variant) << " on " << pool.size()
            << " dataset(s), " << tc.epochs << " epochs\n";

  denkf::RunManifest manifest = make_manifest("train", cfg, tc.seed);
  const denkf::TrainResult result = denkf::train(models, pool, tc, [](int epoch, double loss) {
    std::cout << "epoch " << epoch << " loss " << loss << "\n";
  });

  denkf::Checkpoint ckpt;
  ckpt.models = result.models;
  ckpt.training.seed = tc.seed;
  ckpt.training.epochs_completed = result.epochs_completed;
  ckpt.training.final_loss = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
  ckpt.training.loss_curve = result.loss_curve;
  denkf::save_checkpoint(ckpt, out_path);
  manifest.outputs.push_back(out_path.string());

  fs::path loss_path = out_path;
  loss_path.replace_extension(".loss.csv");
  write_loss_curve(result.loss_curve, loss_path);
  manifest.outputs.push_back(loss_path.string());

  manifest.end_time = denkf::iso_timestamp_utc();
  fs::path manifest_path = out_path;
  manifest_path.replace_extension(".manifest.json");
  denkf::save_manifest(manifest, manifest_path);

  if (result.aborted) {
    std::cerr << "training aborted (" << result.abort_reason
              << "); last-good checkpoint kept at " << out_path.string() << "\n";
    return 3;
  }
  std::cout << "checkpoint written to " << out_path.string() << " (final loss "
            << ckpt.training.final_loss << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

json default_eval_config() {
  return json{{"checkpoint", ""}, {"data", ""},
              {"out", "."},      {"seed", 0},
              {"ensemble_size", 32}, {"jitter", 1e-6},
              {"init_noise_scale", 0.1},
              {"missing_fraction", 0.0}, {"missing_seed", 0},
              {"detect_forces", false},  {"calibration", ""},
              {"folds", 0},
              {"train", default_train_config()}};
}

int run_eval(const json& cfg) {
  const fs::path ckpt_path = get_field<std::string>(cfg, "checkpoint");
  const fs::path data_path = get_field<std::string>(cfg, "data");
  if (ckpt_path.empty() || data_path.empty())
    throw denkf::ConfigError("eval needs --checkpoint and --data");
  const fs::path out_dir = get_field<std::string>(cfg, "out");
  fs::create_directories(out_dir);

  const denkf::Checkpoint ckpt = denkf::load_checkpoint(ckpt_path);
  denkf::FilterConfig fc = filter_config_from_json(cfg);
  denkf::RunManifest manifest = make_manifest("eval", cfg, fc.seed);
  manifest.inputs = {ckpt_path.string(), data_path.string()};

  const int folds = get_field<int>(cfg, "folds");
  if (folds > 0) {
    // Cross-validation over all datasets in the directory.
    if (!fs::is_directory(data_path))
      throw denkf::ConfigError("--folds needs --data to be a dataset directory");
    std::vector<denkf::TrajectoryDataset> pool;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(data_path))
      if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
          entry.path().string().find(".meta") == std::string::npos)
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) pool.push_back(denkf::load_dataset(f));

    denkf::TrainConfig tc = train_config_from_json(cfg.at("train"));
    const denkf::ModelBundle& proto = ckpt.models;
    const auto factory = [&proto](std::uint64_t fold_seed) {
      return denkf::ModelBundle::init(proto.variant, fold_seed, proto.dropout_rate,
                                      proto.embedding);
    };
    const denkf::CrossValReport report =
        denkf::crossvalidate(factory, pool, folds, tc, fc);
    std::cout << "cross-validation (" << folds << " folds, " << pool.size() << " segments)\n";
    std::cout << "  MAE position (mm): " << report.format_position() << "\n";
    std::cout << "  RMSE position (mm): "
              << denkf::CrossValReport::format_mean_stderr(report.rmse_position_mean,
                                                          report.rmse_position_stderr)
              << "\n";
    std::cout << "  MAE quaternion: " << report.format_quaternion() << "\n";
    manifest.end_time = denkf::iso_timestamp_utc();
    denkf::save_manifest(manifest, out_dir / "eval_manifest.json");
    return 0;
  }

  const denkf::TrajectoryDataset ds = denkf::load_dataset(data_path);
  if (ds.frames.size() < 2) throw denkf::InvalidArgument("eval needs at least 2 frames");
  const double missing_fraction = get_field<double>(cfg, "missing_fraction");

  denkf::FilterState init = denkf::init_filter(ds.frames[0].truth, fc, ckpt.models.normalizer);
  const std::vector<denkf::Frame> rest(ds.frames.begin() + 1, ds.frames.end());

  std::vector<denkf::StepRecord> records;
  const auto t0 = std::chrono::steady_clock::now();
  if (missing_fraction > 0.0) {
    const denkf::MissingMask mask = denkf::random_window_mask(
        rest.size(), missing_fraction, get_field<std::uint64_t>(cfg, "missing_seed"));
    records = denkf::run_with_missing(std::move(init), rest, mask, ds.placement, ds.frequency,
                                      ckpt.models, fc);
    std::cout << "missing-observation rollout: " << mask.count() << "/" << rest.size()
              << " frames masked\n";
  } else {
    records = denkf::run_sequence(std::move(init), rest, ds.placement, ds.frequency, ckpt.models,
                                  fc);
  }
  const auto t1 = std::chrono::steady_clock::now();

  // Metrics are scored on the records actually written (masked or not).
  double abs_sum = 0.0, sq_sum = 0.0, quat_sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const denkf::Vector7 est = records[i].updated_mean;
    const denkf::Vector7 truth = rest[i].truth.to_vector();
    const double pos_err = (est.head<3>() - truth.head<3>()).norm();
    abs_sum += pos_err;
    sq_sum += pos_err * pos_err;
    quat_sum += (est.tail<4>() - truth.tail<4>()).cwiseAbs().mean();
  }
  const double n = double(records.size());

  std::cout << "dataset " << (ds.metadata.name.empty() ? data_path.filename().string()
                                                       : ds.metadata.name)
            << " (" << records.size() << " steps)\n";
  std::cout << "  MAE position (mm): " << abs_sum / n << "\n";
  std::cout << "  RMSE position (mm): " << std::sqrt(sq_sum / n) << "\n";
  std::cout << "  MAE quaternion: " << quat_sum / n << "\n";
  std::cout << "  wall clock per step (s): "
            << std::chrono::duration<double>(t1 - t0).count() / n << "\n";

  const fs::path traj_path = out_dir / "trajectory.csv";
  write_trajectory(records, traj_path);
  manifest.outputs.push_back(traj_path.string());

  if (get_field<bool>(cfg, "detect_forces")) {
    const std::string calib = get_field<std::string>(cfg, "calibration");
    if (calib.empty())
      throw denkf::ConfigError("--detect-forces needs --calibration (force-free dataset)");
    const denkf::TrajectoryDataset calib_ds = denkf::load_dataset(calib);
    denkf::FilterState calib_init =
        denkf::init_filter(calib_ds.frames[0].truth, fc, ckpt.models.normalizer);
    const std::vector<denkf::Frame> calib_rest(calib_ds.frames.begin() + 1,
                                               calib_ds.frames.end());
    const auto calib_records = denkf::run_sequence(std::move(calib_init), calib_rest,
                                                   calib_ds.placement, calib_ds.frequency,
                                                   ckpt.models, fc);
    const denkf::ForceTrace trace = denkf::detect_forces(records, calib_records);
    const fs::path force_path = out_dir / "forces.csv";
    write_force_trace(trace, force_path);
    manifest.outputs.push_back(force_path.string());
    std::cout << "force detection: threshold " << trace.threshold << ", " << trace.alarms.size()
              << " alarm interval(s)\n";
  }

  manifest.end_time = denkf::iso_timestamp_utc();
  denkf::save_manifest(manifest, out_dir / "eval_manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// forces
// ---------------------------------------------------------------------------

json default_forces_config() {
  return json{{"checkpoint", ""},
              {"data", ""},
              {"calibration", ""},
              {"out", "."},
              {"seed", 0},
              {"ensemble_size", 32},
              {"jitter", 1e-6},
              {"init_noise_scale", 0.1},
              {"p", 10.0},
              {"threshold_percentile", 0.99},
              {"inject_bias", 0.0},
              {"inject_start", 0},
              {"inject_len", 0}};
}

int run_forces(const json& cfg) {
  const fs::path ckpt_path = get_field<std::string>(cfg, "checkpoint");
  const fs::path data_path = get_field<std::string>(cfg, "data");
  const std::string calib = get_field<std::string>(cfg, "calibration");
  if (ckpt_path.empty() || data_path.empty())
    throw denkf::ConfigError("forces needs --checkpoint and --data");
  if (calib.empty())
    throw denkf::ConfigError("forces needs --calibration (force-free dataset)");
  const fs::path out_dir = get_field<std::string>(cfg, "out");
  fs::create_directories(out_dir);

  const denkf::Checkpoint ckpt = denkf::load_checkpoint(ckpt_path);
  denkf::FilterConfig fc = filter_config_from_json(cfg);
  denkf::RunManifest manifest = make_manifest("forces", cfg, fc.seed);
  manifest.inputs = {ckpt_path.string(), data_path.string(), calib};

  denkf::TrajectoryDataset ds = denkf::load_dataset(data_path);

  // Optional synthetic push: a constant bias on every IMU channel over a
  // step window, standing in for an external interaction.
  const double bias = get_field<double>(cfg, "inject_bias");
  const long inj_start = get_field<long>(cfg, "inject_start");
  const long inj_len = get_field<long>(cfg, "inject_len");
  if (bias != 0.0 && inj_len > 0) {
    const long lo = std::max<long>(0, inj_start);
    const long hi = std::min<long>(static_cast<long>(ds.frames.size()), inj_start + inj_len);
    for (long i = lo; i < hi; ++i)
      ds.frames[static_cast<std::size_t>(i)].obs.imu.array() += bias;
    std::cout << "injected bias " << bias << " on frames [" << lo << ", " << hi << ")\n";
  }

  const auto filter_dataset = [&](const denkf::TrajectoryDataset& d) {
    denkf::FilterState init = denkf::init_filter(d.frames[0].truth, fc, ckpt.models.normalizer);
    const std::vector<denkf::Frame> rest(d.frames.begin() + 1, d.frames.end());
    return denkf::run_sequence(std::move(init), rest, d.placement, d.frequency, ckpt.models, fc);
  };

  const auto records = filter_dataset(ds);
  const auto calib_records = filter_dataset(denkf::load_dataset(calib));
  const denkf::ForceTrace trace =
      denkf::detect_forces(records, calib_records, get_field<double>(cfg, "p"),
                           get_field<double>(cfg, "threshold_percentile"));

  const fs::path force_path = out_dir / "forces.csv";
  write_force_trace(trace, force_path);
  manifest.outputs.push_back(force_path.string());
  std::cout << "threshold " << trace.threshold << " (" << trace.alarms.size()
            << " alarm interval(s))\n";
  for (const auto& [lo, hi] : trace.alarms)
    std::cout << "  alarm steps [" << lo << ", " << hi << "]\n";

  manifest.end_time = denkf::iso_timestamp_utc();
  denkf::save_manifest(manifest, out_dir / "forces_manifest.json");
  return 0;
}

int dispatch(const std::string& command, const json& cfg) {
  if (command == "simulate") return run_simulate(cfg);
  if (command == "train") return run_train(cfg);
  if (command == "eval") return run_eval(cfg);
  if (command == "forces") return run_forces(cfg);
  throw denkf::ConfigError("unknown command '" + command + "' in manifest");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"denkf — differentiable ensemble Kalman filtering toolkit"};
  app.require_subcommand(0, 1);

  std::string from_manifest;
  std::string manifest_out_override;
  app.add_option("--from-manifest", from_manifest,
                 "replay a previous run from its manifest (ignores other flags)");
  app.add_option("--out-override", manifest_out_override,
                 "with --from-manifest: redirect outputs to this directory/path");

  // -- simulate ------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "generate synthetic soft-arm datasets");
  std::string sim_config, sim_out;
  double sim_duration = -1.0;
  int sim_freq = 0, sim_datasets = -1;
  std::int64_t sim_seed = -1;
  sim->add_option("--config", sim_config, "simulate config JSON");
  sim->add_option("--out", sim_out, "output directory");
  sim->add_option("--duration", sim_duration, "recording length in seconds");
  sim->add_option("--freq", sim_freq, "restrict generation to one frequency (Hz)");
  sim->add_option("--datasets", sim_datasets, "number of placement sets (1-10)");
  sim->add_option("--seed", sim_seed, "run seed");
  bool sim_print = false;
  sim->add_flag("--print-config", sim_print, "print the resolved config and exit");

  // -- train ---------------------------------------------------------------
  auto* trn = app.add_subcommand("train", "train the filter models end-to-end");
  std::string trn_config, trn_data, trn_out, trn_variant, trn_resume;
  int trn_epochs = -1;
  std::int64_t trn_seed = -1;
  trn->add_option("--config", trn_config, "train config JSON");
  trn->add_option("--data", trn_data, "dataset directory");
  trn->add_option("--out", trn_out, "checkpoint output path");
  trn->add_option("--variant", trn_variant, "fix | pe | pe+te");
  trn->add_option("--epochs", trn_epochs, "epoch count");
  trn->add_option("--resume", trn_resume, "checkpoint to resume from");
  trn->add_option("--seed", trn_seed, "run seed");
  bool trn_print = false;
  trn->add_flag("--print-config", trn_print, "print the resolved config and exit");

  // -- eval ----------------------------------------------------------------
  auto* evl = app.add_subcommand("eval", "run the filter and report metrics");
  std::string evl_config, evl_ckpt, evl_data, evl_out, evl_calib;
  double evl_missing = -1.0;
  int evl_folds = -1, evl_ensemble = -1;
  std::int64_t evl_seed = -1, evl_missing_seed = -1;
  bool evl_forces = false;
  evl->add_option("--config", evl_config, "eval config JSON");
  evl->add_option("--checkpoint", evl_ckpt, "trained checkpoint");
  evl->add_option("--data", evl_data, "dataset file (or directory with --folds)");
  evl->add_option("--out", evl_out, "output directory");
  evl->add_option("--missing-fraction", evl_missing, "mask a contiguous window of this fraction");
  evl->add_option("--missing-seed", evl_missing_seed, "mask placement seed");
  evl->add_flag("--detect-forces", evl_forces, "run force detection on the trajectory");
  evl->add_option("--calibration", evl_calib, "force-free dataset for detection threshold");
  evl->add_option("--folds", evl_folds, "cross-validate with this many folds");
  evl->add_option("--ensemble", evl_ensemble, "ensemble size");
  evl->add_option("--seed", evl_seed, "run seed");
  bool evl_print = false;
  evl->add_flag("--print-config", evl_print, "print the resolved config and exit");

  // -- forces --------------------------------------------------------------
  auto* frc = app.add_subcommand("forces", "interaction detection via Minkowski distance");
  std::string frc_config, frc_ckpt, frc_data, frc_calib, frc_out;
  double frc_bias = 0.0;
  std::int64_t frc_start = -1, frc_len = -1, frc_seed = -1;
  frc->add_option("--config", frc_config, "forces config JSON");
  frc->add_option("--checkpoint", frc_ckpt, "trained checkpoint");
  frc->add_option("--data", frc_data, "dataset to analyze");
  frc->add_option("--calibration", frc_calib, "force-free dataset");
  frc->add_option("--out", frc_out, "output directory");
  frc->add_option("--inject-bias", frc_bias, "synthetic push: bias added to IMU channels");
  frc->add_option("--inject-start", frc_start, "synthetic push start frame");
  frc->add_option("--inject-len", frc_len, "synthetic push length in frames");
  frc->add_option("--seed", frc_seed, "run seed");
  bool frc_print = false;
  frc->add_flag("--print-config", frc_print, "print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (!from_manifest.empty()) {
      denkf::RunManifest m = denkf::load_manifest(from_manifest);
      json cfg = m.config;
      if (!manifest_out_override.empty()) cfg["out"] = manifest_out_override;
      return dispatch(m.command, cfg);
    }

    if (sim->parsed()) {
      json cfg = default_simulate_config();
      if (!sim_config.empty()) merge_config(cfg, load_config_file(sim_config), "");
      if (!sim_out.empty()) cfg["out"] = sim_out;
      if (sim_duration > 0) cfg["duration_s"] = sim_duration;
      if (sim_freq > 0) cfg["frequencies"] = json::array({sim_freq});
      if (sim_datasets > 0) cfg["datasets"] = sim_datasets;
      if (sim_seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(sim_seed);
      apply_env_seed(cfg);
      if (sim_print) {
        std::cout << cfg.dump(2) << "\n";
        return 0;
      }
      return run_simulate(cfg);
    }

    if (trn->parsed()) {
      json cfg = default_train_config();
      if (!trn_config.empty()) merge_config(cfg, load_config_file(trn_config), "");
      if (!trn_data.empty()) cfg["data"] = trn_data;
      if (!trn_out.empty()) cfg["out"] = trn_out;
      if (!trn_variant.empty()) cfg["variant"] = trn_variant;
      if (!trn_resume.empty()) cfg["resume"] = trn_resume;
      if (trn_epochs >= 0) cfg["epochs"] = trn_epochs;
      if (trn_seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(trn_seed);
      apply_env_seed(cfg);
      if (trn_print) {
        std::cout << cfg.dump(2) << "\n";
        return 0;
      }
      return run_train(cfg);
    }

    if (evl->parsed()) {
      json cfg = default_eval_config();
      if (!evl_config.empty()) merge_config(cfg, load_config_file(evl_config), "");
      if (!evl_ckpt.empty()) cfg["checkpoint"] = evl_ckpt;
      if (!evl_data.empty()) cfg["data"] = evl_data;
      if (!evl_out.empty()) cfg["out"] = evl_out;
      if (!evl_calib.empty()) cfg["calibration"] = evl_calib;
      if (evl_missing >= 0) cfg["missing_fraction"] = evl_missing;
      if (evl_missing_seed >= 0) cfg["missing_seed"] = static_cast<std::uint64_t>(evl_missing_seed);
      if (evl_forces) cfg["detect_forces"] = true;
      if (evl_folds >= 0) cfg["folds"] = evl_folds;
      if (evl_ensemble > 0) cfg["ensemble_size"] = evl_ensemble;
      if (evl_seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(evl_seed);
      apply_env_seed(cfg);
      if (evl_print) {
        std::cout << cfg.dump(2) << "\n";
        return 0;
      }
      return run_eval(cfg);
    }

    if (frc->parsed()) {
      json cfg = default_forces_config();
      if (!frc_config.empty()) merge_config(cfg, load_config_file(frc_config), "");
      if (!frc_ckpt.empty()) cfg["checkpoint"] = frc_ckpt;
      if (!frc_data.empty()) cfg["data"] = frc_data;
      if (!frc_calib.empty()) cfg["calibration"] = frc_calib;
      if (!frc_out.empty()) cfg["out"] = frc_out;
      if (frc_bias != 0.0) cfg["inject_bias"] = frc_bias;
      if (frc_start >= 0) cfg["inject_start"] = frc_start;
      if (frc_len >= 0) cfg["inject_len"] = frc_len;
      if (frc_seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(frc_seed);
      apply_env_seed(cfg);
      if (frc_print) {
        std::cout << cfg.dump(2) << "\n";
        return 0;
      }
      return run_forces(cfg);
    }

    std::cout << app.help();
    return 0;
  } catch (const denkf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const denkf::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const denkf::IncompatibleLayout& e) {
    std::cerr << "incompatibility: " << e.what() << "\n";
    return 2;
  } catch (const denkf::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const denkf::TrainingError& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return 3;
  } catch (const denkf::FilterDivergence& e) {
    std::cerr << "filter divergence: " << e.what() << "\n";
    return 3;
  } catch (const denkf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
