#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trackeval/calibration.hpp"
#include "trackeval/features.hpp"
#include "trackeval/io.hpp"
#include "trackeval/metrics.hpp"
#include "trackeval/synth.hpp"
#include "trackeval/timesync.hpp"

namespace trackeval::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::NoResponse:
    case ErrorCode::Timeout:
      return kRuntime;
    default:
      return kValidation;
  }
}

fs::path resolve_out_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("TRACKEVAL_OUT_DIR"); env && *env) return env;
  return "trackeval_out";
}

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

json stats_to_json(const metrics::ErrorStats& s) {
  return {{"mean_m", s.mean},     {"rmse_m", s.rmse}, {"median_m", s.median},
          {"max_m", s.max},       {"min_m", s.min},   {"count", s.count}};
}

// ---------------------------------------------------------------- manifest

struct RunSpec {
  std::string device;
  std::string label;
  fs::path estimate;
  fs::path ground_truth;
  std::optional<fs::path> offset_file;
  std::optional<double> offset_value;
  std::optional<fs::path> calibration;
  std::optional<fs::path> imu;
  std::optional<fs::path> frames;
  fs::path frame_dir;
  std::optional<fs::path> features;
  std::optional<fs::path> columns;
  std::string axis_map;
  bool remove_gravity = false;
};

struct CaseStudySpec {
  std::string reference;
  std::string target;
  std::optional<fs::path> mount;
};

struct Manifest {
  fs::path dir;
  std::string reference;
  double segment_length = metrics::kDefaultSegmentLength;
  std::vector<RunSpec> runs;
  std::optional<CaseStudySpec> case_study;
};

Manifest load_manifest(const fs::path& path) {
  const auto text = io::read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadSpec, "manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  m.dir = path.parent_path();
  auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : m.dir / p; };
  try {
    m.reference = j.value("reference", std::string());
    m.segment_length = j.value("segment_length", m.segment_length);
    for (const auto& r : j.at("runs")) {
      RunSpec run;
      run.device = r.at("device").get<std::string>();
      run.label = r.value("label", std::string("run"));
      run.estimate = rel(r.at("estimate").get<std::string>());
      run.ground_truth = rel(r.at("ground_truth").get<std::string>());
      if (r.contains("offset")) {
        if (r["offset"].is_number()) {
          run.offset_value = r["offset"].get<double>();
        } else {
          run.offset_file = rel(r["offset"].get<std::string>());
        }
      }
      if (r.contains("calibration")) run.calibration = rel(r["calibration"].get<std::string>());
      if (r.contains("imu")) run.imu = rel(r["imu"].get<std::string>());
      if (r.contains("frames")) run.frames = rel(r["frames"].get<std::string>());
      run.frame_dir = r.contains("frame_dir") ? rel(r["frame_dir"].get<std::string>()) : m.dir;
      if (r.contains("features")) run.features = rel(r["features"].get<std::string>());
      if (r.contains("columns")) run.columns = rel(r["columns"].get<std::string>());
      run.axis_map = r.value("axis_map", std::string());
      run.remove_gravity = r.value("remove_gravity", false);
      m.runs.push_back(std::move(run));
    }
    if (j.contains("case_study")) {
      const auto& c = j["case_study"];
      CaseStudySpec cs;
      cs.reference = c.value("reference", m.reference);
      cs.target = c.value("target", std::string());
      if (c.contains("mount")) cs.mount = rel(c["mount"].get<std::string>());
      m.case_study = cs;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadSpec, "manifest " + path.string() + ": " + e.what());
  }
  if (m.runs.empty()) throw Error(ErrorCode::BadSpec, "manifest lists no runs");
  return m;
}

struct PreparedRun {
  Trajectory est;
  Trajectory gt;
};

Trajectory load_estimate(const RunSpec& run) {
  std::optional<io::ColumnMapping> mapping;
  if (run.columns) mapping = io::ColumnMapping::from_json_file(*run.columns);
  auto est = io::read_trajectory(run.estimate, mapping ? &*mapping : nullptr);
  if (run.offset_file) {
    est = timesync::apply_offset(est, timesync::read_offset_record(*run.offset_file));
  } else if (run.offset_value) {
    timesync::ClockOffsetEstimate o;
    o.delta = *run.offset_value;
    est = timesync::apply_offset(est, o);
  }
  return est;
}

PreparedRun prepare(const RunSpec& run) {
  PreparedRun p{load_estimate(run), io::read_trajectory(run.ground_truth)};
  if (run.calibration) {
    p.gt = calibration::apply_extrinsic(p.gt, calibration::read_extrinsic(*run.calibration).extrinsic);
  }
  return p;
}

std::string run_stem(const RunSpec& run) {
  std::string s = run.device + "_" + run.label;
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string spec_file;
  std::string model_file;
  std::string pattern = "Shift";
  double bpm = 50.0;
  int beats = 0;
  double amplitude = 0.0;
  double duration = 60.0;
  double gt_rate = 100.0;
  double est_rate = 90.0;
  double tilt = 0.0;
  double imu_rate = 200.0;
  synth::DegradationModel model;
  std::string device = "SIM";
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  synth::MotionSpec spec;
  if (!a.spec_file.empty()) {
    spec = synth::motion_spec_from_json(io::read_text(a.spec_file));
  } else {
    spec.pattern = synth::parse_pattern(a.pattern);
    spec.bpm = a.bpm;
    if (a.beats > 0) spec.beats_per_cycle = a.beats;
    if (a.amplitude > 0.0) spec.amplitude = a.amplitude;
    spec.duration = a.duration;
    spec.gt_rate = a.gt_rate;
    spec.est_rate = a.est_rate;
    spec.tilt_amplitude = a.tilt;
  }
  synth::DegradationModel model = a.model;
  if (!a.model_file.empty()) {
    model = synth::degradation_from_json(io::read_text(a.model_file));
  } else {
    model.est_rate = spec.est_rate;
  }

  const auto gt = synth::generate(spec);
  const auto est = synth::degrade(gt, model);
  const auto imu = synth::derive_imu(gt, a.imu_rate);

  const auto dir = resolve_out_dir(a.out);
  ensure_dir(dir);
  io::write_trajectory(dir / "gt.csv", gt);
  io::write_trajectory(dir / "est.csv", est);
  io::write_imu(dir / "imu.csv", imu);

  json manifest;
  manifest["reference"] = a.device;
  manifest["segment_length"] = metrics::kDefaultSegmentLength;
  manifest["runs"] = json::array({json{{"device", a.device},
                                       {"label", std::string(synth::to_string(spec.pattern))},
                                       {"estimate", "est.csv"},
                                       {"ground_truth", "gt.csv"},
                                       {"imu", "imu.csv"},
                                       {"offset", model.clock_offset}}});
  manifest["motion"] = {{"pattern", std::string(synth::to_string(spec.pattern))},
                        {"bpm", spec.bpm},
                        {"beats_per_cycle", spec.beats()},
                        {"amplitude", spec.amplitude_or_default()},
                        {"duration", spec.duration},
                        {"gt_rate", spec.gt_rate},
                        {"est_rate", spec.est_rate},
                        {"tilt_amplitude", spec.tilt_amplitude}};
  manifest["degradation"] = {{"trans_noise_std", model.trans_noise_std},
                             {"rot_noise_std", model.rot_noise_std},
                             {"drift_rate", model.drift_rate},
                             {"latency", model.latency},
                             {"clock_offset", model.clock_offset},
                             {"rng_seed", model.rng_seed},
                             {"est_rate", model.est_rate}};
  manifest["rows"] = {{"gt", gt.size()}, {"est", est.size()}, {"imu", imu.size()}};
  const auto text = manifest.dump(2) + "\n";
  io::write_text_atomic(dir / "manifest.json", text);
  out << text;
  return kOk;
}

// ---------------------------------------------------------------- sync

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct SyncArgs {
  std::string host = "127.0.0.1";
  std::string bind = "0.0.0.0";
  int port = 47000;
  double serve_for = 0.0;
  double duration = 10.0;
  double rate = 100.0;
  double timeout = 2.0;
  double one_way_delay = -1.0;
  std::string estimator = "mean";
  std::size_t probes = 20;
  std::string offset_file;
  std::optional<double> delta;
  std::string input;
  std::string output;
  bool imu = false;
  std::string out;
};

int cmd_sync_serve(const SyncArgs& a, std::ostream& out) {
  timesync::SyncServer::Options opts;
  opts.bind_address = a.bind;
  opts.port = static_cast<std::uint16_t>(a.port);
  timesync::SyncServer server(opts);
  server.start();
  out << "serving on " << a.bind << ":" << server.port() << std::endl;
  g_interrupted = false;
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  const auto started = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (a.serve_for > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() >= a.serve_for) {
      break;
    }
  }
  server.stop();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  out << "sessions served: " << server.sessions_started() << "\n";
  return kOk;
}

int cmd_sync_client(const SyncArgs& a, std::ostream& out) {
  timesync::SessionOptions opts;
  opts.duration = a.duration;
  opts.rate_hz = a.rate;
  opts.timeout = a.timeout;
  opts.rtt_probes = a.probes;
  if (a.one_way_delay >= 0.0) opts.one_way_delay = a.one_way_delay;
  opts.estimator = a.estimator == "median" ? timesync::Estimator::Median : timesync::Estimator::Mean;
  const auto est = timesync::run_sync_session({a.host, static_cast<std::uint16_t>(a.port)}, opts);
  const fs::path path = a.output.empty() ? resolve_out_dir(a.out) / "offset.csv" : fs::path(a.output);
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  timesync::write_offset_record(path, est);
  out << "delta " << fixed(est.delta * 1e3, 3) << " ms, jitter " << fixed(est.jitter_std * 1e3, 3)
      << " ms, " << est.n_samples << " samples, one-way delay "
      << fixed(est.assumed_one_way_delay * 1e3, 3) << " ms -> " << path.string() << "\n";
  return kOk;
}

int cmd_sync_probe(const SyncArgs& a, std::ostream& out) {
  const auto r = timesync::probe_rtt({a.host, static_cast<std::uint16_t>(a.port)}, a.probes, a.timeout);
  out << "rtt " << fixed(r.mean_rtt * 1e3, 3) << " ms, one-way " << fixed(r.one_way_delay * 1e3, 3)
      << " ms over " << r.n_received << " probes\n";
  return kOk;
}

int cmd_sync_apply(const SyncArgs& a, std::ostream& out) {
  timesync::ClockOffsetEstimate est;
  if (a.delta) {
    est.delta = *a.delta;
  } else if (!a.offset_file.empty()) {
    est = timesync::read_offset_record(a.offset_file);
  } else {
    throw Error(ErrorCode::BadSpec, "sync apply needs --offset FILE or --delta SECONDS");
  }
  if (a.imu) {
    const auto samples = io::read_imu(a.input);
    io::write_imu(a.output, timesync::apply_offset(samples, est));
  } else {
    io::write_trajectory(a.output, timesync::apply_offset(io::read_trajectory(a.input), est));
  }
  out << "shifted " << a.input << " by " << fixed(-est.delta * 1e3, 3) << " ms -> " << a.output << "\n";
  return kOk;
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  std::string gt;
  std::string est;
  std::string offset;
  std::string columns;
  std::string output;
  std::string out;
  std::size_t min_pairs = 50;
  std::size_t max_iterations = 100;
  bool trimmed = false;
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  RunSpec run;
  run.estimate = a.est;
  run.ground_truth = a.gt;
  if (!a.offset.empty()) run.offset_file = a.offset;
  if (!a.columns.empty()) run.columns = a.columns;
  const auto est = load_estimate(run);
  const auto gt = io::read_trajectory(a.gt);
  calibration::CalibrationOptions opts;
  opts.min_pairs = a.min_pairs;
  opts.max_iterations = a.max_iterations;
  opts.trimmed_refit = a.trimmed;
  const auto result = calibration::calibrate_extrinsic(gt, est, opts);
  const fs::path path = a.output.empty() ? resolve_out_dir(a.out) / "calibration.json" : fs::path(a.output);
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  calibration::write_extrinsic(path, result);
  const auto& t = result.extrinsic.translation;
  out << "extrinsic t = (" << fixed(t.x(), 4) << ", " << fixed(t.y(), 4) << ", " << fixed(t.z(), 4)
      << ") m, residual " << fixed(result.residual_rmse * 1e3, 3) << " mm, " << result.iterations
      << " iterations" << (result.converged ? "" : " (not converged)") << " -> " << path.string()
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------- evaluate

struct RunOutcome {
  const RunSpec* run = nullptr;
  std::optional<metrics::ErrorSeries> ape;
  std::optional<metrics::ErrorSeries> rpe;
  std::string error;
  int code = kOk;
};

template <class F>
std::vector<RunOutcome> for_each_run(const Manifest& m, F&& body) {
  std::vector<std::future<RunOutcome>> jobs;
  for (const auto& run : m.runs) {
    jobs.push_back(std::async(std::launch::async, [&run, &body] {
      RunOutcome o;
      o.run = &run;
      try {
        body(run, o);
      } catch (const Error& e) {
        o.error = e.what();
        o.code = exit_code_for(e.code());
      } catch (const fs::filesystem_error& e) {
        o.error = e.what();
        o.code = kRuntime;
      }
      return o;
    }));
  }
  std::vector<RunOutcome> outcomes;
  for (auto& j : jobs) outcomes.push_back(j.get());
  return outcomes;
}

struct EvaluateArgs {
  std::string manifest;
  std::string means;
  std::string reference;
  double segment = 0.0;
  std::string out;
};

int emit_ratio_reports(std::span<const DeviceMeans> means, const std::string& reference,
                       const fs::path& dir, std::ostream& out) {
  const auto rows = ratio_table(means, reference);
  io::write_text_atomic(dir / "report.json", format_report_json(rows, reference));
  const auto text = format_report_text(rows, reference);
  io::write_text_atomic(dir / "report.txt", text);
  io::write_text_atomic(dir / "fig6_bars.csv", format_fig6_csv(rows));
  out << text;
  return kOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  const auto dir = resolve_out_dir(a.out);
  ensure_dir(dir);
  if (!a.means.empty()) {
    const auto means = parse_means_csv(io::read_text(a.means));
    const std::string ref = a.reference.empty() ? means.back().device : a.reference;
    return emit_ratio_reports(means, ref, dir, out);
  }
  if (a.manifest.empty()) throw Error(ErrorCode::BadSpec, "evaluate needs --manifest or --means");

  const auto m = load_manifest(a.manifest);
  const double seg = a.segment > 0.0 ? a.segment : m.segment_length;
  std::string reference = a.reference.empty() ? m.reference : a.reference;
  const auto series_dir = dir / "series";
  ensure_dir(series_dir);

  auto outcomes = for_each_run(m, [&](const RunSpec& run, RunOutcome& o) {
    const auto p = prepare(run);
    o.ape = metrics::ape(p.est, p.gt);
    o.rpe = metrics::rpe(p.est, p.gt, seg);
    const auto stem = run_stem(run);
    metrics::write_error_series(series_dir / (stem + "_ape.csv"), *o.ape);
    metrics::write_error_series(series_dir / (stem + "_rpe.csv"), *o.rpe);
  });

  // Device mean = mean over that device's runs of the per-run mean.
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_device;
  json runs = json::array();
  int worst = kOk;
  for (const auto& o : outcomes) {
    json r{{"device", o.run->device}, {"label", o.run->label}};
    if (o.code != kOk) {
      err << o.run->device << "/" << o.run->label << ": " << o.error << "\n";
      worst = std::max(worst, o.code);
      r["error"] = o.error;
    } else {
      if (!per_device.count(o.run->device)) order.push_back(o.run->device);
      per_device[o.run->device].first.push_back(o.rpe->stats().mean);
      per_device[o.run->device].second.push_back(o.ape->stats().mean);
      r["ape"] = stats_to_json(o.ape->stats());
      r["rpe"] = stats_to_json(o.rpe->stats());
    }
    runs.push_back(r);
  }
  io::write_text_atomic(dir / "runs.json", json{{"segment_length_m", seg}, {"runs", runs}}.dump(2) + "\n");

  if (order.empty()) return worst == kOk ? kValidation : worst;
  std::vector<DeviceMeans> means;
  for (const auto& d : order) {
    const auto& [rpe, ape] = per_device[d];
    auto avg = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    means.push_back({d, 100.0 * avg(rpe), 100.0 * avg(ape)});
  }
  if (reference.empty()) reference = order.front();
  if (!per_device.count(reference)) {
    err << "reference device '" << reference << "' has no successful runs; ratios use "
        << order.front() << "\n";
    reference = order.front();
    worst = std::max<int>(worst, kValidation);
  }
  emit_ratio_reports(means, reference, dir, out);
  return worst;
}

// ---------------------------------------------------------------- correlate

struct CorrelateArgs {
  std::string manifest;
  double segment = 0.0;
  std::string out;
};

// Windowed tables for one run, one per feature source.
struct RunWindows {
  std::vector<features::WindowedTable> ape;
  std::vector<features::WindowedTable> rpe;
};

void append_rows(features::WindowedTable& into, const features::WindowedTable& from) {
  if (into.names.empty()) {
    into = from;
    return;
  }
  into.timestamps.insert(into.timestamps.end(), from.timestamps.begin(), from.timestamps.end());
  into.errors.insert(into.errors.end(), from.errors.begin(), from.errors.end());
  for (std::size_t c = 0; c < into.columns.size(); ++c) {
    into.columns[c].insert(into.columns[c].end(), from.columns[c].begin(), from.columns[c].end());
  }
}

std::string source_key(const features::WindowedTable& t) {
  std::string k;
  for (const auto& n : t.names) k += n + ",";
  return k;
}

int cmd_correlate(const CorrelateArgs& a, std::ostream& out, std::ostream& err) {
  const auto m = load_manifest(a.manifest);
  const double seg = a.segment > 0.0 ? a.segment : m.segment_length;
  const auto dir = resolve_out_dir(a.out);
  ensure_dir(dir);

  std::vector<RunWindows> windows(m.runs.size());
  auto outcomes = for_each_run(m, [&](const RunSpec& run, RunOutcome& o) {
    std::vector<features::FeatureTable> tables;
    if (run.features) tables.push_back(features::read_feature_table(*run.features));
    if (run.frames) {
      const auto index = io::read_frame_index(*run.frames);
      const auto feats = features::extract_frame_features(index, run.frame_dir, 1);
      tables.push_back(features::to_table(feats));
    }
    if (run.imu) {
      features::ImuFeatureOptions opts;
      if (!run.axis_map.empty()) opts.axis_map = features::AxisMap::parse(run.axis_map);
      opts.remove_gravity = run.remove_gravity;
      const auto samples = io::read_imu(*run.imu);
      tables.push_back(features::to_table(features::imu_features(samples, opts)));
    }
    if (tables.empty()) {
      throw Error(ErrorCode::BadSpec, "run has no features, frames or imu entry");
    }
    const auto p = prepare(run);
    o.ape = metrics::ape(p.est, p.gt);
    o.rpe = metrics::rpe(p.est, p.gt, seg);
    auto& w = windows[static_cast<std::size_t>(&run - m.runs.data())];
    for (const auto& t : tables) {
      w.ape.push_back(features::aggregate_to_windows(t, *o.ape));
      w.rpe.push_back(features::aggregate_to_windows(t, *o.rpe));
    }
  });

  int worst = kOk;
  std::vector<std::string> order;
  // device -> source key -> pooled windows
  std::map<std::string, std::map<std::string, std::pair<features::WindowedTable, features::WindowedTable>>> pooled;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.code != kOk) {
      err << o.run->device << "/" << o.run->label << ": " << o.error << "\n";
      worst = std::max(worst, o.code);
      continue;
    }
    if (!pooled.count(o.run->device)) order.push_back(o.run->device);
    auto& dev = pooled[o.run->device];
    for (std::size_t s = 0; s < windows[i].ape.size(); ++s) {
      auto& slot = dev[source_key(windows[i].ape[s])];
      append_rows(slot.first, windows[i].ape[s]);
      append_rows(slot.second, windows[i].rpe[s]);
    }
  }

  json all = json::object();
  // Matrix layout: one row per device, one column per feature.
  std::vector<std::string> columns;
  std::map<std::string, std::map<std::string, std::pair<std::string, std::string>>> cells;
  auto cell = [](const features::CorrelationEntry& e) {
    return e.failure ? std::string() : io::format_real(e.r);
  };
  auto shown = [](const features::CorrelationEntry& e) {
    return e.failure ? std::string(to_string(*e.failure)) : fixed(e.r, 3);
  };
  for (const auto& device : order) {
    features::CorrelationReport ape_report;
    features::CorrelationReport rpe_report;
    for (const auto& [key, tables] : pooled[device]) {
      for (auto& e : features::correlation_report(tables.first).entries) ape_report.entries.push_back(e);
      for (auto& e : features::correlation_report(tables.second).entries) rpe_report.entries.push_back(e);
    }
    std::string text = "correlation with pose error: " + device + "\n" + pad("feature", 16, true) +
                       pad("APE r", 14) + pad("RPE r", 14) + "\n";
    for (std::size_t k = 0; k < ape_report.entries.size(); ++k) {
      const auto& ea = ape_report.entries[k];
      const auto& er = rpe_report.entries[k];
      if (std::find(columns.begin(), columns.end(), ea.name) == columns.end()) columns.push_back(ea.name);
      cells[device][ea.name] = {cell(ea), cell(er)};
      text += pad(ea.name, 16, true) + pad(shown(ea), 14) + pad(shown(er), 14) + "\n";
    }
    all[device] = {{"ape", json::parse(features::report_json(ape_report))["correlations"]},
                   {"rpe", json::parse(features::report_json(rpe_report))["correlations"]}};
    out << text;
  }
  for (const bool use_rpe : {false, true}) {
    std::string csv = "device";
    for (const auto& c : columns) csv += "," + c;
    csv += "\n";
    for (const auto& device : order) {
      csv += device;
      for (const auto& c : columns) {
        const auto it = cells[device].find(c);
        csv += ",";
        if (it != cells[device].end()) csv += use_rpe ? it->second.second : it->second.first;
      }
      csv += "\n";
    }
    io::write_text_atomic(dir / (use_rpe ? "fig7_matrix_rpe.csv" : "fig7_matrix_ape.csv"), csv);
  }
  io::write_text_atomic(dir / "correlation.json", all.dump(2) + "\n");
  if (order.empty() && worst == kOk) worst = kValidation;
  return worst;
}

// ---------------------------------------------------------------- case study

struct CaseStudyArgs {
  std::string manifest;
  std::string reference;
  std::string target;
  std::string mount;
  double segment = 0.0;
  std::string out;
};

int cmd_case_study(const CaseStudyArgs& a, std::ostream& out) {
  const auto m = load_manifest(a.manifest);
  const double seg = a.segment > 0.0 ? a.segment : m.segment_length;
  CaseStudySpec cs = m.case_study.value_or(CaseStudySpec{m.reference, "", std::nullopt});
  if (!a.reference.empty()) cs.reference = a.reference;
  if (!a.target.empty()) cs.target = a.target;
  if (!a.mount.empty()) cs.mount = fs::path(a.mount);
  if (cs.reference.empty() || cs.target.empty()) {
    throw Error(ErrorCode::BadSpec, "case study needs a reference and a target device");
  }
  if (!cs.mount) {
    throw Error(ErrorCode::BadSpec,
                "case study needs the mount calibration between " + cs.reference + " and " +
                    cs.target + ": run `trackeval calibrate --gt <" + cs.reference +
                    " estimate> --est <" + cs.target +
                    " estimate>` and pass the result with --mount or case_study.mount");
  }
  if (!fs::exists(*cs.mount)) {
    throw Error(ErrorCode::BadSpec, "mount calibration " + cs.mount->string() + " does not exist");
  }
  const Pose mount = calibration::read_extrinsic(*cs.mount).extrinsic;

  std::map<std::string, const RunSpec*> refs;
  for (const auto& r : m.runs) {
    if (r.device == cs.reference) refs[r.label] = &r;
  }
  metrics::PairedErrors pooled_ape;
  metrics::PairedErrors pooled_rpe;
  json labels = json::object();
  std::string text = "reference substitution: " + cs.reference + " as ground truth for " + cs.target +
                     "\n" + pad("label", 12, true) + pad("R2 RPE", 10) + pad("R2 APE", 10) + "\n";
  auto r2_or_null = [](const metrics::PairedErrors& p) -> json {
    try {
      return metrics::r_squared(p.a, p.b);
    } catch (const Error&) {
      return nullptr;
    }
  };
  auto show = [](const json& v) { return v.is_null() ? std::string("n/a") : fixed(v.get<double>(), 3); };
  std::size_t matched = 0;
  for (const auto& run : m.runs) {
    if (run.device != cs.target || !refs.count(run.label)) continue;
    ++matched;
    const auto target = prepare(run);
    const auto ref_est = load_estimate(*refs[run.label]);
    const auto sub = metrics::substitute_reference(ref_est, mount, target.est, seg);
    const auto truth_ape = metrics::ape(target.est, target.gt);
    const auto truth_rpe = metrics::rpe(target.est, target.gt, seg);
    const auto pa = metrics::pair_series(truth_ape, sub.ape);
    const auto pr = metrics::pair_series(truth_rpe, sub.rpe);
    pooled_ape.a.insert(pooled_ape.a.end(), pa.a.begin(), pa.a.end());
    pooled_ape.b.insert(pooled_ape.b.end(), pa.b.begin(), pa.b.end());
    pooled_rpe.a.insert(pooled_rpe.a.end(), pr.a.begin(), pr.a.end());
    pooled_rpe.b.insert(pooled_rpe.b.end(), pr.b.begin(), pr.b.end());
    const json r2r = r2_or_null(pr);
    const json r2a = r2_or_null(pa);
    labels[run.label] = {{"r2_rpe", r2r}, {"r2_ape", r2a}, {"pairs_rpe", pr.a.size()},
                         {"pairs_ape", pa.a.size()}};
    text += pad(run.label, 12, true) + pad(show(r2r), 10) + pad(show(r2a), 10) + "\n";
  }
  if (matched == 0) {
    throw Error(ErrorCode::BadSpec, "no label has runs for both " + cs.reference + " and " + cs.target);
  }
  const json all_r = r2_or_null(pooled_rpe);
  const json all_a = r2_or_null(pooled_ape);
  text += pad("all", 12, true) + pad(show(all_r), 10) + pad(show(all_a), 10) + "\n";
  json report{{"reference", cs.reference}, {"target", cs.target}, {"segment_length_m", seg},
              {"r2_rpe", all_r},           {"r2_ape", all_a},     {"labels", labels}};
  const auto dir = resolve_out_dir(a.out);
  ensure_dir(dir);
  io::write_text_atomic(dir / "case_study.json", report.dump(2) + "\n");
  io::write_text_atomic(dir / "case_study.txt", text);
  out << text;
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------- reports

std::vector<DeviceReport> ratio_table(std::span<const DeviceMeans> means, std::string_view reference) {
  const auto ref = std::find_if(means.begin(), means.end(),
                                [&](const DeviceMeans& d) { return d.device == reference; });
  if (ref == means.end()) {
    throw Error(ErrorCode::BadSpec, "reference device '" + std::string(reference) + "' not found");
  }
  if (!(ref->rpe_cm > 0.0) || !(ref->ape_cm > 0.0)) {
    throw Error(ErrorCode::BadSpec, "reference device has a zero mean error");
  }
  std::vector<DeviceReport> rows;
  for (const auto& d : means) {
    rows.push_back({d.device, d.rpe_cm, d.ape_cm, 100.0 * d.rpe_cm / ref->rpe_cm,
                    100.0 * d.ape_cm / ref->ape_cm});
  }
  return rows;
}

std::vector<DeviceMeans> parse_means_csv(std::string_view text) {
  std::vector<DeviceMeans> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto f = io::split_fields(line);
    if (f.size() != 3) throw Error(ErrorCode::Parse, "expected device,rpe_cm,ape_cm", line_no);
    const auto rpe = io::parse_real(f[1]);
    const auto ape = io::parse_real(f[2]);
    if (!rpe || !ape) {
      if (line_no == 1) continue;  // header
      throw Error(ErrorCode::Parse, "non-numeric mean", line_no);
    }
    out.push_back({std::string(f[0]), *rpe, *ape});
  }
  if (out.empty()) throw Error(ErrorCode::Empty, "no device means");
  return out;
}

std::string format_report_text(std::span<const DeviceReport> rows, std::string_view reference) {
  std::string s = pad("device", 10, true) + pad("RPE cm", 10) + pad("APE cm", 10) + pad("RPE %", 10) +
                  pad("APE %", 10) + "\n";
  for (const auto& r : rows) {
    s += pad(r.device, 10, true) + pad(fixed(r.rpe_cm, 2), 10) + pad(fixed(r.ape_cm, 2), 10) +
         pad(fixed(r.rpe_ratio, 1), 10) + pad(fixed(r.ape_ratio, 1), 10) + "\n";
  }
  s += "ratios relative to " + std::string(reference) + "\n";
  return s;
}

std::string format_report_json(std::span<const DeviceReport> rows, std::string_view reference) {
  json devices = json::array();
  for (const auto& r : rows) {
    devices.push_back({{"device", r.device},
                       {"rpe_mean_cm", r.rpe_cm},
                       {"ape_mean_cm", r.ape_cm},
                       {"rpe_ratio_pct", r.rpe_ratio},
                       {"ape_ratio_pct", r.ape_ratio}});
  }
  return json{{"reference", reference}, {"devices", devices}}.dump(2) + "\n";
}

std::string format_fig6_csv(std::span<const DeviceReport> rows) {
  std::string s = "device,rpe_mean_cm,ape_mean_cm,rpe_ratio_pct,ape_ratio_pct\n";
  for (const auto& r : rows) {
    s += r.device + "," + io::format_real(r.rpe_cm) + "," + io::format_real(r.ape_cm) + "," +
         io::format_real(r.rpe_ratio) + "," + io::format_real(r.ape_ratio) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------- parser

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trajectory evaluation for XR headset tracking", "trackeval"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "trackeval 0.1.0");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate ground truth, a degraded estimate and IMU");
  simulate->add_option("--spec", sim.spec_file, "Motion spec JSON (overrides motion flags)");
  simulate->add_option("--model", sim.model_file, "Degradation model JSON (overrides model flags)");
  simulate->add_option("--pattern", sim.pattern, "Shift, Patrol, Inspect or Rotate")->capture_default_str();
  simulate->add_option("--bpm", sim.bpm)->capture_default_str();
  simulate->add_option("--beats", sim.beats, "Beats per cycle (pattern default when 0)");
  simulate->add_option("--amplitude", sim.amplitude, "m or rad (pattern default when 0)");
  simulate->add_option("--duration", sim.duration)->capture_default_str();
  simulate->add_option("--gt-rate", sim.gt_rate)->capture_default_str();
  simulate->add_option("--est-rate", sim.est_rate)->capture_default_str();
  simulate->add_option("--tilt", sim.tilt, "Pitch/roll nod amplitude, rad");
  simulate->add_option("--imu-rate", sim.imu_rate)->capture_default_str();
  simulate->add_option("--trans-noise", sim.model.trans_noise_std, "m");
  simulate->add_option("--rot-noise", sim.model.rot_noise_std, "rad");
  simulate->add_option("--drift", sim.model.drift_rate, "m per m travelled");
  simulate->add_option("--latency", sim.model.latency, "s");
  simulate->add_option("--clock-offset", sim.model.clock_offset, "s");
  simulate->add_option("--seed", sim.model.rng_seed);
  simulate->add_option("--device", sim.device)->capture_default_str();
  simulate->add_option("--out", sim.out, "Output directory");

  SyncArgs sy;
  auto* sync = app.add_subcommand("sync", "Clock offset protocol");
  sync->require_subcommand(1);
  auto* serve = sync->add_subcommand("serve", "Stream server timestamps over UDP");
  serve->add_option("--bind", sy.bind)->capture_default_str();
  serve->add_option("--port", sy.port)->capture_default_str();
  serve->add_option("--serve-for", sy.serve_for, "Stop after this many seconds (0: until interrupted)");
  auto* client = sync->add_subcommand("client", "Run one session and write an offset record");
  auto* probe = sync->add_subcommand("probe", "Measure the round-trip time");
  for (auto* c : {client, probe}) {
    c->add_option("--host", sy.host)->capture_default_str();
    c->add_option("--port", sy.port)->capture_default_str();
    c->add_option("--timeout", sy.timeout, "s")->capture_default_str();
    c->add_option("--probes", sy.probes)->capture_default_str();
  }
  client->add_option("--duration", sy.duration, "s")->capture_default_str();
  client->add_option("--rate", sy.rate, "messages per second")->capture_default_str();
  client->add_option("--one-way-delay", sy.one_way_delay, "s (measured when omitted)");
  client->add_option("--estimator", sy.estimator)->check(CLI::IsMember({"mean", "median"}));
  client->add_option("--output", sy.output, "Offset record path");
  client->add_option("--out", sy.out, "Output directory");
  auto* apply = sync->add_subcommand("apply", "Shift a pose or IMU CSV onto the reference clock");
  apply->add_option("--offset", sy.offset_file, "Offset record");
  apply->add_option("--delta", sy.delta, "Offset in seconds");
  apply->add_option("--input", sy.input)->required();
  apply->add_option("--output", sy.output)->required();
  apply->add_flag("--imu", sy.imu, "Input is an IMU CSV");

  CalibrateArgs cal;
  auto* calibrate = app.add_subcommand("calibrate", "Estimate the marker-to-device extrinsic");
  calibrate->add_option("--gt", cal.gt, "Ground-truth pose CSV")->required();
  calibrate->add_option("--est", cal.est, "Device pose CSV")->required();
  calibrate->add_option("--offset", cal.offset, "Offset record for the device clock");
  calibrate->add_option("--columns", cal.columns, "Header mapping JSON for the device CSV");
  calibrate->add_option("--output", cal.output, "Calibration JSON path");
  calibrate->add_option("--out", cal.out, "Output directory");
  calibrate->add_option("--min-pairs", cal.min_pairs)->capture_default_str();
  calibrate->add_option("--max-iterations", cal.max_iterations)->capture_default_str();
  calibrate->add_flag("--trimmed", cal.trimmed, "Refit without the worst 10% of pairs");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "APE/RPE per device and ratios to a reference");
  evaluate->add_option("--manifest", ev.manifest);
  evaluate->add_option("--means", ev.means, "CSV of device,rpe_cm,ape_cm; only the ratio stage runs");
  evaluate->add_option("--reference", ev.reference, "Reference device id");
  evaluate->add_option("--segment", ev.segment, "RPE segment length, m (default 0.10)");
  evaluate->add_option("--out", ev.out, "Output directory");

  CorrelateArgs co;
  auto* correlate = app.add_subcommand("correlate", "Pearson correlation of features with pose error");
  correlate->add_option("--manifest", co.manifest)->required();
  correlate->add_option("--segment", co.segment, "RPE segment length, m");
  correlate->add_option("--out", co.out, "Output directory");

  CaseStudyArgs cs;
  auto* case_study = app.add_subcommand("case-study", "Evaluate with a reference device as ground truth");
  case_study->add_option("--manifest", cs.manifest)->required();
  case_study->add_option("--reference", cs.reference);
  case_study->add_option("--target", cs.target);
  case_study->add_option("--mount", cs.mount, "Calibration JSON from reference to target");
  case_study->add_option("--segment", cs.segment, "RPE segment length, m");
  case_study->add_option("--out", cs.out, "Output directory");

  std::vector<std::string> storage{"trackeval"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim, out);
    if (serve->parsed()) return cmd_sync_serve(sy, out);
    if (client->parsed()) return cmd_sync_client(sy, out);
    if (probe->parsed()) return cmd_sync_probe(sy, out);
    if (apply->parsed()) return cmd_sync_apply(sy, out);
    if (calibrate->parsed()) return cmd_calibrate(cal, out);
    if (evaluate->parsed()) return cmd_evaluate(ev, out, err);
    if (correlate->parsed()) return cmd_correlate(co, out, err);
    if (case_study->parsed()) return cmd_case_study(cs, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}

}  // namespace trackeval::cli
