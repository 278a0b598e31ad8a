#include "trackeval/features.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

namespace trackeval::features {

ImageMetrics image_metrics(const io::GrayImage& img) {
  if (img.width < 3 || img.height < 3) {
    throw Error(ErrorCode::TooSmall, "image metrics need at least 3x3 pixels");
  }
  std::array<std::size_t, 256> hist{};
  double sum = 0.0;
  for (auto p : img.pixels) {
    ++hist[p];
    sum += p;
  }
  const auto n = static_cast<double>(img.pixels.size());
  ImageMetrics m;
  m.brightness = sum / n;
  double var = 0.0;
  for (auto p : img.pixels) var += (p - m.brightness) * (p - m.brightness);
  m.contrast = std::sqrt(var / n);
  for (auto count : hist) {
    if (count == 0) continue;
    const double prob = static_cast<double>(count) / n;
    m.entropy -= prob * std::log2(prob);
  }

  double lsum = 0.0;
  double lss = 0.0;
  for (int y = 1; y < img.height - 1; ++y) {
    for (int x = 1; x < img.width - 1; ++x) {
      const double l = static_cast<double>(img.at(x - 1, y)) + img.at(x + 1, y) + img.at(x, y - 1) +
                       img.at(x, y + 1) - 4.0 * img.at(x, y);
      lsum += l;
      lss += l * l;
    }
  }
  const double ln = static_cast<double>(img.width - 2) * static_cast<double>(img.height - 2);
  const double lmean = lsum / ln;
  m.laplacian_var = std::max(0.0, lss / ln - lmean * lmean);
  return m;
}

namespace {

constexpr std::array<std::array<int, 2>, 16> kCircle = {{{0, -3}, {1, -3}, {2, -2}, {3, -1},
                                                         {3, 0},  {3, 1},  {2, 2},  {1, 3},
                                                         {0, 3},  {-1, 3}, {-2, 2}, {-3, 1},
                                                         {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}}};
constexpr int kArc = 9;

// Best score over contiguous runs of >= kArc circle pixels sharing a sign; 0 if none.
double segment_score(const io::GrayImage& img, int x, int y, int threshold) {
  const int c = img.at(x, y);
  std::array<int, 16> diff{};
  std::array<int, 16> cls{};  // +1 brighter, -1 darker, 0 similar
  for (std::size_t i = 0; i < 16; ++i) {
    const int p = img.at(x + kCircle[i][0], y + kCircle[i][1]);
    diff[i] = p - c;
    cls[i] = diff[i] > threshold ? 1 : (diff[i] < -threshold ? -1 : 0);
  }
  double best = 0.0;
  for (int sign : {1, -1}) {
    // Start just after a non-member so runs are not split by the wraparound.
    int start = -1;
    for (int i = 0; i < 16; ++i) {
      if (cls[static_cast<std::size_t>(i)] != sign) {
        start = i;
        break;
      }
    }
    if (start < 0) {
      double s = 0.0;
      for (int d : diff) s += std::abs(d);
      best = std::max(best, s);
      continue;
    }
    int run = 0;
    double run_sum = 0.0;
    for (int k = 1; k <= 16; ++k) {
      const auto i = static_cast<std::size_t>((start + k) % 16);
      if (cls[i] == sign) {
        ++run;
        run_sum += std::abs(diff[i]);
      } else {
        if (run >= kArc) best = std::max(best, run_sum);
        run = 0;
        run_sum = 0.0;
      }
    }
    if (run >= kArc) best = std::max(best, run_sum);
  }
  return best;
}

}  // namespace

std::vector<Corner> detect_fast(const io::GrayImage& img, int threshold, bool nonmax) {
  if (img.width < 7 || img.height < 7) {
    throw Error(ErrorCode::TooSmall, "FAST needs at least 7x7 pixels");
  }
  const int w = img.width;
  const int h = img.height;
  std::vector<double> score(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0);
  std::vector<Corner> raw;
  for (int y = 3; y < h - 3; ++y) {
    for (int x = 3; x < w - 3; ++x) {
      const double s = segment_score(img, x, y, threshold);
      if (s > 0.0) {
        score[static_cast<std::size_t>(y) * w + x] = s;
        raw.push_back({x, y, s});
      }
    }
  }
  if (!nonmax) return raw;

  std::vector<Corner> kept;
  for (const auto& c : raw) {
    bool is_max = true;
    for (int dy = -1; dy <= 1 && is_max; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if ((dx || dy) && score[static_cast<std::size_t>(c.y + dy) * w + (c.x + dx)] > c.score) {
          is_max = false;
          break;
        }
      }
    }
    if (is_max) kept.push_back(c);
  }
  return kept;
}

std::size_t fast_corners(const io::GrayImage& img, int threshold, bool nonmax) {
  return detect_fast(img, threshold, nonmax).size();
}

FrameFeatures frame_features(double timestamp, const io::GrayImage& img,
                             std::optional<double> keypoints) {
  const auto m = image_metrics(img);
  FrameFeatures f;
  f.timestamp = timestamp;
  f.brightness = m.brightness;
  f.contrast = m.contrast;
  f.entropy = m.entropy;
  f.laplacian_var = m.laplacian_var;
  f.keypoints = keypoints ? *keypoints : static_cast<double>(fast_corners(img));
  return f;
}

std::vector<FrameFeatures> extract_frame_features(std::span<const io::FrameRecord> frames,
                                                  const std::filesystem::path& image_dir,
                                                  unsigned threads) {
  for (const auto& f : frames) {
    if (!std::filesystem::exists(image_dir / f.filename)) {
      throw Error(ErrorCode::Io, "missing frame image " + (image_dir / f.filename).string());
    }
  }
  std::vector<FrameFeatures> out(frames.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(frames.size(), 1)));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    while (true) {
      const std::size_t i = next++;
      if (i >= frames.size()) return;
      try {
        const auto img = io::read_gray_image(image_dir / frames[i].filename);
        out[i] = frame_features(frames[i].timestamp, img, frames[i].keypoints);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

AxisMap AxisMap::parse(std::string_view text) {
  AxisMap m;
  const auto fields = io::split_fields(text);
  if (fields.size() != 3) {
    throw Error(ErrorCode::BadAxisMap, "axis map needs three entries, e.g. x,y,-z");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    std::string_view f = fields[i];
    int sign = 1;
    if (!f.empty() && (f.front() == '-' || f.front() == '+')) {
      sign = f.front() == '-' ? -1 : 1;
      f.remove_prefix(1);
    }
    if (f.size() != 1 || f[0] < 'x' || f[0] > 'z') {
      throw Error(ErrorCode::BadAxisMap, "axis entries must be x, y or z with optional sign");
    }
    m.source[i] = f[0] - 'x';
    m.sign[i] = sign;
  }
  validate(m);
  return m;
}

void validate(const AxisMap& map) {
  std::array<bool, 3> seen{};
  for (std::size_t i = 0; i < 3; ++i) {
    const int s = map.source[i];
    if (s < 0 || s > 2 || seen[static_cast<std::size_t>(s)] ||
        (map.sign[i] != 1 && map.sign[i] != -1)) {
      throw Error(ErrorCode::BadAxisMap, "axis map is not a signed permutation");
    }
    seen[static_cast<std::size_t>(s)] = true;
  }
}

std::vector<ImuFeatures> imu_features(std::span<const io::ImuSample> samples,
                                      const ImuFeatureOptions& opts) {
  validate(opts.axis_map);
  const auto& m = opts.axis_map;
  auto mapped = [&](const Vec3& v, std::size_t axis) { return m.sign[axis] * v(m.source[axis]); };
  std::vector<ImuFeatures> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    double up = mapped(s.acc, 1);
    if (opts.remove_gravity) up -= opts.gravity;
    ImuFeatures f;
    f.timestamp = s.timestamp;
    f.acc_right = std::abs(mapped(s.acc, 0));
    f.acc_up = std::abs(up);
    f.acc_front = std::abs(mapped(s.acc, 2));
    f.angvel_pitch = std::abs(mapped(s.gyro, 0));
    f.angvel_yaw = std::abs(mapped(s.gyro, 1));
    f.angvel_roll = std::abs(mapped(s.gyro, 2));
    out.push_back(f);
  }
  return out;
}

FeatureTable to_table(std::span<const FrameFeatures> frames) {
  FeatureTable t;
  t.names = {"brightness", "contrast", "entropy", "laplacian_var", "keypoints"};
  t.columns.resize(t.names.size());
  for (const auto& f : frames) {
    t.timestamps.push_back(f.timestamp);
    t.columns[0].push_back(f.brightness);
    t.columns[1].push_back(f.contrast);
    t.columns[2].push_back(f.entropy);
    t.columns[3].push_back(f.laplacian_var);
    t.columns[4].push_back(f.keypoints);
  }
  return t;
}

FeatureTable to_table(std::span<const ImuFeatures> samples) {
  FeatureTable t;
  t.names = {"acc_right", "acc_up", "acc_front", "angvel_pitch", "angvel_yaw", "angvel_roll"};
  t.columns.resize(t.names.size());
  for (const auto& f : samples) {
    t.timestamps.push_back(f.timestamp);
    t.columns[0].push_back(f.acc_right);
    t.columns[1].push_back(f.acc_up);
    t.columns[2].push_back(f.acc_front);
    t.columns[3].push_back(f.angvel_pitch);
    t.columns[4].push_back(f.angvel_yaw);
    t.columns[5].push_back(f.angvel_roll);
  }
  return t;
}

std::string format_feature_table(const FeatureTable& table) {
  std::string out = "timestamp";
  for (const auto& n : table.names) out += "," + n;
  out += '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out += io::format_real(table.timestamps[r]);
    for (const auto& col : table.columns) {
      out += ',';
      out += io::format_real(col[r]);
    }
    out += '\n';
  }
  return out;
}

FeatureTable parse_feature_table(std::string_view text) {
  FeatureTable t;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool have_header = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const auto fields = io::split_fields(line);
    if (!have_header) {
      if (fields.size() < 2 || fields[0] != "timestamp") {
        throw Error(ErrorCode::Parse, "feature table needs a header starting with timestamp", line_no);
      }
      for (std::size_t i = 1; i < fields.size(); ++i) t.names.emplace_back(fields[i]);
      t.columns.resize(t.names.size());
      have_header = true;
      continue;
    }
    if (fields.size() != t.names.size() + 1) {
      throw Error(ErrorCode::Parse, "wrong number of fields", line_no);
    }
    std::vector<double> v(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto x = io::parse_real(fields[i]);
      if (!x) throw Error(ErrorCode::Parse, "non-numeric field", line_no);
      v[i] = *x;
    }
    if (!t.timestamps.empty() && v[0] < t.timestamps.back()) {
      throw Error(ErrorCode::NonMonotonicTimestamps, "feature timestamps go backwards", line_no);
    }
    t.timestamps.push_back(v[0]);
    for (std::size_t c = 0; c < t.names.size(); ++c) t.columns[c].push_back(v[c + 1]);
  }
  if (!have_header) {
    throw Error(ErrorCode::Parse, "empty feature table");
  }
  return t;
}

void write_feature_table(const std::filesystem::path& path, const FeatureTable& table) {
  io::write_text_atomic(path, format_feature_table(table));
}

FeatureTable read_feature_table(const std::filesystem::path& path) {
  return parse_feature_table(io::read_text(path));
}

WindowedTable aggregate_to_windows(const FeatureTable& table, const metrics::ErrorSeries& series) {
  WindowedTable out;
  out.names = table.names;
  out.columns.resize(table.names.size());
  const auto& ts = table.timestamps;
  for (const auto& p : series.points()) {
    const double a = std::min(p.window_start, p.timestamp);
    auto lo = std::lower_bound(ts.begin(), ts.end(), a);
    auto hi = std::upper_bound(ts.begin(), ts.end(), p.timestamp);
    if (lo >= hi) continue;
    const auto first = static_cast<std::size_t>(lo - ts.begin());
    const auto last = static_cast<std::size_t>(hi - ts.begin());
    out.timestamps.push_back(p.timestamp);
    out.errors.push_back(p.error);
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      double sum = 0.0;
      for (std::size_t i = first; i < last; ++i) sum += table.columns[c][i];
      out.columns[c].push_back(sum / static_cast<double>(last - first));
    }
  }
  if (out.timestamps.empty()) {
    throw Error(ErrorCode::NoOverlap, "no error window contains a feature sample");
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) {
    throw Error(ErrorCode::InsufficientData, "Pearson correlation needs at least 3 pairs");
  }
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  // Relative test: a column that is constant up to rounding still has tiny spread.
  auto constant = [&](double ss, double mean) {
    return !(ss > 1e-24 * std::max(1.0, mean * mean) * n);
  };
  if (constant(sxx, mx) || constant(syy, my)) {
    throw Error(ErrorCode::ConstantInput, "Pearson correlation of a constant series");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

const CorrelationEntry* CorrelationReport::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

CorrelationReport correlation_report(const WindowedTable& table) {
  CorrelationReport report;
  for (std::size_t c = 0; c < table.names.size(); ++c) {
    CorrelationEntry e;
    e.name = table.names[c];
    e.n = table.rows();
    try {
      e.r = pearson(table.columns[c], table.errors);
    } catch (const Error& err) {
      e.failure = err.code();
      e.r = 0.0;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

CorrelationReport correlation_report(const FeatureTable& table, const metrics::ErrorSeries& series) {
  return correlation_report(aggregate_to_windows(table, series));
}

CorrelationReport correlation_report(std::span<const FeatureTable> tables,
                                     const metrics::ErrorSeries& series) {
  CorrelationReport merged;
  for (const auto& t : tables) {
    auto part = correlation_report(t, series);
    for (auto& e : part.entries) merged.entries.push_back(std::move(e));
  }
  return merged;
}

std::string report_json(const CorrelationReport& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : report.entries) {
    nlohmann::json j;
    j["feature"] = e.name;
    j["n"] = e.n;
    if (e.failure) {
      j["r"] = nullptr;
      j["error"] = std::string(to_string(*e.failure));
    } else {
      j["r"] = e.r;
    }
    arr.push_back(j);
  }
  return nlohmann::json{{"correlations", arr}}.dump(2) + "\n";
}

}  // namespace trackeval::features
