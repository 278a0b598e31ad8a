#include "trackeval/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#ifdef TRACKEVAL_HAVE_PNG
#include <png.h>
#endif

#include "trackeval/error.hpp"

namespace trackeval::io {

GrayImage::GrayImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

std::string format_real(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_real(std::string_view token) {
  while (!token.empty() && (token.front() == ' ' || token.front() == '\t')) token.remove_prefix(1);
  while (!token.empty() && (token.back() == ' ' || token.back() == '\t')) token.remove_suffix(1);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  if (token.empty()) {
    return std::nullopt;
  }
  double v = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                    : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::Io, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, std::string_view content) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(rng() % 1000000007ULL);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      throw Error(ErrorCode::Io, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot rename into " + path.string());
  }
}

ColumnMapping ColumnMapping::from_json_file(const fs::path& path) {
  ColumnMapping m;
  try {
    const auto doc = nlohmann::json::parse(read_text(path));
    for (const auto& [key, value] : doc.items()) {
      m.columns[key] = value.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, "column mapping " + path.string() + ": " + e.what());
  }
  return m;
}

namespace {

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string_view> fields;
};

struct CsvDoc {
  std::vector<std::string_view> header;
  std::size_t header_line = 0;
  std::vector<CsvRow> rows;
};

// Splits text into rows; the first non-blank line is a header when its first
// field is not numeric.
CsvDoc split_csv(std::string_view text) {
  CsvDoc doc;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool first = true;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    auto fields = split_fields(line);
    if (first) {
      first = false;
      if (!parse_real(fields.front())) {
        doc.header = std::move(fields);
        doc.header_line = line_no;
        continue;
      }
    }
    doc.rows.push_back({line_no, std::move(fields)});
  }
  return doc;
}

// Column index per canonical name. Positional unless a mapping is supplied.
std::vector<std::size_t> resolve_columns(const CsvDoc& doc, std::span<const std::string_view> names,
                                         const ColumnMapping* mapping, std::size_t& expected_fields) {
  std::vector<std::size_t> idx(names.size());
  if (mapping == nullptr) {
    for (std::size_t i = 0; i < names.size(); ++i) idx[i] = i;
    expected_fields = names.size();
    if (!doc.header.empty() && doc.header.size() != expected_fields) {
      throw Error(ErrorCode::Parse,
                  "header has " + std::to_string(doc.header.size()) + " columns, expected " +
                      std::to_string(expected_fields),
                  doc.header_line);
    }
    return idx;
  }
  if (doc.header.empty()) {
    throw Error(ErrorCode::Parse, "column mapping given but file has no header line", 1);
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string key(names[i]);
    auto it = mapping->columns.find(key);
    const std::string wanted = it == mapping->columns.end() ? key : it->second;
    auto pos = std::find(doc.header.begin(), doc.header.end(), wanted);
    if (pos == doc.header.end()) {
      throw Error(ErrorCode::Parse, "header lacks column '" + wanted + "'", doc.header_line);
    }
    idx[i] = static_cast<std::size_t>(pos - doc.header.begin());
  }
  expected_fields = doc.header.size();
  return idx;
}

std::vector<double> numeric_fields(const CsvRow& row, std::span<const std::size_t> idx,
                                   std::size_t expected_fields) {
  if (row.fields.size() != expected_fields) {
    throw Error(ErrorCode::Parse,
                "expected " + std::to_string(expected_fields) + " fields, found " +
                    std::to_string(row.fields.size()),
                row.line);
  }
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto v = parse_real(row.fields[idx[i]]);
    if (!v) {
      throw Error(ErrorCode::Parse, "non-numeric field '" + std::string(row.fields[idx[i]]) + "'",
                  row.line);
    }
    out[i] = *v;
  }
  return out;
}

constexpr std::string_view kPoseColumns[] = {"timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"};
constexpr std::string_view kImuColumns[] = {"timestamp", "ax", "ay", "az", "gx", "gy", "gz"};

std::string join_header(std::span<const std::string_view> names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += ',';
    out += names[i];
  }
  out += '\n';
  return out;
}

void append_row(std::string& out, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    if (!first) out += ',';
    first = false;
    out += format_real(v);
  }
  out += '\n';
}

}  // namespace

Trajectory parse_trajectory(std::string_view text, const ColumnMapping* mapping) {
  const CsvDoc doc = split_csv(text);
  std::size_t expected = 0;
  const auto idx = resolve_columns(doc, kPoseColumns, mapping, expected);
  std::vector<PoseSample> samples;
  samples.reserve(doc.rows.size());
  for (const auto& row : doc.rows) {
    const auto v = numeric_fields(row, idx, expected);
    if (!samples.empty() && !(v[0] > samples.back().timestamp)) {
      throw Error(ErrorCode::NonMonotonicTimestamps,
                  "timestamp " + format_real(v[0]) + " does not increase", row.line);
    }
    Quat q(v[7], v[4], v[5], v[6]);
    const double norm = q.norm();
    if (std::abs(norm - 1.0) > 1e-3) {
      throw Error(ErrorCode::BadQuaternion, "quaternion norm " + format_real(norm), row.line);
    }
    samples.push_back({v[0], Pose(q, Vec3(v[1], v[2], v[3]))});
  }
  return Trajectory(std::move(samples));
}

Trajectory read_trajectory(const fs::path& path, const ColumnMapping* mapping) {
  return parse_trajectory(read_text(path), mapping);
}

std::string format_trajectory(const Trajectory& traj) {
  std::string out = join_header(kPoseColumns);
  for (const auto& s : traj.samples()) {
    const auto& t = s.pose.translation;
    const auto& q = s.pose.rotation;
    append_row(out, {s.timestamp, t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()});
  }
  return out;
}

void write_trajectory(const fs::path& path, const Trajectory& traj) {
  write_text_atomic(path, format_trajectory(traj));
}

std::vector<ImuSample> parse_imu(std::string_view text, const ColumnMapping* mapping) {
  const CsvDoc doc = split_csv(text);
  std::size_t expected = 0;
  const auto idx = resolve_columns(doc, kImuColumns, mapping, expected);
  std::vector<ImuSample> out;
  out.reserve(doc.rows.size());
  for (const auto& row : doc.rows) {
    const auto v = numeric_fields(row, idx, expected);
    if (!out.empty() && v[0] < out.back().timestamp) {
      throw Error(ErrorCode::NonMonotonicTimestamps,
                  "timestamp " + format_real(v[0]) + " goes backwards", row.line);
    }
    out.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

std::vector<ImuSample> read_imu(const fs::path& path, const ColumnMapping* mapping) {
  return parse_imu(read_text(path), mapping);
}

std::string format_imu(std::span<const ImuSample> samples) {
  std::string out = join_header(kImuColumns);
  for (const auto& s : samples) {
    append_row(out, {s.timestamp, s.acc.x(), s.acc.y(), s.acc.z(), s.gyro.x(), s.gyro.y(),
                     s.gyro.z()});
  }
  return out;
}

void write_imu(const fs::path& path, std::span<const ImuSample> samples) {
  write_text_atomic(path, format_imu(samples));
}

ImuRateCheck check_imu_rate(std::span<const ImuSample> samples, double nominal_hz,
                            double tolerance) {
  ImuRateCheck check;
  check.nominal_interval = 1.0 / nominal_hz;
  if (samples.size() < 2) {
    return check;
  }
  std::vector<double> dt;
  dt.reserve(samples.size() - 1);
  for (std::size_t i = 1; i < samples.size(); ++i) {
    dt.push_back(samples[i].timestamp - samples[i - 1].timestamp);
  }
  auto mid = dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2);
  std::nth_element(dt.begin(), mid, dt.end());
  check.median_interval = *mid;
  check.ok = std::abs(check.median_interval - check.nominal_interval) <=
             tolerance * check.nominal_interval;
  return check;
}

std::vector<FrameRecord> read_frame_index(const fs::path& path) {
  const std::string text = read_text(path);
  const CsvDoc doc = split_csv(text);
  std::vector<FrameRecord> out;
  for (const auto& row : doc.rows) {
    if (row.fields.size() != 2 && row.fields.size() != 3) {
      throw Error(ErrorCode::Parse, "frame index rows need 2 or 3 fields", row.line);
    }
    auto t = parse_real(row.fields[0]);
    if (!t) {
      throw Error(ErrorCode::Parse, "non-numeric timestamp", row.line);
    }
    if (!out.empty() && *t < out.back().timestamp) {
      throw Error(ErrorCode::NonMonotonicTimestamps, "frame timestamps go backwards", row.line);
    }
    if (row.fields[1].empty()) {
      throw Error(ErrorCode::Parse, "empty filename", row.line);
    }
    FrameRecord rec{*t, std::string(row.fields[1]), std::nullopt};
    if (row.fields.size() == 3) {
      auto k = parse_real(row.fields[2]);
      if (!k || *k < 0.0) {
        throw Error(ErrorCode::Parse, "bad keypoint count", row.line);
      }
      rec.keypoints = *k;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_frame_index(const fs::path& path, std::span<const FrameRecord> frames) {
  const bool with_keypoints =
      !frames.empty() && std::all_of(frames.begin(), frames.end(),
                                     [](const FrameRecord& f) { return f.keypoints.has_value(); });
  std::string out = with_keypoints ? "timestamp,filename,keypoints\n" : "timestamp,filename\n";
  for (const auto& f : frames) {
    out += format_real(f.timestamp) + "," + f.filename;
    if (with_keypoints) out += "," + format_real(*f.keypoints);
    out += '\n';
  }
  write_text_atomic(path, out);
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::optional<long> pgm_header_int(std::string_view data, std::size_t& pos) {
  while (pos < data.size()) {
    const char c = data[pos];
    if (c == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++pos;
    } else {
      break;
    }
  }
  long value = 0;
  auto res = std::from_chars(data.data() + pos, data.data() + data.size(), value);
  if (res.ec != std::errc() || value < 0) {
    return std::nullopt;
  }
  pos = static_cast<std::size_t>(res.ptr - data.data());
  return value;
}

GrayImage decode_pgm(std::string_view data) {
  std::size_t pos = 2;
  const auto w = pgm_header_int(data, pos);
  const auto h = pgm_header_int(data, pos);
  const auto maxval = pgm_header_int(data, pos);
  if (!w || !h || !maxval || *w <= 0 || *h <= 0 || *maxval <= 0) {
    throw Error(ErrorCode::CorruptHeader, "malformed PGM header");
  }
  if (*maxval > 255) {
    throw Error(ErrorCode::UnsupportedFormat, "PGM maxval " + std::to_string(*maxval) +
                                                  " needs 16-bit samples");
  }
  if (pos >= data.size() || !(data[pos] == ' ' || data[pos] == '\n' || data[pos] == '\r' ||
                              data[pos] == '\t')) {
    throw Error(ErrorCode::CorruptHeader, "missing separator after PGM header");
  }
  ++pos;
  const std::size_t count = static_cast<std::size_t>(*w) * static_cast<std::size_t>(*h);
  if (data.size() - pos < count) {
    throw Error(ErrorCode::CorruptHeader, "PGM pixel data truncated");
  }
  GrayImage img(static_cast<int>(*w), static_cast<int>(*h));
  std::copy_n(reinterpret_cast<const std::uint8_t*>(data.data() + pos), count, img.pixels.begin());
  return img;
}

#ifdef TRACKEVAL_HAVE_PNG
GrayImage decode_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(ErrorCode::CorruptHeader, std::string("PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage img(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::CorruptHeader, std::string("PNG: ") + image.message);
  }
  return img;
}
#endif

}  // namespace

GrayImage read_gray_image(const fs::path& path) {
  const std::string data = read_text(path);
  if (data.size() >= 2 && data[0] == 'P' && data[1] == '5') {
    return decode_pgm(data);
  }
  constexpr std::string_view kPngMagic("\x89PNG", 4);
  if (data.size() >= 4 && std::string_view(data).substr(0, 4) == kPngMagic) {
#ifdef TRACKEVAL_HAVE_PNG
    return decode_png(path);
#else
    throw Error(ErrorCode::UnsupportedFormat, "built without PNG support");
#endif
  }
  throw Error(ErrorCode::UnsupportedFormat, "not a binary PGM or PNG: " + path.string());
}

void write_pgm(const fs::path& path, const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  write_text_atomic(path, out);
}

bool png_supported() {
#ifdef TRACKEVAL_HAVE_PNG
  return true;
#else
  return false;
#endif
}

void write_png(const fs::path& path, const GrayImage& image) {
#ifdef TRACKEVAL_HAVE_PNG
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::Io, std::string("PNG write: ") + png.message);
  }
#else
  (void)path;
  (void)image;
  throw Error(ErrorCode::UnsupportedFormat, "built without PNG support");
#endif
}

}  // namespace trackeval::io
