#include "trackeval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "trackeval/error.hpp"
#include "trackeval/io.hpp"

namespace trackeval::metrics {

std::string_view to_string(ErrorKind kind) { return kind == ErrorKind::APE ? "APE" : "RPE"; }

std::vector<AssociatedPair> associate(const Trajectory& est, const Trajectory& gt) {
  std::vector<AssociatedPair> out;
  if (!gt.empty()) {
    for (const auto& s : est.samples()) {
      if (gt.covers(s.timestamp)) {
        out.push_back({s.timestamp, interpolate_at(gt, s.timestamp), s.pose});
      }
    }
  }
  if (out.empty()) {
    throw Error(ErrorCode::NoOverlap, "estimate and ground truth do not overlap in time");
  }
  return out;
}

ErrorStats compute_stats(std::span<const double> errors) {
  ErrorStats s;
  s.count = errors.size();
  if (errors.empty()) return s;
  double sum = 0.0;
  double ss = 0.0;
  s.max = errors.front();
  s.min = errors.front();
  for (double e : errors) {
    sum += e;
    ss += e * e;
    s.max = std::max(s.max, e);
    s.min = std::min(s.min, e);
  }
  const auto n = static_cast<double>(errors.size());
  s.mean = sum / n;
  s.rmse = std::sqrt(ss / n);
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  s.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  // sqrt rounding can leave rmse an ulp under mean for constant errors
  s.rmse = std::max(s.rmse, s.mean);
  return s;
}

ErrorSeries::ErrorSeries(ErrorKind kind, std::vector<ErrorPoint> points, double segment_length)
    : kind_(kind), points_(std::move(points)), segment_length_(segment_length) {
  for (const auto& p : points_) {
    if (!(p.error >= 0.0)) {
      throw Error(ErrorCode::Parse, "negative or NaN error value");
    }
  }
  const auto e = errors();
  stats_ = compute_stats(e);
}

std::vector<double> ErrorSeries::errors() const {
  std::vector<double> out;
  out.reserve(points_.size());
  for (const auto& p : points_) out.push_back(p.error);
  return out;
}

std::vector<double> ErrorSeries::rotation_errors() const {
  std::vector<double> out;
  out.reserve(points_.size());
  for (const auto& p : points_) out.push_back(p.rotation_error);
  return out;
}

std::vector<double> ErrorSeries::timestamps() const {
  std::vector<double> out;
  out.reserve(points_.size());
  for (const auto& p : points_) out.push_back(p.timestamp);
  return out;
}

ErrorSeries ape(const Trajectory& est, const Trajectory& gt) {
  const auto pairs = associate(est, gt);
  std::vector<Vec3> ref(pairs.size());
  std::vector<Vec3> moved(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ref[i] = pairs[i].gt_pose.translation;
    moved[i] = pairs[i].est_pose.translation;
  }
  // Residuals are unique even when a collinear path leaves the roll about
  // the line free, so APE accepts rank-deficient input.
  const Pose align = align_points(ref, moved, AlignOptions{.require_unique = false});

  std::vector<ErrorPoint> points;
  points.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Pose aligned = align * pairs[i].est_pose;
    ErrorPoint p;
    p.timestamp = pairs[i].timestamp;
    p.window_start = i > 0 ? pairs[i - 1].timestamp : pairs[i].timestamp;
    p.error = (aligned.translation - pairs[i].gt_pose.translation).norm();
    p.rotation_error = geodesic_angle(aligned.rotation, pairs[i].gt_pose.rotation);
    points.push_back(p);
  }
  return ErrorSeries(ErrorKind::APE, std::move(points));
}

namespace {

// gt path length as a piecewise-linear function of time over [t0, t1].
struct ArcParam {
  std::vector<double> times;
  std::vector<double> lengths;

  double time_at(double s) const {
    auto it = std::lower_bound(lengths.begin(), lengths.end(), s);
    if (it == lengths.end()) return times.back();
    const auto j = static_cast<std::size_t>(it - lengths.begin());
    if (j == 0 || *it == s) return times[j];
    const double u = (s - lengths[j - 1]) / (lengths[j] - lengths[j - 1]);
    return times[j - 1] + u * (times[j] - times[j - 1]);
  }
};

ArcParam parametrize(const Trajectory& gt, double t0, double t1) {
  ArcParam arc;
  arc.times.push_back(t0);
  for (const auto& s : gt.samples()) {
    if (s.timestamp > t0 && s.timestamp < t1) arc.times.push_back(s.timestamp);
  }
  arc.times.push_back(t1);
  arc.lengths.resize(arc.times.size(), 0.0);
  Vec3 prev = interpolate_at(gt, t0).translation;
  for (std::size_t i = 1; i < arc.times.size(); ++i) {
    const Vec3 cur = interpolate_at(gt, arc.times[i]).translation;
    arc.lengths[i] = arc.lengths[i - 1] + (cur - prev).norm();
    prev = cur;
  }
  return arc;
}

}  // namespace

ErrorSeries rpe(const Trajectory& est, const Trajectory& gt, double segment_length) {
  if (!(segment_length > 0.0)) {
    throw Error(ErrorCode::BadSpec, "segment length must be positive");
  }
  if (est.empty() || gt.empty()) {
    throw Error(ErrorCode::NoOverlap, "empty trajectory");
  }
  const double t0 = std::max(est.start_time(), gt.start_time());
  const double t1 = std::min(est.end_time(), gt.end_time());
  if (!(t0 < t1)) {
    throw Error(ErrorCode::NoOverlap, "estimate and ground truth do not overlap in time");
  }
  const ArcParam arc = parametrize(gt, t0, t1);
  const double total = arc.lengths.back();
  // Relative slack so that a path of exactly k segments is not cut to k - 1.
  const auto n_segments =
      static_cast<std::size_t>(std::floor(total / segment_length * (1.0 + 1e-9)));
  if (n_segments == 0) {
    throw Error(ErrorCode::TooShort, "ground-truth path " + io::format_real(total) +
                                         " m is shorter than one segment");
  }

  std::vector<ErrorPoint> points;
  points.reserve(n_segments);
  double ta = t0;
  Pose gt_a = interpolate_at(gt, ta);
  Pose est_a = interpolate_at(est, ta);
  for (std::size_t k = 1; k <= n_segments; ++k) {
    const double s = std::min(static_cast<double>(k) * segment_length, total);
    const double tb = std::clamp(arc.time_at(s), ta, t1);
    const Pose gt_b = interpolate_at(gt, tb);
    const Pose est_b = interpolate_at(est, tb);
    const Pose gt_rel = inverse(gt_a) * gt_b;
    const Pose est_rel = inverse(est_a) * est_b;
    ErrorPoint p;
    p.timestamp = tb;
    p.window_start = ta;
    p.error = (gt_rel.translation - est_rel.translation).norm();
    p.rotation_error = geodesic_angle(gt_rel.rotation, est_rel.rotation);
    points.push_back(p);
    ta = tb;
    gt_a = gt_b;
    est_a = est_b;
  }
  return ErrorSeries(ErrorKind::RPE, std::move(points), segment_length);
}

SubstitutionResult substitute_reference(const Trajectory& ref_est, const Pose& mount,
                                        const Trajectory& target_est, double segment_length) {
  SubstitutionResult r;
  r.pseudo_gt = transform_body(ref_est, mount, target_est.labels().body);
  r.ape = ape(target_est, r.pseudo_gt);
  r.rpe = rpe(target_est, r.pseudo_gt, segment_length);
  return r;
}

PairedErrors pair_series(const ErrorSeries& a, const ErrorSeries& b, std::optional<double> tolerance) {
  PairedErrors out;
  const auto pa = a.points();
  const auto pb = b.points();
  if (pa.empty() || pb.empty()) return out;
  double tol = 0.0;
  if (tolerance) {
    tol = *tolerance;
  } else if (pa.size() > 1) {
    std::vector<double> dt;
    for (std::size_t i = 1; i < pa.size(); ++i) dt.push_back(pa[i].timestamp - pa[i - 1].timestamp);
    std::nth_element(dt.begin(), dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2), dt.end());
    tol = 0.5 * dt[dt.size() / 2];
  }
  for (const auto& p : pa) {
    auto it = std::lower_bound(pb.begin(), pb.end(), p.timestamp,
                               [](const ErrorPoint& q, double t) { return q.timestamp < t; });
    const ErrorPoint* best = nullptr;
    if (it != pb.end()) best = &*it;
    if (it != pb.begin()) {
      const ErrorPoint* prev = &*(it - 1);
      if (!best || p.timestamp - prev->timestamp < best->timestamp - p.timestamp) best = prev;
    }
    if (best && std::abs(best->timestamp - p.timestamp) <= tol) {
      out.a.push_back(p.error);
      out.b.push_back(best->error);
    }
  }
  return out;
}

double r_squared(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 3) {
    throw Error(ErrorCode::InsufficientData, "R^2 needs at least 3 paired values");
  }
  const auto n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0;
  double sab = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sab += (a[i] - ma) * (b[i] - mb);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) {
    throw Error(ErrorCode::InsufficientData, "R^2 undefined for a constant series");
  }
  const double slope = sab / saa;
  const double intercept = mb - slope * ma;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = b[i] - (slope * a[i] + intercept);
    ss_res += r * r;
  }
  return std::clamp(1.0 - ss_res / sbb, 0.0, 1.0);
}

double compare_error_series(const ErrorSeries& a, const ErrorSeries& b,
                            std::optional<double> tolerance) {
  const auto paired = pair_series(a, b, tolerance);
  return r_squared(paired.a, paired.b);
}

std::string format_error_series(const ErrorSeries& series) {
  std::string out = "timestamp,error_m\n";
  for (const auto& p : series.points()) {
    out += io::format_real(p.timestamp);
    out += ',';
    out += io::format_real(p.error);
    out += '\n';
  }
  return out;
}

ErrorSeries parse_error_series(std::string_view text, ErrorKind kind, double segment_length) {
  std::vector<ErrorPoint> points;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const auto fields = io::split_fields(line);
    if (fields.size() != 2) {
      throw Error(ErrorCode::Parse, "error series rows need 2 fields", line_no);
    }
    const auto t = io::parse_real(fields[0]);
    const auto e = io::parse_real(fields[1]);
    if (!t || !e) {
      if (points.empty() && fields[0] == "timestamp") continue;
      throw Error(ErrorCode::Parse, "non-numeric error series field", line_no);
    }
    if (*e < 0.0) {
      throw Error(ErrorCode::Parse, "negative error", line_no);
    }
    if (!points.empty() && *t < points.back().timestamp) {
      throw Error(ErrorCode::NonMonotonicTimestamps, "error timestamps go backwards", line_no);
    }
    ErrorPoint p;
    p.timestamp = *t;
    p.error = *e;
    p.window_start = points.empty() ? *t : points.back().timestamp;
    points.push_back(p);
  }
  return ErrorSeries(kind, std::move(points), segment_length);
}

std::string stats_json(const ErrorSeries& series) {
  const auto& s = series.stats();
  nlohmann::json j;
  j["kind"] = std::string(to_string(series.kind()));
  j["count"] = s.count;
  j["mean_m"] = s.mean;
  j["rmse_m"] = s.rmse;
  j["median_m"] = s.median;
  j["max_m"] = s.max;
  j["min_m"] = s.min;
  if (series.kind() == ErrorKind::RPE) j["segment_length_m"] = series.segment_length();
  const auto rot = series.rotation_errors();
  const auto rs = compute_stats(rot);
  j["rotation_mean_rad"] = rs.mean;
  j["rotation_rmse_rad"] = rs.rmse;
  return j.dump(2) + "\n";
}

void write_error_series(const std::filesystem::path& csv_path, const ErrorSeries& series) {
  io::write_text_atomic(csv_path, format_error_series(series));
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  io::write_text_atomic(json_path, stats_json(series));
}

}  // namespace trackeval::metrics
