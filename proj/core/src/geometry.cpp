#include "trackeval/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "trackeval/error.hpp"

namespace trackeval {

Quat canonicalize(const Quat& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::Degenerate, "quaternion with zero or non-finite norm");
  }
  // Leave unit input bit-exact so files survive repeated read/write cycles.
  Quat out = std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? q : Quat(q.coeffs() / n);
  if (out.w() < 0.0) {
    out.coeffs() = -out.coeffs();
  }
  return out;
}

Quat axis_angle(const Vec3& axis, double angle_rad) {
  return canonicalize(Quat(Eigen::AngleAxisd(angle_rad, axis.normalized())));
}

double geodesic_angle(const Quat& q1, const Quat& q2) {
  const Quat rel = q1.conjugate() * q2;
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

Vec3 log_map(const Quat& q) {
  Quat c = q;
  if (c.w() < 0.0) {
    c.coeffs() = -c.coeffs();
  }
  const double n = c.vec().norm();
  if (n == 0.0) {
    return Vec3::Zero();
  }
  const double angle = 2.0 * std::atan2(n, c.w());
  return c.vec() * (angle / n);
}

Quat exp_map(const Vec3& rotation_vector) {
  const double angle = rotation_vector.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * rotation_vector.x(), 0.5 * rotation_vector.y(), 0.5 * rotation_vector.z());
    return q.normalized();
  }
  const double half = 0.5 * angle;
  const Vec3 v = rotation_vector * (std::sin(half) / angle);
  return Quat(std::cos(half), v.x(), v.y(), v.z());
}

Pose::Pose(const Quat& q, const Vec3& t) : rotation(canonicalize(q)), translation(t) {}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

Pose inverse(const Pose& p) {
  const Quat inv = p.rotation.conjugate();
  return Pose(inv, -(inv * p.translation));
}

Quat slerp(const Quat& q0, const Quat& q1, double u) {
  if (!(u >= 0.0 && u <= 1.0)) {
    throw Error(ErrorCode::OutOfRange, "slerp parameter outside [0, 1]");
  }
  const Quat a = canonicalize(q0);
  Quat b = canonicalize(q1);
  if (a.dot(b) < 0.0) {
    b.coeffs() = -b.coeffs();
  }
  const Vec3 step = log_map(a.conjugate() * b);
  return canonicalize(a * exp_map(u * step));
}

Trajectory::Trajectory(std::vector<PoseSample> samples, FrameLabels labels)
    : samples_(std::move(samples)), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!std::isfinite(samples_[i].timestamp)) {
      throw Error(ErrorCode::NonMonotonicTimestamps,
                  "non-finite timestamp at sample " + std::to_string(i));
    }
    if (i > 0 && !(samples_[i].timestamp > samples_[i - 1].timestamp)) {
      throw Error(ErrorCode::NonMonotonicTimestamps,
                  "timestamps not strictly increasing at sample " + std::to_string(i));
    }
    samples_[i].pose.rotation = canonicalize(samples_[i].pose.rotation);
  }
}

double Trajectory::start_time() const {
  if (samples_.empty()) {
    throw Error(ErrorCode::Empty, "empty trajectory");
  }
  return samples_.front().timestamp;
}

double Trajectory::end_time() const {
  if (samples_.empty()) {
    throw Error(ErrorCode::Empty, "empty trajectory");
  }
  return samples_.back().timestamp;
}

bool Trajectory::covers(double t) const {
  return !samples_.empty() && t >= samples_.front().timestamp && t <= samples_.back().timestamp;
}

std::vector<double> Trajectory::timestamps() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) {
    out.push_back(s.timestamp);
  }
  return out;
}

std::vector<Vec3> Trajectory::translations() const {
  std::vector<Vec3> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) {
    out.push_back(s.pose.translation);
  }
  return out;
}

namespace {

// Index of the first sample with timestamp > t, or the exact hit.
struct Bracket {
  std::size_t upper = 0;
  bool exact = false;
};

Bracket locate(std::span<const PoseSample> samples, double t) {
  auto it = std::lower_bound(samples.begin(), samples.end(), t,
                             [](const PoseSample& s, double v) { return s.timestamp < v; });
  Bracket b;
  b.upper = static_cast<std::size_t>(it - samples.begin());
  b.exact = it != samples.end() && it->timestamp == t;
  return b;
}

Vec3 translation_at(std::span<const PoseSample> samples, double t) {
  const Bracket b = locate(samples, t);
  if (b.exact) {
    return samples[b.upper].pose.translation;
  }
  const auto& lo = samples[b.upper - 1];
  const auto& hi = samples[b.upper];
  const double u = (t - lo.timestamp) / (hi.timestamp - lo.timestamp);
  return (1.0 - u) * lo.pose.translation + u * hi.pose.translation;
}

}  // namespace

Pose interpolate_at(const Trajectory& traj, double t) {
  if (!traj.covers(t)) {
    throw Error(ErrorCode::OutOfRange, "interpolation time outside trajectory span");
  }
  const auto samples = traj.samples();
  const Bracket b = locate(samples, t);
  if (b.exact) {
    return samples[b.upper].pose;
  }
  const auto& lo = samples[b.upper - 1];
  const auto& hi = samples[b.upper];
  const double u = (t - lo.timestamp) / (hi.timestamp - lo.timestamp);
  Pose out;
  out.translation = (1.0 - u) * lo.pose.translation + u * hi.pose.translation;
  out.rotation = slerp(lo.pose.rotation, hi.pose.rotation, u);
  return out;
}

double arc_length(const Trajectory& traj, double t_a, double t_b) {
  if (!(t_a < t_b) || !traj.covers(t_a) || !traj.covers(t_b)) {
    throw Error(ErrorCode::OutOfRange, "arc length interval outside trajectory span or empty");
  }
  const auto samples = traj.samples();
  Vec3 prev = translation_at(samples, t_a);
  double length = 0.0;
  for (std::size_t i = locate(samples, t_a).upper; i < samples.size(); ++i) {
    if (samples[i].timestamp <= t_a) {
      continue;
    }
    if (samples[i].timestamp >= t_b) {
      break;
    }
    length += (samples[i].pose.translation - prev).norm();
    prev = samples[i].pose.translation;
  }
  length += (translation_at(samples, t_b) - prev).norm();
  return length;
}

std::vector<double> cumulative_arc_length(const Trajectory& traj) {
  std::vector<double> out(traj.size(), 0.0);
  for (std::size_t i = 1; i < traj.size(); ++i) {
    out[i] = out[i - 1] + (traj[i].pose.translation - traj[i - 1].pose.translation).norm();
  }
  return out;
}

Trajectory transform_world(const Pose& g, const Trajectory& traj) {
  std::vector<PoseSample> out;
  out.reserve(traj.size());
  for (const auto& s : traj.samples()) {
    out.push_back({s.timestamp, g * s.pose});
  }
  return Trajectory(std::move(out), traj.labels());
}

Trajectory transform_body(const Trajectory& traj, const Pose& x, const std::string& body_label) {
  std::vector<PoseSample> out;
  out.reserve(traj.size());
  for (const auto& s : traj.samples()) {
    out.push_back({s.timestamp, s.pose * x});
  }
  FrameLabels labels = traj.labels();
  labels.body = body_label;
  return Trajectory(std::move(out), labels);
}

Pose align_points(std::span<const Vec3> reference, std::span<const Vec3> estimate,
                  AlignOptions opts) {
  if (reference.size() != estimate.size()) {
    throw Error(ErrorCode::InsufficientData, "alignment inputs differ in length");
  }
  const std::size_t n = reference.size();
  if (n < 3) {
    throw Error(ErrorCode::InsufficientData, "alignment needs at least 3 point pairs");
  }

  Vec3 ref_mean = Vec3::Zero();
  Vec3 est_mean = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    ref_mean += reference[i];
    est_mean += estimate[i];
  }
  ref_mean /= static_cast<double>(n);
  est_mean /= static_cast<double>(n);

  Mat3 cross = Mat3::Zero();
  Mat3 spread = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 e = estimate[i] - est_mean;
    cross += e * (reference[i] - ref_mean).transpose();
    spread += e * e.transpose();
  }

  if (opts.require_unique) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(spread, Eigen::EigenvaluesOnly);
    const Vec3 ev = eig.eigenvalues();  // ascending
    if (ev(2) <= 1e-20 || ev(1) <= 1e-10 * ev(2)) {
      throw Error(ErrorCode::Degenerate,
                  "estimate translations are collinear or coincident; rotation is ambiguous");
    }
  }

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  const Mat3 r = v * d * u.transpose();
  return Pose(Quat(r), ref_mean - r * est_mean);
}

Pose umeyama_align(const Trajectory& reference, const Trajectory& estimate, AlignOptions opts) {
  const auto ref = reference.translations();
  const auto est = estimate.translations();
  return align_points(ref, est, opts);
}

}  // namespace trackeval
