#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace trackeval {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Unit quaternion with w >= 0. Throws Degenerate on a zero-norm input.
Quat canonicalize(const Quat& q);

Quat axis_angle(const Vec3& axis, double angle_rad);

// Geodesic distance on SO(3): 2 * acos(|<q1, q2>|), evaluated through atan2
// so that small angles keep full precision.
double geodesic_angle(const Quat& q1, const Quat& q2);

// Rotation vector (axis * angle) of q, angle in [0, pi].
Vec3 log_map(const Quat& q);
Quat exp_map(const Vec3& rotation_vector);

// Rigid transform. The rotation is always stored canonicalized.
struct Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Quat& q, const Vec3& t);

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }

// Shortest-arc interpolation at constant angular velocity. Requires u in [0, 1].
Quat slerp(const Quat& q0, const Quat& q1, double u);

struct PoseSample {
  double timestamp = 0.0;
  Pose pose;
};

struct FrameLabels {
  std::string world = "W";
  std::string body = "B";
};

// Time-ordered pose samples with strictly increasing, finite timestamps.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<PoseSample> samples, FrameLabels labels = {});

  std::span<const PoseSample> samples() const { return samples_; }
  const PoseSample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  double start_time() const;
  double end_time() const;
  bool covers(double t) const;

  const FrameLabels& labels() const { return labels_; }

  std::vector<double> timestamps() const;
  std::vector<Vec3> translations() const;

 private:
  std::vector<PoseSample> samples_;
  FrameLabels labels_;
};

// Pose at time t: linear in translation, slerp in rotation. Returns the stored
// sample unchanged when t hits a sample timestamp. Throws OutOfRange.
Pose interpolate_at(const Trajectory& traj, double t);

// Path length of the interpolated translation over [t_a, t_b]. Throws OutOfRange.
double arc_length(const Trajectory& traj, double t_a, double t_b);

// Cumulative path length at each sample, starting at 0.
std::vector<double> cumulative_arc_length(const Trajectory& traj);

// Per-sample maps: G * pose and pose * X.
Trajectory transform_world(const Pose& g, const Trajectory& traj);
Trajectory transform_body(const Trajectory& traj, const Pose& x, const std::string& body_label);

struct AlignOptions {
  // When false, rank-1 (collinear) or rank-0 point sets return one of the
  // optimal transforms instead of failing. Residuals are the same for all of them.
  bool require_unique = true;
};

// Rigid transform A minimizing sum |A * estimate_i - reference_i|^2 (no scale).
// Throws InsufficientData on size mismatch or fewer than 3 points, Degenerate
// when the estimate's translation spread has rank < 2 and require_unique is set.
Pose align_points(std::span<const Vec3> reference, std::span<const Vec3> estimate,
                  AlignOptions opts = {});

// align_points over the translations of two sample-for-sample associated trajectories.
Pose umeyama_align(const Trajectory& reference, const Trajectory& estimate,
                   AlignOptions opts = {});

}  // namespace trackeval
