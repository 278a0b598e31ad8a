#include "trackeval/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "trackeval/error.hpp"
#include "trackeval/io.hpp"

namespace trackeval::calibration {

Quat average_rotations(std::span<const Quat> rotations) {
  if (rotations.empty()) {
    throw Error(ErrorCode::Empty, "no rotations to average");
  }
  Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
  for (const auto& q : rotations) {
    const Eigen::Vector4d v = q.coeffs();
    acc += v * v.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(acc);
  const Eigen::Vector4d top = eig.eigenvectors().col(3);
  return canonicalize(Quat(top(3), top(0), top(1), top(2)));
}

bool has_rotation_spread(std::span<const Quat> rotations, double threshold_rad) {
  // angle >= threshold  <=>  |<q1, q2>| <= cos(threshold / 2)
  const double limit = std::cos(0.5 * threshold_rad);
  for (std::size_t i = 0; i < rotations.size(); ++i) {
    for (std::size_t j = i + 1; j < rotations.size(); ++j) {
      if (std::abs(rotations[i].dot(rotations[j])) <= limit) return true;
    }
  }
  return false;
}

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

double step_size(const Pose& a, const Pose& b) {
  return std::max(geodesic_angle(a.rotation, b.rotation), (a.translation - b.translation).norm());
}

std::vector<double> translation_residuals(std::span<const Pose> gt, std::span<const Pose> est,
                                          const Pose& x, const Pose& y) {
  std::vector<double> out(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    out[i] = ((y * gt[i] * x).translation - est[i].translation).norm();
  }
  return out;
}

double rms(std::span<const double> v) {
  double ss = 0.0;
  for (double e : v) ss += e * e;
  return v.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(v.size()));
}

// Smallest eigenvalue of sum (R_i - R_mean)^T (R_i - R_mean) per pair; it
// bounds how well the lever arm separates from Y's translation.
double lever_observability(std::span<const Pose> gt) {
  Mat3 mean = Mat3::Zero();
  for (const auto& p : gt) mean += p.rotation.toRotationMatrix();
  mean /= static_cast<double>(gt.size());
  Mat3 normal = Mat3::Zero();
  for (const auto& p : gt) {
    const Mat3 d = p.rotation.toRotationMatrix() - mean;
    normal += d.transpose() * d;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(normal, Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0) / static_cast<double>(gt.size());
}

ExtrinsicResult alternate(std::span<const Pose> gt, std::span<const Pose> est, Pose x,
                          const CalibrationOptions& opts) {
  const std::size_t n = gt.size();
  ExtrinsicResult result;
  result.n_pairs = n;
  Pose y;

  std::vector<Vec3> est_points(n);
  std::vector<Vec3> body_points(n);
  std::vector<Quat> rel(n);
  std::vector<Vec3> rhs(n);
  for (std::size_t i = 0; i < n; ++i) est_points[i] = est[i].translation;

  for (std::size_t iter = 1; iter <= opts.max_iterations; ++iter) {
    const Pose x_prev = x;
    const Pose y_prev = y;

    // Y given X: rigid registration of the transformed gt onto the estimate.
    for (std::size_t i = 0; i < n; ++i) body_points[i] = (gt[i] * x).translation;
    y = align_points(est_points, body_points, AlignOptions{.require_unique = false});

    // X's rotation given Y: mean of R_gt^T R_Y^T R_est.
    const Quat y_inv = y.rotation.conjugate();
    for (std::size_t i = 0; i < n; ++i) {
      rel[i] = gt[i].rotation.conjugate() * y_inv * est[i].rotation;
    }
    const Quat rx = average_rotations(rel);

    // Translations given rotations, plus a small-angle correction phi to Y's
    // rotation so the lever arm does not inherit Y's error:
    //   R_Y (R_gt t_X + p_gt) - R_Y [q]x phi + t_Y = p_est,  q = R_gt t_X' + p_gt
    // with t_X' the previous lever. t_Y is eliminated by centering.
    const Mat3 ry = y.rotation.toRotationMatrix();
    std::vector<Eigen::Matrix<double, 3, 6>> rows(n);
    Eigen::Matrix<double, 3, 6> rows_mean = Eigen::Matrix<double, 3, 6>::Zero();
    Vec3 rhs_mean = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Mat3 rg = gt[i].rotation.toRotationMatrix();
      const Vec3 q = rg * x.translation + gt[i].translation;
      rows[i].leftCols<3>() = ry * rg;
      rows[i].rightCols<3>() = -ry * skew(q);
      rhs[i] = est[i].translation - ry * gt[i].translation;
      rows_mean += rows[i];
      rhs_mean += rhs[i];
    }
    rows_mean /= static_cast<double>(n);
    rhs_mean /= static_cast<double>(n);
    Eigen::Matrix<double, 6, 6> normal = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> moment = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Matrix<double, 3, 6> a = rows[i] - rows_mean;
      normal += a.transpose() * a;
      moment += a.transpose() * (rhs[i] - rhs_mean);
    }
    const Eigen::Matrix<double, 6, 1> sol = normal.ldlt().solve(moment);
    const Vec3 tx = sol.head<3>();
    const Quat ry_new = canonicalize(y.rotation * exp_map(sol.tail<3>()));
    x = Pose(rx, tx);
    Vec3 ty = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      ty += est[i].translation - ry_new * (gt[i].rotation * tx + gt[i].translation);
    }
    y = Pose(ry_new, ty / static_cast<double>(n));

    const auto residuals = translation_residuals(gt, est, x, y);
    result.residual_history.push_back(rms(residuals));
    result.iterations = iter;

    const double step = std::max(step_size(x, x_prev), step_size(y, y_prev));
    if (step < opts.step_tolerance) {
      result.converged = true;
      break;
    }
  }

  result.extrinsic = x;
  result.world_alignment = y;
  result.residual_rmse = result.residual_history.empty() ? 0.0 : result.residual_history.back();
  double rot_ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = geodesic_angle((y * gt[i] * x).rotation, est[i].rotation);
    rot_ss += a * a;
  }
  result.rotation_residual_rms = std::sqrt(rot_ss / static_cast<double>(n));
  return result;
}

}  // namespace

ExtrinsicResult calibrate_pairs(std::span<const Pose> gt, std::span<const Pose> est,
                                const CalibrationOptions& opts) {
  if (gt.size() != est.size()) {
    throw Error(ErrorCode::InsufficientData, "calibration pair lists differ in length");
  }
  if (gt.size() < opts.min_pairs) {
    throw Error(ErrorCode::NoOverlap, "only " + std::to_string(gt.size()) +
                                          " associated pairs, need " +
                                          std::to_string(opts.min_pairs));
  }
  std::vector<Quat> gt_rot(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) gt_rot[i] = gt[i].rotation;
  if (!has_rotation_spread(gt_rot, opts.min_rotation_spread)) {
    throw Error(ErrorCode::InsufficientExcitation,
                "ground-truth rotations never differ by the required spread");
  }
  if (lever_observability(gt) < opts.min_lever_observability) {
    throw Error(ErrorCode::InsufficientExcitation,
                "rotation about a single axis leaves the lever arm along it unobservable");
  }

  ExtrinsicResult result = alternate(gt, est, Pose::identity(), opts);

  if (opts.trimmed_refit && opts.trim_fraction > 0.0 && opts.trim_fraction < 1.0) {
    const auto residuals =
        translation_residuals(gt, est, result.extrinsic, result.world_alignment);
    std::vector<std::size_t> order(gt.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return residuals[a] < residuals[b]; });
    const auto keep = static_cast<std::size_t>(
        std::ceil((1.0 - opts.trim_fraction) * static_cast<double>(gt.size())));
    order.resize(std::max(keep, opts.min_pairs));
    std::sort(order.begin(), order.end());
    std::vector<Pose> gt_kept;
    std::vector<Pose> est_kept;
    for (auto i : order) {
      gt_kept.push_back(gt[i]);
      est_kept.push_back(est[i]);
    }
    auto history = std::move(result.residual_history);
    const std::size_t first_pass = result.iterations;
    result = alternate(gt_kept, est_kept, result.extrinsic, opts);
    history.insert(history.end(), result.residual_history.begin(), result.residual_history.end());
    result.residual_history = std::move(history);
    result.iterations += first_pass;
  }

  if (!result.converged && opts.throw_on_not_converged) {
    throw Error(ErrorCode::NotConverged, "no convergence after " +
                                             std::to_string(result.iterations) + " iterations");
  }
  return result;
}

ExtrinsicResult calibrate_extrinsic(const Trajectory& gt, const Trajectory& est,
                                    const CalibrationOptions& opts) {
  if (gt.empty() || est.empty() || est.end_time() < gt.start_time() ||
      est.start_time() > gt.end_time()) {
    throw Error(ErrorCode::NoOverlap, "trajectory time spans are disjoint");
  }
  std::vector<Pose> gt_pairs;
  std::vector<Pose> est_pairs;
  for (const auto& s : est.samples()) {
    if (!gt.covers(s.timestamp)) continue;
    gt_pairs.push_back(interpolate_at(gt, s.timestamp));
    est_pairs.push_back(s.pose);
  }
  return calibrate_pairs(gt_pairs, est_pairs, opts);
}

Trajectory apply_extrinsic(const Trajectory& gt, const Pose& x, const std::string& body_label) {
  return transform_body(gt, x, body_label);
}

namespace {

nlohmann::json pose_record(const Pose& p) {
  const auto& t = p.translation;
  const auto& q = p.rotation;
  return {{"timestamp", 0.0}, {"tx", t.x()}, {"ty", t.y()}, {"tz", t.z()},
          {"qx", q.x()},      {"qy", q.y()}, {"qz", q.z()}, {"qw", q.w()}};
}

Pose pose_from_record(const nlohmann::json& j) {
  const Quat q(j.at("qw").get<double>(), j.at("qx").get<double>(), j.at("qy").get<double>(),
               j.at("qz").get<double>());
  if (std::abs(q.norm() - 1.0) > 1e-3) {
    throw Error(ErrorCode::BadQuaternion, "calibration quaternion norm " + io::format_real(q.norm()));
  }
  return Pose(q, Vec3(j.at("tx").get<double>(), j.at("ty").get<double>(), j.at("tz").get<double>()));
}

}  // namespace

std::string to_json(const ExtrinsicResult& result) {
  nlohmann::json j;
  j["extrinsic"] = pose_record(result.extrinsic);
  j["world_alignment"] = pose_record(result.world_alignment);
  j["residual_rmse_m"] = result.residual_rmse;
  j["rotation_residual_rms_rad"] = result.rotation_residual_rms;
  j["iterations"] = result.iterations;
  j["n_pairs"] = result.n_pairs;
  j["converged"] = result.converged;
  return j.dump(2) + "\n";
}

ExtrinsicResult extrinsic_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ExtrinsicResult r;
    r.extrinsic = pose_from_record(j.at("extrinsic"));
    r.world_alignment = j.contains("world_alignment") ? pose_from_record(j.at("world_alignment"))
                                                      : Pose::identity();
    r.residual_rmse = j.value("residual_rmse_m", 0.0);
    r.rotation_residual_rms = j.value("rotation_residual_rms_rad", 0.0);
    r.iterations = j.value("iterations", std::size_t{0});
    r.n_pairs = j.value("n_pairs", std::size_t{0});
    r.converged = j.value("converged", true);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("calibration JSON: ") + e.what());
  }
}

void write_extrinsic(const std::filesystem::path& path, const ExtrinsicResult& result) {
  io::write_text_atomic(path, to_json(result));
}

ExtrinsicResult read_extrinsic(const std::filesystem::path& path) {
  return extrinsic_from_json(io::read_text(path));
}

}  // namespace trackeval::calibration
