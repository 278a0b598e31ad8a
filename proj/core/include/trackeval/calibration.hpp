#pragma once

#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "trackeval/geometry.hpp"

// Extrinsic calibration between a mocap rigid body and a device.
//
// Model: est_t ~= Y * gt_t * X, where gt_t maps the rigid-body frame V into
// the mocap world, est_t maps the device frame H into the device's own world,
// X is the fixed body-to-device extrinsic and Y aligns the mocap world with
// the device world (the device boots with its own origin).
namespace trackeval::calibration {

struct CalibrationOptions {
  std::size_t max_iterations = 100;
  double step_tolerance = 1e-9;
  std::size_t min_pairs = 50;
  double min_rotation_spread = 10.0 * std::numbers::pi / 180.0;  // rad
  // Smallest eigenvalue of the lever-arm normal matrix per pair. Below this
  // the rotations span a single axis and X's translation along it is unobservable.
  double min_lever_observability = 1e-4;
  // Second pass on the pairs with the lowest residuals.
  bool trimmed_refit = false;
  double trim_fraction = 0.1;
  bool throw_on_not_converged = false;
};

struct ExtrinsicResult {
  Pose extrinsic;        // X
  Pose world_alignment;  // Y
  double residual_rmse = 0.0;          // m
  double rotation_residual_rms = 0.0;  // rad
  std::size_t iterations = 0;
  std::size_t n_pairs = 0;
  bool converged = false;
  std::vector<double> residual_history;  // translation RMSE after each alternation
};

// Eigenvector quaternion mean (largest eigenvector of sum q q^T).
Quat average_rotations(std::span<const Quat> rotations);

// True when some pair of rotations is at least threshold_rad apart.
bool has_rotation_spread(std::span<const Quat> rotations, double threshold_rad);

// Calibrates from pairs already associated sample-for-sample.
ExtrinsicResult calibrate_pairs(std::span<const Pose> gt, std::span<const Pose> est,
                                const CalibrationOptions& opts = {});

// Interpolates gt at the estimate's timestamps, then calibrates.
// Throws NoOverlap, InsufficientExcitation, and NotConverged when requested.
ExtrinsicResult calibrate_extrinsic(const Trajectory& gt, const Trajectory& est,
                                    const CalibrationOptions& opts = {});

// Each pose becomes pose * X; the body frame label becomes body_label.
Trajectory apply_extrinsic(const Trajectory& gt, const Pose& x, const std::string& body_label = "H");

std::string to_json(const ExtrinsicResult& result);
ExtrinsicResult extrinsic_from_json(std::string_view text);
void write_extrinsic(const std::filesystem::path& path, const ExtrinsicResult& result);
ExtrinsicResult read_extrinsic(const std::filesystem::path& path);

}  // namespace trackeval::calibration
