#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trackeval/geometry.hpp"

namespace trackeval::metrics {

inline constexpr double kDefaultSegmentLength = 0.10;  // m

struct AssociatedPair {
  double timestamp = 0.0;
  Pose gt_pose;
  Pose est_pose;
};

// One pair per estimate sample inside gt's span; gt is interpolated. Throws NoOverlap.
std::vector<AssociatedPair> associate(const Trajectory& est, const Trajectory& gt);

enum class ErrorKind { APE, RPE };
std::string_view to_string(ErrorKind kind);

struct ErrorPoint {
  double timestamp = 0.0;  // end of the window the error describes
  double error = 0.0;      // m
  double window_start = 0.0;
  double rotation_error = 0.0;  // rad, auxiliary
};

struct ErrorStats {
  double mean = 0.0;
  double rmse = 0.0;
  double median = 0.0;
  double max = 0.0;
  double min = 0.0;
  std::size_t count = 0;
};

ErrorStats compute_stats(std::span<const double> errors);

// Errors with statistics recomputed from the points on construction.
class ErrorSeries {
 public:
  ErrorSeries() = default;
  ErrorSeries(ErrorKind kind, std::vector<ErrorPoint> points, double segment_length = 0.0);

  ErrorKind kind() const { return kind_; }
  std::span<const ErrorPoint> points() const { return points_; }
  const ErrorStats& stats() const { return stats_; }
  double segment_length() const { return segment_length_; }
  std::size_t size() const { return points_.size(); }

  std::vector<double> errors() const;
  std::vector<double> rotation_errors() const;
  std::vector<double> timestamps() const;

 private:
  ErrorKind kind_ = ErrorKind::APE;
  std::vector<ErrorPoint> points_;
  ErrorStats stats_;
  double segment_length_ = 0.0;
};

// One global rigid alignment of the estimate onto gt, then per-pair
// translation distance. Throws NoOverlap, InsufficientData, Degenerate.
ErrorSeries ape(const Trajectory& est, const Trajectory& gt);

// Consecutive windows of segment_length meters of gt path; per window the
// translation of gt_a^-1 gt_b against est_a^-1 est_b. Throws NoOverlap, TooShort.
ErrorSeries rpe(const Trajectory& est, const Trajectory& gt,
                double segment_length = kDefaultSegmentLength);

struct SubstitutionResult {
  Trajectory pseudo_gt;
  ErrorSeries ape;
  ErrorSeries rpe;
};

// Uses ref_est * mount as ground truth for target_est.
SubstitutionResult substitute_reference(const Trajectory& ref_est, const Pose& mount,
                                        const Trajectory& target_est,
                                        double segment_length = kDefaultSegmentLength);

struct PairedErrors {
  std::vector<double> a;
  std::vector<double> b;
};

// Nearest-timestamp pairing. Default tolerance is half the median spacing of a.
PairedErrors pair_series(const ErrorSeries& a, const ErrorSeries& b,
                         std::optional<double> tolerance = std::nullopt);

// Coefficient of determination of the least-squares line b ~ a.
// Throws InsufficientData for n < 3 or a constant input.
double r_squared(std::span<const double> a, std::span<const double> b);

double compare_error_series(const ErrorSeries& a, const ErrorSeries& b,
                            std::optional<double> tolerance = std::nullopt);

// CSV "timestamp,error_m" plus a JSON stats block.
std::string format_error_series(const ErrorSeries& series);
ErrorSeries parse_error_series(std::string_view text, ErrorKind kind, double segment_length = 0.0);
std::string stats_json(const ErrorSeries& series);
void write_error_series(const std::filesystem::path& csv_path, const ErrorSeries& series);

}  // namespace trackeval::metrics
