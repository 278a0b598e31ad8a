#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trackeval/error.hpp"
#include "trackeval/io.hpp"
#include "trackeval/metrics.hpp"

namespace trackeval::features {

struct ImageMetrics {
  double brightness = 0.0;     // mean intensity
  double contrast = 0.0;       // population standard deviation
  double entropy = 0.0;        // bits, 256-bin histogram
  double laplacian_var = 0.0;  // variance of the 4-neighbour Laplacian on interior pixels
};

// Throws TooSmall below 3x3.
ImageMetrics image_metrics(const io::GrayImage& img);

struct Corner {
  int x = 0;
  int y = 0;
  double score = 0.0;
};

// FAST-9 segment test on the radius-3 Bresenham circle: 9 contiguous circle
// pixels all brighter than center + threshold or all darker than
// center - threshold. Score is the sum of |p - center| over the best arc.
// Non-maximum suppression keeps corners whose score is >= every 8-neighbour's.
// Throws TooSmall below 7x7.
std::vector<Corner> detect_fast(const io::GrayImage& img, int threshold = 20, bool nonmax = true);
std::size_t fast_corners(const io::GrayImage& img, int threshold = 20, bool nonmax = true);

struct FrameFeatures {
  double timestamp = 0.0;
  double brightness = 0.0;
  double contrast = 0.0;
  double entropy = 0.0;
  double laplacian_var = 0.0;
  double keypoints = 0.0;
};

// Uses the precomputed keypoint count when given, FAST corners otherwise.
FrameFeatures frame_features(double timestamp, const io::GrayImage& img,
                             std::optional<double> keypoints = std::nullopt);

// Loads every referenced image (paths relative to image_dir) and extracts
// features across worker threads. Throws Io when a file is missing.
std::vector<FrameFeatures> extract_frame_features(std::span<const io::FrameRecord> frames,
                                                  const std::filesystem::path& image_dir,
                                                  unsigned threads = 0);

// Signed permutation from sensor axes to (right, up, front).
struct AxisMap {
  std::array<int, 3> source{0, 1, 2};
  std::array<int, 3> sign{1, 1, -1};

  // Body frame X right, Y up, Z backward.
  static AxisMap body_default() { return {}; }
  // "x,y,-z" style: the sensor axis that becomes right, up, front.
  static AxisMap parse(std::string_view text);
};

void validate(const AxisMap& map);

struct ImuFeatures {
  double timestamp = 0.0;
  double acc_right = 0.0;
  double acc_up = 0.0;
  double acc_front = 0.0;
  double angvel_pitch = 0.0;  // about right
  double angvel_yaw = 0.0;    // about up
  double angvel_roll = 0.0;   // about front
};

struct ImuFeatureOptions {
  AxisMap axis_map = AxisMap::body_default();
  // Subtract a constant +gravity on the mapped up axis before taking magnitudes.
  bool remove_gravity = false;
  double gravity = 9.81;
};

// Throws BadAxisMap.
std::vector<ImuFeatures> imu_features(std::span<const io::ImuSample> samples,
                                      const ImuFeatureOptions& opts = {});

// Column-oriented table of per-timestamp scalars.
struct FeatureTable {
  std::vector<std::string> names;
  std::vector<double> timestamps;
  std::vector<std::vector<double>> columns;  // columns[c][row]

  std::size_t rows() const { return timestamps.size(); }
};

FeatureTable to_table(std::span<const FrameFeatures> frames);
FeatureTable to_table(std::span<const ImuFeatures> samples);

// CSV: timestamp,<names...>. Frame tables use
// timestamp,brightness,contrast,entropy,laplacian_var,keypoints.
std::string format_feature_table(const FeatureTable& table);
FeatureTable parse_feature_table(std::string_view text);
void write_feature_table(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_feature_table(const std::filesystem::path& path);

// One row per error point whose window [window_start, timestamp] holds at
// least one feature sample; each feature is averaged over the window.
struct WindowedTable {
  std::vector<std::string> names;
  std::vector<double> timestamps;
  std::vector<double> errors;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return timestamps.size(); }
};

// Throws NoOverlap when no window holds a sample.
WindowedTable aggregate_to_windows(const FeatureTable& table, const metrics::ErrorSeries& series);

// Sample Pearson correlation. Throws InsufficientData (n < 3) and ConstantInput.
double pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationEntry {
  std::string name;
  double r = 0.0;
  std::size_t n = 0;
  std::optional<ErrorCode> failure;  // set when r could not be computed
};

struct CorrelationReport {
  std::vector<CorrelationEntry> entries;

  const CorrelationEntry* find(std::string_view name) const;
};

CorrelationReport correlation_report(const WindowedTable& table);
CorrelationReport correlation_report(const FeatureTable& table, const metrics::ErrorSeries& series);
// Tables sampled at different rates (camera, IMU) are windowed independently.
CorrelationReport correlation_report(std::span<const FeatureTable> tables,
                                     const metrics::ErrorSeries& series);

std::string report_json(const CorrelationReport& report);

}  // namespace trackeval::features
