#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trackeval/geometry.hpp"

namespace trackeval::io {

namespace fs = std::filesystem;

struct ImuSample {
  double timestamp = 0.0;
  Vec3 acc = Vec3::Zero();   // m/s^2, sensor frame
  Vec3 gyro = Vec3::Zero();  // rad/s, sensor frame
};

struct FrameRecord {
  double timestamp = 0.0;
  std::string filename;
  std::optional<double> keypoints;  // precomputed count, when the log carries one
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Maps canonical column names (timestamp, tx, ..., qw, ax, ..., gz) to the
// header names of a foreign CSV. Used to import logs whose headers differ.
struct ColumnMapping {
  std::map<std::string, std::string> columns;

  static ColumnMapping from_json_file(const fs::path& path);
};

// Pose CSV: timestamp,tx,ty,tz,qx,qy,qz,qw. Header line optional on read.
Trajectory read_trajectory(const fs::path& path, const ColumnMapping* mapping = nullptr);
Trajectory parse_trajectory(std::string_view text, const ColumnMapping* mapping = nullptr);
std::string format_trajectory(const Trajectory& traj);
void write_trajectory(const fs::path& path, const Trajectory& traj);

// IMU CSV: timestamp,ax,ay,az,gx,gy,gz. Timestamps non-decreasing.
std::vector<ImuSample> read_imu(const fs::path& path, const ColumnMapping* mapping = nullptr);
std::vector<ImuSample> parse_imu(std::string_view text, const ColumnMapping* mapping = nullptr);
std::string format_imu(std::span<const ImuSample> samples);
void write_imu(const fs::path& path, std::span<const ImuSample> samples);

struct ImuRateCheck {
  double median_interval = 0.0;  // s
  double nominal_interval = 0.0;  // s
  bool ok = true;
};

// Flags streams whose median sample interval deviates from nominal by more than tolerance.
ImuRateCheck check_imu_rate(std::span<const ImuSample> samples, double nominal_hz = 200.0,
                            double tolerance = 0.2);

// Frame index CSV: timestamp,filename[,keypoints].
std::vector<FrameRecord> read_frame_index(const fs::path& path);
void write_frame_index(const fs::path& path, std::span<const FrameRecord> frames);

// Binary PGM (P5, maxval <= 255). PNG is decoded too when png_supported().
GrayImage read_gray_image(const fs::path& path);
void write_pgm(const fs::path& path, const GrayImage& image);
bool png_supported();
void write_png(const fs::path& path, const GrayImage& image);

// Shortest decimal representation that reads back to the same double.
std::string format_real(double value);
// Strict full-token parse; nullopt on any trailing garbage.
std::optional<double> parse_real(std::string_view token);
std::vector<std::string_view> split_fields(std::string_view line);

std::string read_text(const fs::path& path);
// Writes to a sibling temp file then renames over the target.
void write_text_atomic(const fs::path& path, std::string_view content);

}  // namespace trackeval::io
