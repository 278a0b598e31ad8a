#pragma once

// Reference implementations used only by tests. They are deliberately naive
// and share no code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "trackeval/geometry.hpp"
#include "trackeval/io.hpp"

namespace oracle {

using trackeval::Pose;
using trackeval::Quat;
using trackeval::Vec3;

inline constexpr double kPi = 3.14159265358979323846;

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector4d v(n(rng), n(rng), n(rng), n(rng));
  v.normalize();
  return Quat(v(0), v(1), v(2), v(3));
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

inline Pose random_pose(std::mt19937_64& rng, double trans_scale = 1.0) {
  return Pose(random_quat(rng), random_vec(rng, trans_scale));
}

// Homogeneous 4x4 product, independent of Pose::compose.
inline Eigen::Matrix4d matrix(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation.toRotationMatrix();
  m.topRightCorner<3, 1>() = p.translation;
  return m;
}

inline double rotation_angle(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

// Angle between two rotations from their matrices.
inline double angle_between(const Quat& a, const Quat& b) {
  const Eigen::Matrix3d d = a.toRotationMatrix().transpose() * b.toRotationMatrix();
  // acos loses precision near zero; fall back to the skew part there.
  const Eigen::Matrix3d s = 0.5 * (d - d.transpose());
  const double sin_angle = Vec3(s(2, 1), s(0, 2), s(1, 0)).norm();
  const double cos_angle = 0.5 * (d.trace() - 1.0);
  return std::atan2(sin_angle, cos_angle);
}

inline Quat about_z(double deg) {
  return Quat(Eigen::AngleAxisd(deg * kPi / 180.0, Vec3::UnitZ()));
}

// Exhaustive FAST-9 segment test: every start index, every length-9 window.
inline bool segment_test(const trackeval::io::GrayImage& img, int x, int y, int t) {
  static const int dx[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
  static const int dy[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};
  const int c = img.at(x, y);
  for (int start = 0; start < 16; ++start) {
    bool all_bright = true;
    bool all_dark = true;
    for (int k = 0; k < 9; ++k) {
      const int i = (start + k) % 16;
      const int p = img.at(x + dx[i], y + dy[i]);
      all_bright = all_bright && p > c + t;
      all_dark = all_dark && p < c - t;
    }
    if (all_bright || all_dark) return true;
  }
  return false;
}

inline std::size_t count_segment_corners(const trackeval::io::GrayImage& img, int t) {
  std::size_t n = 0;
  for (int y = 3; y < img.height - 3; ++y) {
    for (int x = 3; x < img.width - 3; ++x) {
      if (segment_test(img, x, y, t)) ++n;
    }
  }
  return n;
}

// Two-pass Pearson in long double.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// R^2 of the OLS line y ~ x as the squared correlation.
inline double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double r = pearson(x, y);
  return r * r;
}

inline trackeval::io::GrayImage random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  trackeval::io::GrayImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(u(rng));
  return img;
}

inline trackeval::io::GrayImage transpose(const trackeval::io::GrayImage& img) {
  trackeval::io::GrayImage t(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) t.at(y, x) = img.at(x, y);
  }
  return t;
}

inline trackeval::io::GrayImage checkerboard(int w, int h, int square) {
  trackeval::io::GrayImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y) = ((x / square + y / square) % 2) ? 255 : 0;
    }
  }
  return img;
}

}  // namespace oracle
