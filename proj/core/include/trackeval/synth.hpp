#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trackeval/geometry.hpp"
#include "trackeval/io.hpp"

namespace trackeval::synth {

// World frame Y up. Body frame X right, Y up, Z backward, so a yaw of psi
// faces (-sin psi, 0, -cos psi).
inline constexpr double kGravity = 9.81;

enum class Pattern { Shift, Patrol, Inspect, Rotate };

std::string_view to_string(Pattern p);
// Case-insensitive. Throws BadSpec.
Pattern parse_pattern(std::string_view name);

struct MotionSpec {
  Pattern pattern = Pattern::Shift;
  double bpm = 50.0;
  std::optional<int> beats_per_cycle;  // 4 for Shift/Rotate, 6 for Patrol/Inspect
  // Shift: half-width (m). Rotate: total yaw sweep (rad). Inspect: radius (m).
  // Patrol: line length (m).
  std::optional<double> amplitude;
  double duration = 60.0;
  double gt_rate = 100.0;
  double est_rate = 90.0;
  // Pitch and roll nods (rad) layered on any pattern. Zero keeps rotation about up only.
  double tilt_amplitude = 0.0;
  double start_time = 0.0;

  int beats() const;
  double amplitude_or_default() const;
  // One pattern cycle: beats * 60 / bpm.
  double period() const;
};

// Throws BadSpec.
void validate(const MotionSpec& spec);

// Sampled at start_time + k / gt_rate for k < round(duration * gt_rate).
Trajectory generate(const MotionSpec& spec);

// Pose of the pattern at time t (seconds since start_time).
Pose pattern_pose(const MotionSpec& spec, double t);

// Constant-velocity walk along +X with fixed forward gaze.
Trajectory straight_line(double length, double speed, double rate, double start_time = 0.0);

// Appends b after a, shifting b's timestamps to start one b-sample after a ends.
Trajectory concatenate(const Trajectory& a, const Trajectory& b);

// Specific force and body rate in the body frame at `rate` Hz. Throws TooShort.
std::vector<io::ImuSample> derive_imu(const Trajectory& traj, double rate = 200.0,
                                      bool gravity_on = true);

struct DegradationModel {
  double trans_noise_std = 0.0;  // m, per axis
  double rot_noise_std = 0.0;    // rad, per axis of the rotation vector
  double drift_rate = 0.0;       // m of drift per m of gt arc length
  double latency = 0.0;          // s
  double clock_offset = 0.0;     // s, signed
  std::uint64_t rng_seed = 0;
  double est_rate = 90.0;
  // Angular random walk of the drift direction, rad per sqrt(m).
  double drift_direction_diffusion = 0.2;
};

// Throws BadSpec.
void validate(const DegradationModel& model);

// Device estimate: samples at est_rate over the part of gt that stays valid
// after latency, pose at t = gt(t - latency) + drift + noise, reported at
// t + clock_offset.
Trajectory degrade(const Trajectory& gt, const DegradationModel& model);

// JSON documents with the field names above; pattern as a string.
MotionSpec motion_spec_from_json(std::string_view text);
DegradationModel degradation_from_json(std::string_view text);

}  // namespace trackeval::synth
