#include "trackeval/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "trackeval/error.hpp"

namespace trackeval::synth {

namespace {

constexpr double kPi = std::numbers::pi;

Quat yaw_pitch_roll(double yaw, double pitch, double roll) {
  return canonicalize(axis_angle(Vec3::UnitY(), yaw) * axis_angle(Vec3::UnitX(), pitch) *
                      axis_angle(Vec3::UnitZ(), roll));
}

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

std::size_t sample_count(double duration, double rate) {
  return static_cast<std::size_t>(std::llround(duration * rate));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::Shift: return "Shift";
    case Pattern::Patrol: return "Patrol";
    case Pattern::Inspect: return "Inspect";
    case Pattern::Rotate: return "Rotate";
  }
  return "?";
}

Pattern parse_pattern(std::string_view name) {
  const auto n = lower(name);
  if (n == "shift") return Pattern::Shift;
  if (n == "patrol") return Pattern::Patrol;
  if (n == "inspect") return Pattern::Inspect;
  if (n == "rotate") return Pattern::Rotate;
  throw Error(ErrorCode::BadSpec, "unknown motion pattern '" + std::string(name) +
                                      "' (expected Shift, Patrol, Inspect or Rotate)");
}

int MotionSpec::beats() const {
  if (beats_per_cycle) return *beats_per_cycle;
  return pattern == Pattern::Shift || pattern == Pattern::Rotate ? 4 : 6;
}

double MotionSpec::amplitude_or_default() const {
  if (amplitude) return *amplitude;
  switch (pattern) {
    case Pattern::Shift: return 0.5;
    case Pattern::Patrol: return 2.0;
    case Pattern::Inspect: return 1.0;
    case Pattern::Rotate: return kPi;
  }
  return 0.0;
}

double MotionSpec::period() const { return beats() * 60.0 / bpm; }

void validate(const MotionSpec& spec) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::BadSpec, msg); };
  if (!(spec.bpm > 0.0) || !std::isfinite(spec.bpm)) fail("bpm must be positive");
  if (spec.beats() <= 0) fail("beats_per_cycle must be positive");
  if (!(spec.amplitude_or_default() > 0.0)) fail("amplitude must be positive");
  if (!(spec.gt_rate > 0.0) || !(spec.est_rate > 0.0)) fail("rates must be positive");
  if (!(spec.tilt_amplitude >= 0.0)) fail("tilt_amplitude must be non-negative");
  if (!std::isfinite(spec.duration) || spec.duration < spec.period()) {
    fail("duration must cover at least one cycle (" + io::format_real(spec.period()) + " s)");
  }
}

Pose pattern_pose(const MotionSpec& spec, double t) {
  const double period = spec.period();
  const double amp = spec.amplitude_or_default();
  double yaw = 0.0;
  Vec3 p = Vec3::Zero();
  switch (spec.pattern) {
    case Pattern::Shift:
      p.x() = amp * std::sin(2.0 * kPi * t / period);
      break;
    case Pattern::Rotate:
      yaw = 0.5 * amp * std::sin(2.0 * kPi * t / period);
      break;
    case Pattern::Inspect: {
      // Sweep the half circle z >= 0 and back, facing the center.
      const double theta = 0.5 * kPi * (1.0 - std::cos(kPi * t / period));
      yaw = theta - 0.5 * kPi;
      p = amp * Vec3(std::sin(yaw), 0.0, std::cos(yaw));
      break;
    }
    case Pattern::Patrol: {
      // One traverse per cycle with a cosine speed profile; the heading flips
      // over a short window around each stop.
      p.x() = -0.5 * amp * std::cos(kPi * t / period);
      const double half_turn = 0.125 * period;
      yaw = -0.5 * kPi;
      const auto last = static_cast<long>(std::floor((t + half_turn) / period));
      for (long k = 1; k <= last; ++k) {
        const double s = smoothstep((t - (k * period - half_turn)) / (2.0 * half_turn));
        yaw += (k % 2 == 1 ? kPi : -kPi) * s;
      }
      break;
    }
  }
  double pitch = 0.0;
  double roll = 0.0;
  if (spec.tilt_amplitude > 0.0) {
    pitch = spec.tilt_amplitude * std::sin(2.0 * kPi * t / period);
    roll = spec.tilt_amplitude * std::sin(3.0 * kPi * t / period + 1.0);
  }
  return Pose(yaw_pitch_roll(yaw, pitch, roll), p);
}

Trajectory generate(const MotionSpec& spec) {
  validate(spec);
  const std::size_t n = sample_count(spec.duration, spec.gt_rate);
  std::vector<PoseSample> samples(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / spec.gt_rate;
    samples[k] = {spec.start_time + t, pattern_pose(spec, t)};
  }
  return Trajectory(std::move(samples));
}

Trajectory straight_line(double length, double speed, double rate, double start_time) {
  if (!(length > 0.0) || !(speed > 0.0) || !(rate > 0.0)) {
    throw Error(ErrorCode::BadSpec, "straight line needs positive length, speed and rate");
  }
  const std::size_t n = static_cast<std::size_t>(std::floor(length / speed * rate + 1e-9)) + 1;
  std::vector<PoseSample> samples(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / rate;
    samples[k] = {start_time + t, Pose(Quat::Identity(), Vec3(speed * t, 0.0, 0.0))};
  }
  return Trajectory(std::move(samples));
}

Trajectory concatenate(const Trajectory& a, const Trajectory& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  const double step = b.size() > 1 ? b[1].timestamp - b[0].timestamp : 1e-3;
  const double shift = a.end_time() + step - b.start_time();
  std::vector<PoseSample> samples(a.samples().begin(), a.samples().end());
  for (const auto& s : b.samples()) samples.push_back({s.timestamp + shift, s.pose});
  return Trajectory(std::move(samples), a.labels());
}

std::vector<io::ImuSample> derive_imu(const Trajectory& traj, double rate, bool gravity_on) {
  const std::size_t n = traj.size();
  if (n < 3) {
    throw Error(ErrorCode::TooShort, "IMU derivation needs at least 3 poses");
  }
  if (!(rate > 0.0)) {
    throw Error(ErrorCode::BadSpec, "IMU rate must be positive");
  }
  std::vector<Vec3> acc(n);
  std::vector<Vec3> gyro(n);
  const Vec3 up(0.0, kGravity, 0.0);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const auto& a = traj[k - 1];
    const auto& b = traj[k];
    const auto& c = traj[k + 1];
    const double h1 = b.timestamp - a.timestamp;
    const double h2 = c.timestamp - b.timestamp;
    const Vec3 v1 = (b.pose.translation - a.pose.translation) / h1;
    const Vec3 v2 = (c.pose.translation - b.pose.translation) / h2;
    Vec3 world_acc = 2.0 * (v2 - v1) / (h1 + h2);
    if (gravity_on) world_acc += up;
    acc[k] = b.pose.rotation.conjugate() * world_acc;
    gyro[k] = log_map(a.pose.rotation.conjugate() * c.pose.rotation) / (h1 + h2);
  }
  acc[0] = acc[1];
  gyro[0] = gyro[1];
  acc[n - 1] = acc[n - 2];
  gyro[n - 1] = gyro[n - 2];

  const double t0 = traj.start_time();
  const double t1 = traj.end_time();
  const auto m = static_cast<std::size_t>(std::floor((t1 - t0) * rate + 1e-9)) + 1;
  std::vector<io::ImuSample> out;
  out.reserve(m);
  std::size_t j = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = std::min(t0 + static_cast<double>(i) / rate, t1);
    while (j + 2 < n && traj[j + 1].timestamp <= t) ++j;
    const double ta = traj[j].timestamp;
    const double tb = traj[j + 1].timestamp;
    const double u = std::clamp((t - ta) / (tb - ta), 0.0, 1.0);
    out.push_back({t, (1.0 - u) * acc[j] + u * acc[j + 1], (1.0 - u) * gyro[j] + u * gyro[j + 1]});
  }
  return out;
}

void validate(const DegradationModel& model) {
  if (!(model.trans_noise_std >= 0.0) || !(model.rot_noise_std >= 0.0) ||
      !(model.drift_rate >= 0.0) || !(model.latency >= 0.0) ||
      !(model.drift_direction_diffusion >= 0.0)) {
    throw Error(ErrorCode::BadSpec, "degradation parameters must be non-negative");
  }
  if (!std::isfinite(model.clock_offset)) {
    throw Error(ErrorCode::BadSpec, "clock_offset must be finite");
  }
  if (!(model.est_rate > 0.0)) {
    throw Error(ErrorCode::BadSpec, "est_rate must be positive");
  }
}

Trajectory degrade(const Trajectory& gt, const DegradationModel& model) {
  validate(model);
  if (gt.empty()) return gt;
  const double first = gt.start_time() + model.latency;
  const double last = gt.end_time();
  if (first > last) {
    throw Error(ErrorCode::TooShort, "latency exceeds the trajectory duration");
  }
  const auto n = static_cast<std::size_t>(std::floor((last - first) * model.est_rate + 1e-9)) + 1;

  // Separate streams so the drift path does not depend on the noise settings.
  std::seed_seq drift_seed{model.rng_seed, std::uint64_t{1}};
  std::seed_seq noise_seed{model.rng_seed, std::uint64_t{2}};
  std::mt19937_64 drift_rng(drift_seed);
  std::mt19937_64 noise_rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](std::mt19937_64& rng) {
    const double x = normal(rng);
    const double y = normal(rng);
    const double z = normal(rng);
    return Vec3(x, y, z);
  };

  Vec3 direction = gaussian(drift_rng);
  direction = direction.norm() > 0.0 ? direction.normalized() : Vec3::UnitX();
  Vec3 drift = Vec3::Zero();
  Vec3 prev_position = Vec3::Zero();

  std::vector<PoseSample> samples;
  samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = std::min(first + static_cast<double>(k) / model.est_rate, last);
    const Pose truth = interpolate_at(gt, t - model.latency);

    const Vec3 turn = gaussian(drift_rng);
    if (k > 0) {
      const double ds = (truth.translation - prev_position).norm();
      const Vec3 tangent = turn - turn.dot(direction) * direction;
      direction = (direction + model.drift_direction_diffusion * std::sqrt(ds) * tangent).normalized();
      drift += model.drift_rate * ds * direction;
    }
    prev_position = truth.translation;

    Vec3 position = truth.translation + drift;
    Quat rotation = truth.rotation;
    const Vec3 tn = gaussian(noise_rng);
    const Vec3 rn = gaussian(noise_rng);
    if (model.trans_noise_std > 0.0) position += model.trans_noise_std * tn;
    if (model.rot_noise_std > 0.0) rotation = rotation * exp_map(model.rot_noise_std * rn);
    samples.push_back({t + model.clock_offset, Pose(rotation, position)});
  }
  return Trajectory(std::move(samples), gt.labels());
}

namespace {

template <class T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::BadSpec, std::string("field '") + key + "' has the wrong type");
  }
}

nlohmann::json parse_object(std::string_view text, std::initializer_list<std::string_view> keys) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadSpec, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::BadSpec, "expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw Error(ErrorCode::BadSpec, "unknown field '" + key + "'");
    }
  }
  return j;
}

}  // namespace

MotionSpec motion_spec_from_json(std::string_view text) {
  const auto j = parse_object(text, {"pattern", "bpm", "beats_per_cycle", "amplitude", "duration",
                                     "gt_rate", "est_rate", "tilt_amplitude", "start_time"});
  MotionSpec s;
  s.pattern = parse_pattern(field<std::string>(j, "pattern", "Shift"));
  s.bpm = field(j, "bpm", s.bpm);
  if (j.contains("beats_per_cycle")) s.beats_per_cycle = field(j, "beats_per_cycle", 0);
  if (j.contains("amplitude")) s.amplitude = field(j, "amplitude", 0.0);
  s.duration = field(j, "duration", s.duration);
  s.gt_rate = field(j, "gt_rate", s.gt_rate);
  s.est_rate = field(j, "est_rate", s.est_rate);
  s.tilt_amplitude = field(j, "tilt_amplitude", s.tilt_amplitude);
  s.start_time = field(j, "start_time", s.start_time);
  validate(s);
  return s;
}

DegradationModel degradation_from_json(std::string_view text) {
  const auto j = parse_object(text, {"trans_noise_std", "rot_noise_std", "drift_rate", "latency",
                                     "clock_offset", "rng_seed", "est_rate",
                                     "drift_direction_diffusion"});
  DegradationModel m;
  m.trans_noise_std = field(j, "trans_noise_std", m.trans_noise_std);
  m.rot_noise_std = field(j, "rot_noise_std", m.rot_noise_std);
  m.drift_rate = field(j, "drift_rate", m.drift_rate);
  m.latency = field(j, "latency", m.latency);
  m.clock_offset = field(j, "clock_offset", m.clock_offset);
  m.rng_seed = field(j, "rng_seed", m.rng_seed);
  m.est_rate = field(j, "est_rate", m.est_rate);
  m.drift_direction_diffusion = field(j, "drift_direction_diffusion", m.drift_direction_diffusion);
  validate(m);
  return m;
}

}  // namespace trackeval::synth
