#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "trackeval/error.hpp"
#include "trackeval/metrics.hpp"
#include "trackeval/synth.hpp"

using namespace trackeval;
using namespace trackeval::synth;

namespace {

MotionSpec spec_for(Pattern p, double duration = 0.0) {
  MotionSpec s;
  s.pattern = p;
  s.duration = duration > 0.0 ? duration : s.period();
  return s;
}

Vec3 forward(const Quat& q) { return q * Vec3(0, 0, -1); }

double yaw_of(const Quat& q) {
  const Vec3 f = forward(q);
  return std::atan2(-f.x(), -f.z());
}

}  // namespace

TEST(Pattern, ParseIsCaseInsensitive) {
  EXPECT_EQ(parse_pattern("shift"), Pattern::Shift);
  EXPECT_EQ(parse_pattern("PATROL"), Pattern::Patrol);
  EXPECT_EQ(parse_pattern("Inspect"), Pattern::Inspect);
  EXPECT_EQ(to_string(Pattern::Rotate), "Rotate");
  EXPECT_THROW(parse_pattern("spin"), Error);
}

TEST(MotionSpec, PeriodsAndValidation) {
  MotionSpec s;
  EXPECT_DOUBLE_EQ(s.period(), 4.8);
  s.pattern = Pattern::Patrol;
  EXPECT_DOUBLE_EQ(s.period(), 7.2);
  s.bpm = 0.0;
  try {
    validate(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadSpec);
  }
  s.bpm = 50.0;
  s.duration = 1.0;
  EXPECT_THROW(validate(s), Error);
}

TEST(Generate, SampleCountAndStart) {
  MotionSpec s;
  s.start_time = 12.5;
  const auto t = generate(s);
  ASSERT_EQ(t.size(), 6000u);
  EXPECT_EQ(t.start_time(), 12.5);
  EXPECT_NEAR(t[1].timestamp - t[0].timestamp, 0.01, 1e-12);
}

TEST(Shift, PeriodicWithFourPointEightSeconds) {
  const auto t = generate(spec_for(Pattern::Shift, 20.0));
  for (std::size_t k = 0; k + 480 < t.size(); k += 7) {
    EXPECT_NEAR(t[k].pose.translation.x(), t[k + 480].pose.translation.x(), 1e-9);
  }
  double lo = 0.0, hi = 0.0;
  for (const auto& s : t.samples()) {
    lo = std::min(lo, s.pose.translation.x());
    hi = std::max(hi, s.pose.translation.x());
    EXPECT_EQ(s.pose.translation.y(), 0.0);
    EXPECT_LT(oracle::angle_between(s.pose.rotation, Quat::Identity()), 1e-15);
  }
  EXPECT_NEAR(hi, 0.5, 1e-3);
  EXPECT_NEAR(lo, -0.5, 1e-3);
}

TEST(Rotate, TranslationStaysZero) {
  const auto t = generate(spec_for(Pattern::Rotate, 10.0));
  double max_yaw = 0.0;
  for (const auto& s : t.samples()) {
    EXPECT_EQ(s.pose.translation, Vec3::Zero());
    max_yaw = std::max(max_yaw, std::abs(yaw_of(s.pose.rotation)));
  }
  EXPECT_NEAR(max_yaw, oracle::kPi / 2, 1e-3);
}

TEST(Inspect, GazeTracksCenter) {
  const auto t = generate(spec_for(Pattern::Inspect, 20.0));
  for (const auto& s : t.samples()) {
    const Vec3 p = s.pose.translation;
    EXPECT_NEAR(p.norm(), 1.0, 1e-12);
    EXPECT_GE(p.z(), -1e-12);
    EXPECT_LT((forward(s.pose.rotation) + p.normalized()).norm(), 1e-6);
  }
}

TEST(Patrol, WalksTheLineAndTurnsAround) {
  const auto spec = spec_for(Pattern::Patrol, 14.4);
  const auto t = generate(spec);
  for (const auto& s : t.samples()) {
    EXPECT_LE(std::abs(s.pose.translation.x()), 1.0 + 1e-12);
  }
  // Facing +X on the outbound leg, -X on the return.
  EXPECT_NEAR(forward(pattern_pose(spec, 3.6).rotation).x(), 1.0, 1e-9);
  EXPECT_NEAR(forward(pattern_pose(spec, 10.8).rotation).x(), -1.0, 1e-9);
}

TEST(Tilt, AddsPitchAndRoll) {
  auto spec = spec_for(Pattern::Rotate);
  spec.tilt_amplitude = 0.3;
  const auto t = generate(spec);
  double max_up_dev = 0.0;
  for (const auto& s : t.samples()) {
    max_up_dev = std::max(max_up_dev, std::acos(std::clamp((s.pose.rotation * Vec3::UnitY()).y(), -1.0, 1.0)));
  }
  EXPECT_GT(max_up_dev, 0.2);
}

TEST(Generate, Deterministic) {
  const auto a = generate(spec_for(Pattern::Patrol));
  const auto b = generate(spec_for(Pattern::Patrol));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pose.translation, b[i].pose.translation);
    EXPECT_EQ(a[i].pose.rotation.coeffs(), b[i].pose.rotation.coeffs());
  }
}

TEST(StraightLine, AndConcatenate) {
  const auto a = straight_line(1.0, 0.5, 100.0);
  EXPECT_EQ(a.size(), 201u);
  EXPECT_NEAR(a.samples().back().pose.translation.x(), 1.0, 1e-12);
  const auto c = concatenate(a, straight_line(1.0, 1.0, 50.0));
  EXPECT_EQ(c.size(), 201u + 51u);
  EXPECT_NEAR(c[201].timestamp, 2.02, 1e-12);
}

TEST(DeriveImu, StaticReadsGravityUp) {
  std::vector<PoseSample> s;
  for (int i = 0; i < 100; ++i) s.push_back({0.01 * i, Pose()});
  const auto imu = derive_imu(Trajectory(s), 200.0);
  EXPECT_EQ(imu.size(), 199u);
  for (const auto& m : imu) {
    EXPECT_LT((m.acc - Vec3(0, kGravity, 0)).norm(), 1e-12);
    EXPECT_LT(m.gyro.norm(), 1e-12);
  }
  EXPECT_LT(derive_imu(Trajectory(s), 200.0, false)[50].acc.norm(), 1e-12);
}

TEST(DeriveImu, RotateYawRate) {
  const auto spec = spec_for(Pattern::Rotate, 9.6);
  const auto imu = derive_imu(generate(spec), 200.0);
  const double w = 2.0 * oracle::kPi / spec.period();
  const double peak = 0.5 * oracle::kPi * w;
  double max_rate = 0.0;
  for (const auto& m : imu) {
    max_rate = std::max(max_rate, std::abs(m.gyro.y()));
    EXPECT_NEAR(m.gyro.y(), peak * std::cos(w * m.timestamp), 0.02 * peak);
  }
  EXPECT_NEAR(max_rate, peak, 0.02 * peak);
}

TEST(DeriveImu, ShiftPeakAcceleration) {
  const auto spec = spec_for(Pattern::Shift, 9.6);
  const auto imu = derive_imu(generate(spec), 200.0, false);
  const double w = 2.0 * oracle::kPi / spec.period();
  const double peak = 0.5 * w * w;
  double max_acc = 0.0;
  for (const auto& m : imu) max_acc = std::max(max_acc, std::abs(m.acc.x()));
  EXPECT_NEAR(max_acc, peak, 0.02 * peak);
}

TEST(DeriveImu, IntegratedYawRateRecoversHeading) {
  const auto spec = spec_for(Pattern::Rotate, 9.6);
  const auto gt = generate(spec);
  const auto imu = derive_imu(gt, 200.0);
  double yaw = yaw_of(gt[0].pose.rotation);
  double worst = 0.0;
  for (std::size_t i = 1; i < imu.size(); ++i) {
    yaw += 0.5 * (imu[i].gyro.y() + imu[i - 1].gyro.y()) * (imu[i].timestamp - imu[i - 1].timestamp);
    const double truth = yaw_of(interpolate_at(gt, imu[i].timestamp).rotation);
    worst = std::max(worst, std::abs(yaw - truth));
  }
  EXPECT_LT(worst, 0.5 * oracle::kPi / 180.0);
}

TEST(DeriveImu, TooShort) {
  const Trajectory t({{0.0, Pose()}, {0.1, Pose()}});
  EXPECT_THROW(derive_imu(t), Error);
}

TEST(Degrade, ZeroModelResamplesTruth) {
  const auto gt = generate(spec_for(Pattern::Inspect));
  const auto est = degrade(gt, DegradationModel{});
  EXPECT_EQ(est.start_time(), gt.start_time());
  EXPECT_NEAR(est[1].timestamp - est[0].timestamp, 1.0 / 90.0, 1e-12);
  for (const auto& s : est.samples()) {
    const Pose truth = interpolate_at(gt, s.timestamp);
    EXPECT_EQ(s.pose.translation, truth.translation);
  }
}

TEST(Degrade, SeedDeterminism) {
  const auto gt = generate(spec_for(Pattern::Shift));
  DegradationModel m;
  m.trans_noise_std = 0.002;
  m.rot_noise_std = 0.001;
  m.drift_rate = 0.05;
  m.rng_seed = 42;
  const auto a = degrade(gt, m);
  const auto b = degrade(gt, m);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].pose.translation, b[i].pose.translation);
  m.rng_seed = 43;
  const auto c = degrade(gt, m);
  EXPECT_NE(a[100].pose.translation, c[100].pose.translation);
}

TEST(Degrade, DriftMagnitudeFollowsArcLength) {
  const auto gt = straight_line(10.0, 1.0, 100.0);
  DegradationModel m;
  m.drift_rate = 0.05;
  m.drift_direction_diffusion = 0.0;
  const auto est = degrade(gt, m);
  const auto& last = est.samples().back();
  const Vec3 offset = last.pose.translation - interpolate_at(gt, last.timestamp).translation;
  EXPECT_NEAR(offset.norm(), 0.05 * 10.0, 1e-9);
  // A wandering direction can only shorten the net displacement.
  m.drift_direction_diffusion = 0.5;
  const auto wander = degrade(gt, m);
  const auto& w = wander.samples().back();
  EXPECT_LE((w.pose.translation - interpolate_at(gt, w.timestamp).translation).norm(), 0.5 + 1e-9);
}

TEST(Degrade, LatencyAndClockOffset) {
  const auto gt = generate(spec_for(Pattern::Shift));
  DegradationModel m;
  m.latency = 0.05;
  m.clock_offset = -0.3;
  const auto est = degrade(gt, m);
  EXPECT_NEAR(est.start_time(), gt.start_time() + 0.05 - 0.3, 1e-12);
  for (std::size_t i = 0; i < est.size(); i += 17) {
    const double device_t = est[i].timestamp + 0.3;
    const Pose truth = interpolate_at(gt, std::max(device_t - 0.05, gt.start_time()));
    EXPECT_LT((est[i].pose.translation - truth.translation).norm(), 1e-12);
  }
  m.latency = 100.0;
  EXPECT_THROW(degrade(gt, m), Error);
}

TEST(Degrade, RejectsNegativeParameters) {
  DegradationModel m;
  m.trans_noise_std = -1.0;
  EXPECT_THROW(degrade(generate(spec_for(Pattern::Shift)), m), Error);
}

TEST(Degrade, NoiseFreeRpeMatchesDriftRateAcrossSeeds) {
  const auto gt = generate(MotionSpec{});
  const double d = 0.05;
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    DegradationModel m;
    m.drift_rate = d;
    m.rng_seed = seed;
    sum += metrics::rpe(degrade(gt, m), gt).stats().mean;
  }
  EXPECT_NEAR(sum / 50.0, 0.1 * d, 0.1 * 0.1 * d);
}

TEST(Json, SpecAndModel) {
  const auto s = motion_spec_from_json(R"({"pattern": "patrol", "bpm": 60, "duration": 30})");
  EXPECT_EQ(s.pattern, Pattern::Patrol);
  EXPECT_EQ(s.bpm, 60.0);
  EXPECT_EQ(s.duration, 30.0);
  EXPECT_THROW(motion_spec_from_json(R"({"pattern": "shift", "bmp": 60})"), Error);
  EXPECT_THROW(motion_spec_from_json("[1]"), Error);
  const auto m = degradation_from_json(R"({"drift_rate": 0.01, "rng_seed": 7})");
  EXPECT_EQ(m.drift_rate, 0.01);
  EXPECT_EQ(m.rng_seed, 7u);
  EXPECT_THROW(degradation_from_json(R"({"drift_rate": "fast"})"), Error);
}
