#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "trackeval/error.hpp"
#include "trackeval/io.hpp"

using namespace trackeval;
namespace fs = std::filesystem;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::Io;
}

template <class F>
std::size_t line_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.line();
  }
  return 0;
}

Trajectory random_trajectory(std::mt19937_64& rng, std::size_t n) {
  std::vector<PoseSample> s;
  std::uniform_real_distribution<double> dt(1e-4, 0.05);
  double t = std::uniform_real_distribution<double>(-1e3, 1e3)(rng);
  for (std::size_t i = 0; i < n; ++i) {
    t += dt(rng);
    s.push_back({t, oracle::random_pose(rng, 50.0)});
  }
  return Trajectory(std::move(s));
}

}  // namespace

TEST(PoseCsv, ReadsTwoRowsAt100Hz) {
  const auto traj = io::parse_trajectory("0,0,0,0,0,0,0,1\n0.01,0.1,0,0,0,0,0,1\n");
  ASSERT_EQ(traj.size(), 2u);
  EXPECT_DOUBLE_EQ(traj[1].timestamp - traj[0].timestamp, 0.01);
  EXPECT_DOUBLE_EQ(traj[1].pose.translation.x(), 0.1);
}

TEST(PoseCsv, OptionalHeaderAndOrder) {
  const auto traj = io::parse_trajectory("timestamp,tx,ty,tz,qx,qy,qz,qw\n1,1,2,3,0,0,1,0\n");
  ASSERT_EQ(traj.size(), 1u);
  EXPECT_DOUBLE_EQ(traj[0].pose.rotation.z(), 1.0);
  EXPECT_DOUBLE_EQ(traj[0].pose.rotation.w(), 0.0);
  EXPECT_DOUBLE_EQ(traj[0].pose.translation.z(), 3.0);
}

TEST(PoseCsv, CanonicalizesAndRenormalizes) {
  const auto traj = io::parse_trajectory("0,0,0,0,0,0,0,-1.0004\n");
  EXPECT_NEAR(traj[0].pose.rotation.w(), 1.0, 1e-15);
}

TEST(PoseCsv, BadQuaternionCarriesLine) {
  const std::string text = "0,0,0,0,0,0,0,1\n0.01,0,0,0,0,0,0,0.2\n";
  EXPECT_EQ(code_of([&] { io::parse_trajectory(text); }), ErrorCode::BadQuaternion);
  EXPECT_EQ(line_of([&] { io::parse_trajectory(text); }), 2u);
}

TEST(PoseCsv, DuplicateTimestampRejected) {
  const std::string text = "t,x,y,z,a,b,c,d\n0,0,0,0,0,0,0,1\n0,0,0,0,0,0,0,1\n";
  EXPECT_EQ(code_of([&] { io::parse_trajectory(text); }), ErrorCode::NonMonotonicTimestamps);
  EXPECT_EQ(line_of([&] { io::parse_trajectory(text); }), 3u);
}

TEST(PoseCsv, MalformedRowsRejectedNotRepaired) {
  EXPECT_EQ(code_of([] { io::parse_trajectory("0,0,0,0,0,0,1\n"); }), ErrorCode::Parse);
  EXPECT_EQ(code_of([] { io::parse_trajectory("0,0,0,0,0,0,0,1,9\n"); }), ErrorCode::Parse);
  EXPECT_EQ(code_of([] { io::parse_trajectory("0,0,0,0,0,0,0,1\n1,0,x,0,0,0,0,1\n"); }), ErrorCode::Parse);
  EXPECT_EQ(line_of([] { io::parse_trajectory("0,0,0,0,0,0,0,1\n\n1,0,0,0,0,0,nan,1\n"); }), 3u);
  EXPECT_EQ(code_of([] { io::parse_trajectory("0,0,0,0,0,0,0,1e999\n"); }), ErrorCode::Parse);
}

TEST(PoseCsv, RoundTripExact) {
  std::mt19937_64 rng(21);
  TempDir dir;
  const auto traj = random_trajectory(rng, 200);
  io::write_trajectory(dir / "a.csv", traj);
  const auto back = io::read_trajectory(dir / "a.csv");
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    EXPECT_EQ(back[i].timestamp, traj[i].timestamp);
    EXPECT_EQ(back[i].pose.translation, traj[i].pose.translation);
    EXPECT_EQ(back[i].pose.rotation.coeffs(), traj[i].pose.rotation.coeffs());
  }
  io::write_trajectory(dir / "b.csv", back);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
}

TEST(PoseCsv, HeaderMappingImportsForeignColumns) {
  TempDir dir;
  write_file(dir / "map.json",
             R"({"timestamp":"time","tx":"px","ty":"py","tz":"pz","qx":"ox","qy":"oy","qz":"oz","qw":"ow"})");
  write_file(dir / "log.csv", "ow,ox,oy,oz,extra,px,py,pz,time\n1,0,0,0,42,1,2,3,0.5\n");
  const auto mapping = io::ColumnMapping::from_json_file(dir / "map.json");
  const auto traj = io::read_trajectory(dir / "log.csv", &mapping);
  ASSERT_EQ(traj.size(), 1u);
  EXPECT_DOUBLE_EQ(traj[0].timestamp, 0.5);
  EXPECT_EQ(traj[0].pose.translation, Vec3(1, 2, 3));
}

TEST(ImuCsv, EmptyDataIsEmptyList) {
  EXPECT_TRUE(io::parse_imu("timestamp,ax,ay,az,gx,gy,gz\n").empty());
  EXPECT_TRUE(io::parse_imu("").empty());
}

TEST(ImuCsv, RateCheck) {
  std::vector<io::ImuSample> s;
  for (int i = 0; i < 200; ++i) s.push_back({i / 199.0, Vec3::Zero(), Vec3::Zero()});
  const auto ok = io::check_imu_rate(s);
  EXPECT_TRUE(ok.ok);
  std::vector<io::ImuSample> slow;
  for (int i = 0; i < 100; ++i) slow.push_back({i / 100.0, Vec3::Zero(), Vec3::Zero()});
  EXPECT_FALSE(io::check_imu_rate(slow).ok);
}

TEST(ImuCsv, ShuffledTimestampsRejected) {
  const std::string text = "0,0,0,0,0,0,0\n0.01,0,0,0,0,0,0\n0.005,0,0,0,0,0,0\n";
  EXPECT_EQ(code_of([&] { io::parse_imu(text); }), ErrorCode::NonMonotonicTimestamps);
  EXPECT_EQ(line_of([&] { io::parse_imu(text); }), 3u);
  // equal timestamps are allowed for IMU streams
  EXPECT_EQ(io::parse_imu("0,0,0,0,0,0,0\n0,0,0,0,0,0,0\n").size(), 2u);
}

TEST(ImuCsv, RoundTrip) {
  std::mt19937_64 rng(22);
  std::vector<io::ImuSample> s;
  double t = 0.0;
  for (int i = 0; i < 300; ++i) {
    t += 0.005;
    s.push_back({t, oracle::random_vec(rng, 20.0), oracle::random_vec(rng, 5.0)});
  }
  TempDir dir;
  io::write_imu(dir / "a.csv", s);
  const auto back = io::read_imu(dir / "a.csv");
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].acc, s[i].acc);
    EXPECT_EQ(back[i].gyro, s[i].gyro);
  }
  io::write_imu(dir / "b.csv", back);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
}

TEST(FrameIndex, RoundTripWithAndWithoutKeypoints) {
  TempDir dir;
  std::vector<io::FrameRecord> frames{{0.0, "f0.pgm", std::nullopt}, {0.033, "f1.pgm", std::nullopt}};
  io::write_frame_index(dir / "a.csv", frames);
  auto back = io::read_frame_index(dir / "a.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].filename, "f1.pgm");
  EXPECT_FALSE(back[1].keypoints.has_value());

  frames[0].keypoints = 120;
  frames[1].keypoints = 98;
  io::write_frame_index(dir / "b.csv", frames);
  back = io::read_frame_index(dir / "b.csv");
  ASSERT_TRUE(back[0].keypoints.has_value());
  EXPECT_EQ(*back[0].keypoints, 120.0);
}

TEST(GrayImage, ReadsTinyP5) {
  TempDir dir;
  write_file(dir / "a.pgm", std::string("P5\n# comment\n2 2\n255\n") + std::string("\x00\x55\xaa\xff", 4));
  const auto img = io::read_gray_image(dir / "a.pgm");
  ASSERT_EQ(img.width, 2);
  ASSERT_EQ(img.height, 2);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 85, 170, 255}));
}

TEST(GrayImage, SixteenBitIsUnsupported) {
  TempDir dir;
  write_file(dir / "a.pgm", std::string("P5\n1 1\n65535\n") + std::string("\x00\x01", 2));
  EXPECT_EQ(code_of([&] { io::read_gray_image(dir / "a.pgm"); }), ErrorCode::UnsupportedFormat);
  write_file(dir / "b.ppm", "P6\n1 1\n255\nabc");
  EXPECT_EQ(code_of([&] { io::read_gray_image(dir / "b.ppm"); }), ErrorCode::UnsupportedFormat);
}

TEST(GrayImage, CorruptHeaders) {
  TempDir dir;
  write_file(dir / "a.pgm", "P5\n2 x\n255\n....");
  EXPECT_EQ(code_of([&] { io::read_gray_image(dir / "a.pgm"); }), ErrorCode::CorruptHeader);
  write_file(dir / "b.pgm", "P5\n4 4\n255\nshort");
  EXPECT_EQ(code_of([&] { io::read_gray_image(dir / "b.pgm"); }), ErrorCode::CorruptHeader);
  EXPECT_EQ(code_of([&] { io::read_gray_image(dir / "missing.pgm"); }), ErrorCode::Io);
}

TEST(GrayImage, PgmRoundTrip) {
  TempDir dir;
  const auto img = oracle::random_image(64, 64, 23);
  io::write_pgm(dir / "r.pgm", img);
  const auto back = io::read_gray_image(dir / "r.pgm");
  EXPECT_EQ(back.width, 64);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(GrayImage, PngRoundTripWhenAvailable) {
  if (!io::png_supported()) GTEST_SKIP() << "built without libpng";
  TempDir dir;
  const auto img = oracle::random_image(33, 17, 24);
  io::write_png(dir / "r.png", img);
  const auto back = io::read_gray_image(dir / "r.png");
  EXPECT_EQ(back.width, 33);
  EXPECT_EQ(back.height, 17);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Reals, ShortestRoundTripAndStrictParse) {
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    EXPECT_EQ(*io::parse_real(io::format_real(v)), v);
  }
  EXPECT_EQ(io::format_real(0.1), "0.1");
  EXPECT_FALSE(io::parse_real("1.0abc"));
  EXPECT_FALSE(io::parse_real(""));
  EXPECT_FALSE(io::parse_real("inf"));
}

TEST(AtomicWrite, ReplacesWholeFile) {
  TempDir dir;
  io::write_text_atomic(dir / "x.txt", "first version, long\n");
  io::write_text_atomic(dir / "x.txt", "second\n");
  EXPECT_EQ(slurp(dir / "x.txt"), "second\n");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1u);
}
