#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include "commands.hpp"
#include "temp_dir.hpp"
#include "trackeval/calibration.hpp"
#include "trackeval/io.hpp"

using namespace trackeval;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = trackeval::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Result simulate(const std::filesystem::path& dir, std::vector<std::string> extra) {
  std::vector<std::string> args{"simulate", "--out", dir.string()};
  if (std::find(extra.begin(), extra.end(), "--duration") == extra.end()) {
    args.insert(args.end(), {"--duration", "20"});
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return invoke(args);
}

json run_entry(const std::string& device, const std::string& label, const std::string& sub) {
  return {{"device", device},
          {"label", label},
          {"estimate", sub + "/est.csv"},
          {"ground_truth", sub + "/gt.csv"},
          {"imu", sub + "/imu.csv"}};
}

void write_manifest(const std::filesystem::path& path, const json& j) { write_file(path, j.dump(2)); }

}  // namespace

TEST(Cli, SimulateDefaultsWriteSixThousandRows) {
  TempDir dir;
  const auto r = invoke({"simulate", "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_trajectory(dir / "gt.csv").size(), 6000u);
  const auto est = io::read_trajectory(dir / "est.csv");
  EXPECT_NEAR(est[1].timestamp - est[0].timestamp, 1.0 / 90.0, 1e-9);
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["runs"][0]["estimate"], "est.csv");
  EXPECT_EQ(json::parse(r.out), manifest);
}

TEST(Cli, ValidationErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(simulate(dir.path(), {"--bpm", "0"}).code, 2);
  EXPECT_EQ(simulate(dir.path(), {"--pattern", "Moonwalk"}).code, 2);
  EXPECT_EQ(invoke({"evaluate"}).code, 2);
  EXPECT_EQ(invoke({"no-such-command"}).code, 2);
}

TEST(Cli, EvaluateDriftAndRatios) {
  TempDir dir;
  ASSERT_EQ(simulate(dir / "a", {"--drift", "0.05", "--seed", "1"}).code, 0);
  ASSERT_EQ(simulate(dir / "b", {"--drift", "0.01", "--seed", "2", "--clock-offset", "0.4"}).code, 0);
  json b = run_entry("B", "Shift", "b");
  b["offset"] = 0.4;
  write_manifest(dir / "m.json", {{"reference", "A"}, {"runs", {run_entry("A", "Shift", "a"), b}}});
  const auto out = dir / "out";
  const auto r = invoke({"evaluate", "--manifest", (dir / "m.json").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(out / "report.json"));
  ASSERT_EQ(report["devices"].size(), 2u);
  const auto& a = report["devices"][0];
  const auto& bb = report["devices"][1];
  EXPECT_EQ(a["device"], "A");
  EXPECT_NEAR(a["rpe_mean_cm"].get<double>(), 0.5, 0.005);
  EXPECT_NEAR(bb["rpe_mean_cm"].get<double>(), 0.1, 0.001);
  EXPECT_DOUBLE_EQ(a["rpe_ratio_pct"].get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(a["ape_ratio_pct"].get<double>(), 100.0);
  EXPECT_NEAR(bb["rpe_ratio_pct"].get<double>(), 20.0, 0.5);
  EXPECT_TRUE(std::filesystem::exists(out / "series" / "A_Shift_rpe.csv"));
  EXPECT_TRUE(std::filesystem::exists(out / "series" / "B_Shift_ape.json"));
  const auto bars = slurp(out / "fig6_bars.csv");
  EXPECT_EQ(bars.substr(0, bars.find('\n')), "device,rpe_mean_cm,ape_mean_cm,rpe_ratio_pct,ape_ratio_pct");
  EXPECT_NE(r.out.find("ratios relative to A"), std::string::npos);
}

TEST(Cli, EvaluateIsIdempotent) {
  TempDir dir;
  ASSERT_EQ(simulate(dir.path(), {"--drift", "0.02", "--trans-noise", "0.001"}).code, 0);
  const auto m = (dir / "manifest.json").string();
  ASSERT_EQ(invoke({"evaluate", "--manifest", m, "--out", (dir / "o1").string()}).code, 0);
  ASSERT_EQ(invoke({"evaluate", "--manifest", m, "--out", (dir / "o2").string()}).code, 0);
  for (const char* f : {"report.json", "report.txt", "fig6_bars.csv", "runs.json"}) {
    EXPECT_EQ(slurp(dir / "o1" / f), slurp(dir / "o2" / f)) << f;
  }
}

TEST(Cli, EvaluateMeansOnly) {
  TempDir dir;
  write_file(dir / "means.csv", "device,rpe_cm,ape_cm\nQ2,0.8,4.0\nML2,0.2,1.0\n");
  const auto r = invoke({"evaluate", "--means", (dir / "means.csv").string(), "--reference", "ML2", "--out",
                      dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir / "report.json"));
  EXPECT_NEAR(report["devices"][0]["rpe_ratio_pct"].get<double>(), 400.0, 1e-9);
  EXPECT_NEAR(report["devices"][1]["ape_ratio_pct"].get<double>(), 100.0, 1e-12);
  EXPECT_EQ(invoke({"evaluate", "--means", (dir / "means.csv").string(), "--reference", "X", "--out",
                 dir.path().string()})
                .code,
            2);
}

TEST(Cli, EvaluateMissingFileIsRuntimeError) {
  TempDir dir;
  write_manifest(dir / "m.json", {{"runs", {run_entry("A", "x", "nowhere")}}});
  const auto r = invoke({"evaluate", "--manifest", (dir / "m.json").string(), "--out", dir.path().string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("A/x"), std::string::npos);
}

TEST(Cli, SyncApplyZeroDeltaIsIdentity) {
  TempDir dir;
  ASSERT_EQ(simulate(dir.path(), {"--trans-noise", "0.003"}).code, 0);
  const auto in = (dir / "est.csv").string();
  const auto out = (dir / "shifted.csv").string();
  ASSERT_EQ(invoke({"sync", "apply", "--delta", "0", "--input", in, "--output", out}).code, 0);
  EXPECT_EQ(slurp(dir / "est.csv"), slurp(dir / "shifted.csv"));
  ASSERT_EQ(invoke({"sync", "apply", "--delta", "0", "--imu", "--input", (dir / "imu.csv").string(),
                 "--output", out})
                .code,
            0);
  EXPECT_EQ(slurp(dir / "imu.csv"), slurp(dir / "shifted.csv"));
}

TEST(Cli, SyncApplyShiftsTimestamps) {
  TempDir dir;
  ASSERT_EQ(simulate(dir.path(), {}).code, 0);
  ASSERT_EQ(invoke({"sync", "apply", "--delta", "1.5", "--input", (dir / "gt.csv").string(), "--output",
                 (dir / "s.csv").string()})
                .code,
            0);
  const auto a = io::read_trajectory(dir / "gt.csv");
  const auto b = io::read_trajectory(dir / "s.csv");
  EXPECT_NEAR(b[10].timestamp, a[10].timestamp - 1.5, 1e-12);
}

TEST(Cli, SyncClientWithoutServerIsRuntimeError) {
  TempDir dir;
  const auto r = invoke({"sync", "client", "--host", "127.0.0.1", "--port", "9", "--timeout", "0.3",
                      "--duration", "0.5", "--out", dir.path().string()});
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, CaseStudyWithoutMountExplainsCalibrate) {
  TempDir dir;
  ASSERT_EQ(simulate(dir / "r", {}).code, 0);
  ASSERT_EQ(simulate(dir / "t", {"--drift", "0.05"}).code, 0);
  write_manifest(dir / "m.json", {{"reference", "REF"},
                                  {"runs", {run_entry("REF", "Shift", "r"), run_entry("TGT", "Shift", "t")}},
                                  {"case_study", {{"reference", "REF"}, {"target", "TGT"}}}});
  const auto r = invoke({"case-study", "--manifest", (dir / "m.json").string(), "--out", dir.path().string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("trackeval calibrate"), std::string::npos);
}

TEST(Cli, CaseStudyPerfectReferenceTracksMocap) {
  TempDir dir;
  ASSERT_EQ(simulate(dir / "r", {"--pattern", "Patrol", "--duration", "30"}).code, 0);
  ASSERT_EQ(simulate(dir / "t", {"--pattern", "Patrol", "--duration", "30", "--drift", "0.05",
                                 "--trans-noise", "0.002", "--seed", "5"})
                .code,
            0);
  calibration::write_extrinsic(dir / "mount.json", calibration::ExtrinsicResult{});
  write_manifest(dir / "m.json",
                 {{"reference", "REF"},
                  {"runs", {run_entry("REF", "Patrol", "r"), run_entry("TGT", "Patrol", "t")}},
                  {"case_study", {{"reference", "REF"}, {"target", "TGT"}, {"mount", "mount.json"}}}});
  const auto r = invoke({"case-study", "--manifest", (dir / "m.json").string(), "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir / "case_study.json"));
  EXPECT_GE(report["r2_rpe"].get<double>(), 0.99);
  EXPECT_GE(report["r2_ape"].get<double>(), 0.99);
  EXPECT_TRUE(report["labels"].contains("Patrol"));
}

TEST(Cli, CorrelateWritesMatrices) {
  TempDir dir;
  ASSERT_EQ(simulate(dir / "a", {"--pattern", "Inspect", "--tilt", "0.2", "--trans-noise", "0.002", "--drift",
                                 "0.02"})
                .code,
            0);
  ASSERT_EQ(simulate(dir / "b", {"--drift", "0.05", "--seed", "3"}).code, 0);
  write_manifest(dir / "m.json", {{"runs", {run_entry("A", "Inspect", "a"), run_entry("B", "Shift", "b")}}});
  const auto r = invoke({"correlate", "--manifest", (dir / "m.json").string(), "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto matrix = slurp(dir / "fig7_matrix_rpe.csv");
  EXPECT_EQ(matrix.substr(0, matrix.find('\n')),
            "device,acc_right,acc_up,acc_front,angvel_pitch,angvel_yaw,angvel_roll");
  EXPECT_NE(matrix.find("\nA,"), std::string::npos);
  EXPECT_NE(matrix.find("\nB,"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "fig7_matrix_ape.csv"));
  const auto j = json::parse(slurp(dir / "correlation.json"));
  EXPECT_EQ(j["A"]["rpe"].size(), 6u);
}

TEST(Cli, CalibrateRecoversIdentityFromSimulation) {
  TempDir dir;
  ASSERT_EQ(simulate(dir.path(), {"--pattern", "Inspect", "--tilt", "0.3", "--duration", "14.4"}).code, 0);
  const auto r = invoke({"calibrate", "--gt", (dir / "gt.csv").string(), "--est", (dir / "est.csv").string(),
                      "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto c = calibration::read_extrinsic(dir / "calibration.json");
  EXPECT_LT(c.extrinsic.translation.norm(), 1e-3);
}

TEST(Cli, BinaryExitCodes) {
  TempDir dir;
  const std::string tool = TRACKEVAL_TOOL_PATH;
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status(tool + " --version"), 0);
  EXPECT_EQ(status(tool + " simulate --bpm 0 --out " + dir.path().string()), 2);
  EXPECT_EQ(status("TRACKEVAL_OUT_DIR=" + dir.path().string() + " " + tool + " simulate --duration 5"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
}
