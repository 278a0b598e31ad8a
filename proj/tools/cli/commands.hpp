#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trackeval/error.hpp"

namespace trackeval::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kRuntime = 3 };

// Network and filesystem failures are runtime errors; everything else is a
// problem with the inputs.
int exit_code_for(ErrorCode code);

// Entry point shared by main() and the tests. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Default output directory: the flag, then $TRACKEVAL_OUT_DIR, then ./trackeval_out.
std::filesystem::path resolve_out_dir(const std::string& flag);

struct DeviceMeans {
  std::string device;
  double rpe_cm = 0.0;
  double ape_cm = 0.0;
};

struct DeviceReport {
  std::string device;
  double rpe_cm = 0.0;
  double ape_cm = 0.0;
  double rpe_ratio = 0.0;  // percent of the reference device's mean
  double ape_ratio = 0.0;
};

// Throws BadSpec when the reference is absent or has a zero mean.
std::vector<DeviceReport> ratio_table(std::span<const DeviceMeans> means, std::string_view reference);

// "device,rpe_cm,ape_cm" with a header line.
std::vector<DeviceMeans> parse_means_csv(std::string_view text);

std::string format_report_text(std::span<const DeviceReport> rows, std::string_view reference);
std::string format_report_json(std::span<const DeviceReport> rows, std::string_view reference);
std::string format_fig6_csv(std::span<const DeviceReport> rows);

}  // namespace trackeval::cli
