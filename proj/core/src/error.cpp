#include "trackeval/error.hpp"

namespace trackeval {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case ErrorCode::BadQuaternion: return "BadQuaternion";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::NoResponse: return "NoResponse";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::InsufficientExcitation: return "InsufficientExcitation";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::BadAxisMap: return "BadAxisMap";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::BadSpec: return "BadSpec";
  }
  return "Unknown";
}

namespace {

std::string decorate(ErrorCode code, const std::string& message, std::size_t line) {
  std::string out(to_string(code));
  if (line > 0) {
    out += " (line " + std::to_string(line) + ")";
  }
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message, std::size_t line)
    : std::runtime_error(decorate(code, message, line)), code_(code), line_(line) {}

}  // namespace trackeval
