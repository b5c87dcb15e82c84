#pragma once

#include <stdexcept>
#include <string>

namespace nhsync {

// Failure categories. The numeric values are part of the C API (nhsync.h).
enum class ErrorCode : int {
  Ok = 0,
  InvalidArgument = 1,
  Domain = 2,
  IntegrationFailure = 3,
  NaNFailure = 4,
  InternalConsistency = 5,
  ChartEscape = 6,
  NoInvariantGraph = 7,
  InsufficientSampling = 8,
  InsufficientData = 9,
  Precondition = 10,
  NHRatioViolation = 11,
  Config = 12,
  Io = 13,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Step-size underflow or similar; carries the last time the solution was good.
class IntegrationError : public Error {
 public:
  IntegrationError(ErrorCode code, const std::string& what, double last_good_time)
      : Error(code, what), last_good_time_(last_good_time) {}

  double last_good_time() const noexcept { return last_good_time_; }

 private:
  double last_good_time_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace nhsync
