#include "nhsync/format.hpp"

#include <charconv>
#include <cmath>

#include "nhsync/error.hpp"

namespace nhsync {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Io, "cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Ok: return "ok";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::Domain: return "domain-error";
    case ErrorCode::IntegrationFailure: return "integration-failure";
    case ErrorCode::NaNFailure: return "nan-failure";
    case ErrorCode::InternalConsistency: return "internal-consistency";
    case ErrorCode::ChartEscape: return "chart-escape";
    case ErrorCode::NoInvariantGraph: return "no-nh-graph-found";
    case ErrorCode::InsufficientSampling: return "insufficient-sampling";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::Precondition: return "precondition-violation";
    case ErrorCode::NHRatioViolation: return "nh-ratio-violation";
    case ErrorCode::Config: return "config-error";
    case ErrorCode::Io: return "io-error";
  }
  return "unknown";
}

}  // namespace nhsync
