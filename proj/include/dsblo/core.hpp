#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dsblo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  Infeasible,
  Unbounded,
  MaxPivots,
  MaxIter,
  DegenerateActiveSet,
  NotSPD,
  ScheduleInfeasible,
  WindowIncomplete,
  GeneratorRejected,
  Io,
  Config,
  Internal,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::Unbounded: return "Unbounded";
    case ErrorCode::MaxPivots: return "MaxPivots";
    case ErrorCode::MaxIter: return "MaxIter";
    case ErrorCode::DegenerateActiveSet: return "DegenerateActiveSet";
    case ErrorCode::NotSPD: return "NotSPD";
    case ErrorCode::ScheduleInfeasible: return "ScheduleInfeasible";
    case ErrorCode::WindowIncomplete: return "WindowIncomplete";
    case ErrorCode::GeneratorRejected: return "GeneratorRejected";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
/// `value` holds an attached diagnostic number where one applies (best
/// delta_cert for MaxIter, smallest singular value for DegenerateActiveSet).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        double value = std::numeric_limits<double>::quiet_NaN())
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        value_(value) {}

  ErrorCode code() const noexcept { return code_; }
  double value() const noexcept { return value_; }

 private:
  ErrorCode code_;
  double value_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

inline void require_dims(Index got, Index want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": expected " + std::to_string(want) +
                    ", got " + std::to_string(got));
  }
}

using Rng = std::mt19937_64;

/// Independent generator for a named stream of a seeded run. Different
/// stream ids never share state, so swapping the draws of one distribution
/// leaves the others untouched.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32), 0x5eedu};
  return Rng(seq);
}

namespace streams {
inline constexpr std::uint64_t kPerturbation = 1;
inline constexpr std::uint64_t kSegment = 2;
inline constexpr std::uint64_t kComponent = 3;
inline constexpr std::uint64_t kGenerator = 4;
inline constexpr std::uint64_t kMonteCarlo = 5;
}  // namespace streams

}  // namespace dsblo
