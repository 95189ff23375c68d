#pragma once

#include <stdexcept>
#include <string>

namespace ctnav {

// Coarse categories (kConfig/kSolver/kIo) double as process exit codes; the
// finer codes describe contract violations raised by the math kernels.
enum class ErrorCode : int {
  kOk = 0,
  kConfig = 2,
  kSolver = 3,
  kIo = 4,
  kDegenerateInput = 10,
  kNearPiRotation = 11,
  kNonPositiveDt = 12,
  kQueryOutOfSegment = 13,
  kNonFiniteInput = 14,
  kStaleBiasLinearization = 15,
  kDuplicateTimestamp = 16,
  kEmptyWindow = 17,
  kIllConditioned = 18,
  kEmptyStream = 19,
  kNonMonotoneTime = 20,
  kDegenerateGeometry = 21,
  kNotInitialized = 22,
  kTooFewPoints = 23,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace ctnav
