#pragma once

#include <stdexcept>
#include <string>

namespace flatbill {

enum class ErrorKind {
    InvalidConfig,
    HorizonOverflow,
    DegenerateStart,
    TangentialDerivative,
    FocusingBlowup,
    BisectionFailure,
    ShootingDivergence,
    InsufficientCounts,
    FixedPointDivergence,
    StepUnderflow,
    CurveDegenerate,
    InsufficientOrbits,
};

const char* to_string(ErrorKind kind);

/// Base exception for every recoverable failure in the library. The kind is
/// what callers switch on; the message carries the offending values.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace flatbill
