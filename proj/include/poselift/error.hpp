#pragma once

#include <stdexcept>
#include <string>

namespace poselift {

enum class ErrorKind {
    dimension,          // tensor/parameter shape mismatch
    window,             // time axis too short for a valid convolution
    empty_input,        // zero-sized batch or empty tape
    parse,              // malformed file content
    ordering,           // non-monotone or duplicated frame indices
    unfillable_joint,   // joint never visible, interpolation impossible
    behind_camera,      // projection requested for Z <= 0
    insufficient_observations,
    unsolvable,
    degenerate,         // alignment on a collinear point set
    config,
    io,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

}  // namespace poselift
