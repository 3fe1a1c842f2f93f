#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace icl {

// Contract violation: bad shapes, bad arguments, malformed structures.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Runtime failure: I/O, format errors, numeric blowup.
struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value detected while finite checks are enabled.
struct NumericError : RuntimeError {
  using RuntimeError::RuntimeError;
};

namespace detail {
[[noreturn]] inline void throw_invalid(const std::string& msg) { throw InvalidArgument(msg); }
[[noreturn]] inline void throw_runtime(const std::string& msg) { throw RuntimeError(msg); }
} // namespace detail

} // namespace icl

#define ICL_CHECK(cond, msg)                                            \
  do {                                                                  \
    if (!(cond)) {                                                      \
      std::ostringstream oss_;                                          \
      oss_ << msg;                                                      \
      ::icl::detail::throw_invalid(oss_.str());                        \
    }                                                                   \
  } while (0)

#define ICL_CHECK_IO(cond, msg)                                         \
  do {                                                                  \
    if (!(cond)) {                                                      \
      std::ostringstream oss_;                                          \
      oss_ << msg;                                                      \
      ::icl::detail::throw_runtime(oss_.str());                        \
    }                                                                   \
  } while (0)
