#pragma once

#include <stdexcept>
#include <string>

namespace softplus {

// Exit codes used by the command-line tool; each error family maps to one.
enum class ExitCode : int {
    kOk = 0,
    kDataError = 2,
    kNumericalFailure = 3,
    kVersionMismatch = 4,
};

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::kDataError; }
};

// Invalid distribution or model parameter (shape <= 0, p outside (0,1), ...).
class ParameterError : public Error {
  public:
    using Error::Error;
};

// Malformed input files, dimension mismatches, bad partitions.
class DataError : public Error {
  public:
    using Error::Error;
};

// Non-finite log-likelihood, singular precision matrix, broken chain invariant.
class NumericalError : public Error {
  public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kNumericalFailure; }
};

class VersionError : public Error {
  public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kVersionMismatch; }
};

namespace detail {

// takes a literal so hot-path checks never allocate
inline void require(bool ok, const char* msg) {
    if (!ok) throw ParameterError(msg);
}

}  // namespace detail
}  // namespace softplus
