#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gdiff {

enum class ErrorKind {
  InvalidArgument,
  NonFinite,
  OutOfDomain,
  HermitianBroken,
  BadMagic,
  VersionMismatch,
  Truncated,
  Io,
  CapacityExceeded,
  Numeric,
  IncompatibleSupport,
  Reducible,
  Config,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::OutOfDomain: return "out of domain";
    case ErrorKind::HermitianBroken: return "broken Hermitian symmetry";
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::VersionMismatch: return "version mismatch";
    case ErrorKind::Truncated: return "truncated payload";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::CapacityExceeded: return "capacity exceeded";
    case ErrorKind::Numeric: return "numeric failure";
    case ErrorKind::IncompatibleSupport: return "incompatible support";
    case ErrorKind::Reducible: return "reducible chain";
    case ErrorKind::Config: return "config error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace gdiff
