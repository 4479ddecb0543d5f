#pragma once

#include <stdexcept>
#include <string>

namespace kexp {

// Base class for every error this library raises on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, bad range, ...).
struct ContractError : Error {
  using Error::Error;
};

// Malformed input bytes (PPM/PGM payloads, checkpoint files).
struct FormatError : Error {
  using Error::Error;
};

// Well-formed input the library deliberately does not handle.
struct UnsupportedError : Error {
  using Error::Error;
};

// Invalid run configuration (missing class directory, bad fractions, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Training produced a non-finite gradient or parameter.
struct DivergenceError : Error {
  using Error::Error;
};

// Filesystem trouble (unreadable/unwritable paths).
struct IoError : Error {
  using Error::Error;
};

}  // namespace kexp
