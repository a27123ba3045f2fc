#pragma once

#include <stdexcept>
#include <string>

namespace graphstad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (incompatible dims, rejected TL combinations, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violating a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File-system failures; the message always carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// On-disk container whose manifest and blob disagree.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& entry, const std::string& what)
      : Error("corrupt checkpoint entry '" + entry + "': " + what), entry_(entry) {}
  const std::string& entry() const noexcept { return entry_; }

 private:
  std::string entry_;
};

/// Non-finite values inside the numerical pipeline.
class NumericFault : public Error {
 public:
  using Error::Error;
};

}  // namespace graphstad
