#pragma once

#include <stdexcept>
#include <string>

namespace vfn {

// Base of every error raised by the library. `kind()` is a short stable tag
// used by the command line front end for machine-readable diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Violated precondition on an argument (shape, bounds, dimension mismatch).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

// Image too small for the requested crop geometry.
class SizeError : public Error {
 public:
  explicit SizeError(const std::string& what) : Error("size", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class DecodeError : public Error {
 public:
  DecodeError(std::string path, const std::string& what)
      : Error("decode", path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

// Malformed persisted artifact: bad magic, unknown version, checksum mismatch.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

// A NaN or infinity appeared in a forward or backward pass.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

}  // namespace vfn
