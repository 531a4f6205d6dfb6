#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmian {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input is structurally valid but violates a contract (missing member, bad value).
class ValidationError : public Error {
 public:
  ValidationError(std::string member, std::string stem)
      : Error("validation failed: missing or invalid '" + member + "' for sample '" + stem + "'"),
        member_(std::move(member)),
        stem_(std::move(stem)) {}
  explicit ValidationError(const std::string& what) : Error(what) {}

  const std::string& member() const { return member_; }
  const std::string& stem() const { return stem_; }

 private:
  std::string member_;
  std::string stem_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OutOfBounds : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateMap : public Error {
 public:
  using Error::Error;
};

class DegenerateScreenshot : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class NoFixations : public Error {
 public:
  using Error::Error;
};

class DegenerateGroundTruth : public Error {
 public:
  using Error::Error;
};

class ZeroVariance : public Error {
 public:
  using Error::Error;
};

class DetectorError : public Error {
 public:
  DetectorError(const std::string& what, std::string cause)
      : Error(what + ": " + cause), cause_(std::move(cause)) {}
  const std::string& cause() const { return cause_; }

 private:
  std::string cause_;
};

class TransferError : public Error {
 public:
  TransferError(std::string tensor, const std::string& detail)
      : Error("transfer failed for tensor '" + tensor + "': " + detail), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

class LayerNotFound : public Error {
 public:
  LayerNotFound(const std::string& requested, std::vector<std::string> valid)
      : Error(build_message(requested, valid)), valid_(std::move(valid)) {}
  const std::vector<std::string>& valid_layers() const { return valid_; }

 private:
  static std::string build_message(const std::string& requested, const std::vector<std::string>& valid) {
    std::string msg = "unknown layer '" + requested + "'; valid layers:";
    for (const auto& name : valid) msg += " " + name;
    return msg;
  }
  std::vector<std::string> valid_;
};

}  // namespace mmian
