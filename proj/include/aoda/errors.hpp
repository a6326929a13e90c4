#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace aoda {

// Argument errors use std::invalid_argument; everything domain-specific
// derives from Error so callers can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class VocabularyMismatchError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class FingerprintMismatchError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

class TrainingAbort : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  DataError(std::filesystem::path path, const std::string& what)
      : Error(what + ": " + path.string()), path_(std::move(path)) {}

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace aoda
