#pragma once

#include <stdexcept>
#include <string>

namespace rppgid {

// Base of every error the toolkit raises. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class IngestError : public Error { using Error::Error; };
class DeidError : public Error { using Error::Error; };
class DspError : public Error { using Error::Error; };
class ModelError : public Error { using Error::Error; };
class EvalError : public Error { using Error::Error; };

// An upstream artifact (file, checkpoint) the command depends on is absent.
class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(std::string path)
      : Error("missing artifact: " + path), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace rppgid
