#pragma once

#include <stdexcept>
#include <string>

namespace flowcot {

/// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
  kContamination = 5,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kData)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(w, ExitCode::kConfig) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(w, ExitCode::kData) {}
};
struct PlacementError : Error {
  explicit PlacementError(const std::string& w) : Error(w, ExitCode::kConfig) {}
};
struct CodecError : Error {
  explicit CodecError(const std::string& w) : Error(w, ExitCode::kData) {}
};
struct CapacityError : Error {
  explicit CapacityError(const std::string& w) : Error(w, ExitCode::kData) {}
};
struct DecodeError : Error {
  explicit DecodeError(const std::string& w) : Error(w, ExitCode::kData) {}
};
struct LengthError : Error {
  explicit LengthError(const std::string& w) : Error(w, ExitCode::kConfig) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error(w, ExitCode::kDivergence) {}
};
struct ContaminationError : Error {
  explicit ContaminationError(const std::string& w) : Error(w, ExitCode::kContamination) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(w, ExitCode::kData) {}
};

}  // namespace flowcot
