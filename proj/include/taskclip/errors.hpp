#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace taskclip {

// Exit codes double as machine-readable error categories on the CLI.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitIo = 3,
  kExitParse = 4,
  kExitData = 5,
  kExitNanAbort = 6,
  kExitCalibration = 7,
  kExitCheckpoint = 8,
  kExitEvalAlign = 9,
};

class Error : public std::runtime_error {
 public:
  Error(int exit_code, std::string kind, const std::string& msg)
      : std::runtime_error(msg), exit_code_(exit_code), kind_(std::move(kind)) {}

  int exit_code() const { return exit_code_; }
  const std::string& kind() const { return kind_; }

 private:
  int exit_code_;
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(kExitUsage, "shape", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(kExitUsage, "config", m) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(kExitUsage, "usage", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error(kExitIo, "io", m) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(kExitParse, "parse", m) {}
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& m) : Error(kExitParse, "schema", m) {}
};

struct DataError : Error {
  explicit DataError(const std::string& m) : Error(kExitData, "data", m) {}
};

struct NanError : Error {
  explicit NanError(const std::string& m) : Error(kExitNanAbort, "nan", m) {}
};

struct CalibrationError : Error {
  explicit CalibrationError(const std::string& m) : Error(kExitCalibration, "calibration", m) {}
};

struct EvalError : Error {
  explicit EvalError(const std::string& m) : Error(kExitEvalAlign, "eval", m) {}
};

// Checkpoint failures carry a distinct fault code per failure mode.
enum class CheckpointFault : int {
  kMagicMismatch = 1,
  kVersionUnsupported = 2,
  kTruncated = 3,
  kBadManifest = 4,
};

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, const std::string& m)
      : Error(kExitCheckpoint, "checkpoint", m), fault_(fault) {}

  CheckpointFault fault() const { return fault_; }

 private:
  CheckpointFault fault_;
};

inline std::string shape_string(int rows, int cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

}  // namespace taskclip
