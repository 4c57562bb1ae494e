#pragma once

#include <stdexcept>
#include <string>

namespace disncl {

// Error taxonomy. Callers that can recover catch the specific type;
// the CLI maps them to nonzero exit codes with the message on stderr.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RangeError : std::runtime_error {
  explicit RangeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IngestError : std::runtime_error {
  explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace disncl
