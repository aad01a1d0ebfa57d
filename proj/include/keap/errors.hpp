#pragma once

#include <stdexcept>
#include <string>

namespace keap {

// Shape disagreement between tensors (message names both shapes).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A softmax/attention row with no valid entries.
struct DegenerateRowError : std::runtime_error {
  explicit DegenerateRowError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration (bad head count, unknown variant, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated an operation precondition.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file (message carries the line number).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Token id outside the vocabulary.
struct VocabError : std::runtime_error {
  explicit VocabError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint blob does not match its manifest.
struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint written by an unknown format version.
struct VersionError : std::runtime_error {
  explicit VersionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or similar numeric breakdown.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace keap
