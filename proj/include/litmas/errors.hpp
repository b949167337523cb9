#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace litmas {

// Root of every error raised by the library. Callers that only need a
// message can catch this; the CLI maps the concrete types to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined, or an empty input where a
// nonempty one is required.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar backward root, repeated backward, wrong step tag.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An embedding or center whose L2 norm fell below the cosine guard.
class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A batch in which no modality can form a concentration term.
class BatchError : public Error {
 public:
  using Error::Error;
};

// A metric requested on a score set that lacks bonafide or spoof records.
class MetricUndefinedError : public Error {
 public:
  using Error::Error;
};

// Invalid t-DCF cost/prior configuration.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace litmas
