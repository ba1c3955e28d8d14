#pragma once

#include <stdexcept>
#include <string>

namespace nodelearn {

// Invalid scenario or component configuration (bad dimensions, unknown
// enum values, incompatible policy/model combinations).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/vector dimension mismatch between a model and its inputs.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated an operation precondition (empty batch, no drift, ...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CSV / trace ingestion failure. `row()` is the 1-based line number in the
// file (header is line 1), or 0 when the failure is not tied to a row.
class IngestionError : public std::runtime_error {
 public:
  IngestionError(const std::string& what, std::size_t row)
      : std::runtime_error(row == 0 ? what : "line " + std::to_string(row) + ": " + what),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Checkpoint could not be restored (format version, node count, ...).
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nodelearn
