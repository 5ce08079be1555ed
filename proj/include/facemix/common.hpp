#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace facemix {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable input file. `row()` is the 1-based data row when
/// the failure is tied to one, otherwise 0.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0)
      : Error(row ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

/// Coincident, collinear or otherwise unusable point configurations.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

/// Tensor shape or dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Numeric solver failure (bracket exhausted, non-finite loss, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Number of worker threads used by `parallel_for`. Defaults to the
/// FACEMIX_THREADS environment variable, else the hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are disjoint
/// so callers writing to per-index slots need no synchronization.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace facemix
