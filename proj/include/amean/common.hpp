// Shared plumbing: dense row-major matrices, error taxonomy, number formatting.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace amean {

// ---- errors: every failure mode carries a distinct type so callers can map
// them to exit codes and tests can assert on the exact class ----

// Bad tensor/matrix shapes fed to an operation.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Math called outside its domain (log of a non-positive value, etc.).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An API precondition was violated (non-scalar backward, weights off the
// simplex, group index out of range, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid experiment or model configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file (CSV/JSON); message carries the position.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file parsed but its column/field layout is wrong; names the column.
struct SchemaError : ParseError {
  using ParseError::ParseError;
};

// File could not be read or written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A soft cluster lost all of its mass.
struct DegenerateClusterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Synthetic data generation could not satisfy its constraints.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite quantity.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- Mat: dense row-major matrix of doubles; the only array type used ----

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> v) : rows(r), cols(c), a(std::move(v)) {}

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat full(int r, int c, double v) {
    Mat m(r, c);
    for (auto& x : m.a) x = v;
    return m;
  }
  static Mat scalar(double v) { return Mat(1, 1, {v}); }
  static Mat row(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Mat(1, n, std::move(v));
  }

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  Mat row_copy(int r) const {
    Mat out(1, cols);
    for (int c = 0; c < cols; ++c) out.at(0, c) = at(r, c);
    return out;
  }
};

// Shape label like "3x4" for error messages.
std::string shape_str(const Mat& m);

// Shortest text form that parses back to the identical double ("%.17g").
std::string fmt17(double v);

// FNV-1a 64-bit hash; used for content manifests and named RNG streams.
uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(const std::string& s);

}  // namespace amean
