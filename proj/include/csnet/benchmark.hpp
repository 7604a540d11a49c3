#pragma once

// Concurrency measurements: N clients served one at a time versus one
// thread per client, and serial versus row-block parallel matrix products.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace csnet::bench {

using std::chrono::milliseconds;

enum class BenchMode { Sequential, Concurrent };

std::string_view mode_name(BenchMode mode);

struct BenchConfig {
  std::size_t n_clients = 8;
  milliseconds work{50};
  BenchMode mode = BenchMode::Concurrent;
  std::size_t repetitions = 3;
};

struct Repetition {
  double total_ms = 0;
  std::vector<double> per_client_ms;
};

struct BenchReport {
  BenchConfig config;
  std::vector<Repetition> repetitions;
  double median_total_ms = 0;
  std::optional<double> speedup;  // sequential median / concurrent median
};

class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double median(std::vector<double> values);

/// Starts a loopback relay server whose ECHO handler sleeps `work`, then
/// releases N client threads at once; each connects, handshakes, sends one
/// ECHO and says BYE. Throws BenchError if any round trip fails.
BenchReport run_service_bench(const BenchConfig& config);

struct Comparison {
  BenchReport sequential;
  BenchReport concurrent;
  double speedup = 0;
};

Comparison compare_service_modes(std::size_t n_clients, milliseconds work, std::size_t repetitions);

/// `key=value` lines. `prefix` namespaces the keys (e.g. "sequential_").
std::string to_key_value(const BenchReport& report, const std::string& prefix = "");
/// `rep,total_ms` rows with a header line.
std::string to_csv(const BenchReport& report);

// --- matrices ---------------------------------------------------------------

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major 64-bit integer matrix. Products wrap modulo 2^64.
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<std::int64_t> elements);

  static Matrix identity(std::size_t n);
  /// Entries uniform in [lo, hi], drawn from a seeded xorshift64* stream.
  static Matrix random(std::size_t rows, std::size_t cols, std::uint64_t seed, std::int64_t lo = -100,
                       std::int64_t hi = 100);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::int64_t& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  std::int64_t at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  const std::vector<std::int64_t>& elements() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::int64_t> data_;
};

Matrix matmul_serial(const Matrix& a, const Matrix& b);

/// Output rows split into `threads` contiguous blocks, one worker each.
Matrix matmul_parallel(const Matrix& a, const Matrix& b, std::size_t threads);

/// Block sizes for `rows` over `parts` workers; the first rows % parts
/// blocks get one extra row.
std::vector<std::size_t> row_partition(std::size_t rows, std::size_t parts);

struct MatmulTiming {
  std::size_t threads = 0;
  std::vector<double> ms;
  double median_ms = 0;
};

struct MatmulBench {
  std::size_t n = 0;
  double serial_median_ms = 0;
  std::vector<MatmulTiming> parallel;
  bool checked = false;
  bool matches = true;
};

/// Times n x n products; with `check`, compares every parallel result with
/// the serial one.
MatmulBench run_matmul_bench(std::size_t n, const std::vector<std::size_t>& thread_counts, std::size_t repetitions,
                             bool check, std::uint64_t seed = 1);

}  // namespace csnet::bench
