#include "csnet/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <latch>
#include <mutex>
#include <sstream>
#include <thread>

#include "csnet/channel_sim.hpp"
#include "csnet/client.hpp"
#include "csnet/relay_server.hpp"

namespace csnet::bench {

using Clock = std::chrono::steady_clock;

namespace {

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

std::string_view mode_name(BenchMode mode) {
  return mode == BenchMode::Sequential ? "sequential" : "concurrent";
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : (values[mid - 1] + values[mid]) / 2.0;
}

BenchReport run_service_bench(const BenchConfig& config) {
  if (config.n_clients < 1) throw std::invalid_argument("n_clients must be positive");
  if (config.repetitions < 3) throw std::invalid_argument("at least 3 repetitions are needed for a median");

  BenchReport report;
  report.config = config;
  for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
    relay::ServerConfig server_config;
    server_config.mode =
        config.mode == BenchMode::Sequential ? relay::ServiceMode::Sequential : relay::ServiceMode::ThreadPerClient;
    server_config.echo_work = config.work;
    server_config.max_clients = std::max<std::size_t>(64, config.n_clients);
    server_config.log_errors = false;
    relay::RelayServer server(net::listen(net::Address::loopback()), server_config);
    server.start();

    Repetition repetition;
    repetition.per_client_ms.assign(config.n_clients, 0.0);
    std::mutex failure_mu;
    std::string failure;
    std::latch ready(static_cast<std::ptrdiff_t>(config.n_clients));
    std::latch go(1);
    Clock::time_point start;

    std::vector<std::thread> clients;
    clients.reserve(config.n_clients);
    for (std::size_t i = 0; i < config.n_clients; ++i) {
      clients.emplace_back([&, i] {
        ready.count_down();
        go.wait();
        try {
          auto client = relay::Client::connect_tcp(server.address(), milliseconds(30000));
          client.handshake({}, milliseconds(60000));
          const Bytes token = to_bytes("bench-" + std::to_string(i));
          client.echo(token, milliseconds(60000));
          client.send_bye();
          repetition.per_client_ms[i] = elapsed_ms(start);
        } catch (const std::exception& e) {
          std::lock_guard lock(failure_mu);
          failure = "client " + std::to_string(i) + ": " + e.what();
        }
      });
    }
    ready.wait();
    start = Clock::now();
    go.count_down();
    for (auto& t : clients) t.join();
    repetition.total_ms = elapsed_ms(start);
    server.stop();

    if (!failure.empty()) throw BenchError("echo round trip failed: " + failure);
    report.repetitions.push_back(std::move(repetition));
  }

  std::vector<double> totals;
  for (const auto& r : report.repetitions) totals.push_back(r.total_ms);
  report.median_total_ms = median(totals);
  return report;
}

Comparison compare_service_modes(std::size_t n_clients, milliseconds work, std::size_t repetitions) {
  Comparison result;
  result.sequential = run_service_bench({n_clients, work, BenchMode::Sequential, repetitions});
  result.concurrent = run_service_bench({n_clients, work, BenchMode::Concurrent, repetitions});
  result.speedup = result.sequential.median_total_ms / result.concurrent.median_total_ms;
  result.sequential.speedup = result.speedup;
  result.concurrent.speedup = result.speedup;
  return result;
}

std::string to_key_value(const BenchReport& report, const std::string& prefix) {
  std::ostringstream out;
  out << prefix << "mode=" << mode_name(report.config.mode) << '\n';
  out << prefix << "clients=" << report.config.n_clients << '\n';
  out << prefix << "work_ms=" << report.config.work.count() << '\n';
  out << prefix << "repetitions=" << report.repetitions.size() << '\n';
  for (std::size_t i = 0; i < report.repetitions.size(); ++i) {
    out << prefix << "total_ms." << i << '=' << report.repetitions[i].total_ms << '\n';
  }
  out << prefix << "median_total_ms=" << report.median_total_ms << '\n';
  if (report.speedup) out << prefix << "speedup=" << *report.speedup << '\n';
  return out.str();
}

std::string to_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "rep,total_ms\n";
  for (std::size_t i = 0; i < report.repetitions.size(); ++i) {
    out << i << ',' << report.repetitions[i].total_ms << '\n';
  }
  return out.str();
}

// --- matrices ---------------------------------------------------------------

Matrix::Matrix(std::size_t rows, std::size_t cols) : Matrix(rows, cols, std::vector<std::int64_t>(rows * cols)) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<std::int64_t> elements)
    : rows_(rows), cols_(cols), data_(std::move(elements)) {
  if (rows_ == 0 || cols_ == 0) throw std::invalid_argument("matrix dimensions must be positive");
  if (data_.size() != rows_ * cols_) throw std::invalid_argument("element count must equal rows * cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1;
  return m;
}

Matrix Matrix::random(std::size_t rows, std::size_t cols, std::uint64_t seed, std::int64_t lo, std::int64_t hi) {
  sim::Rng rng(seed);
  Matrix m(rows, cols);
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  for (auto& x : m.data_) x = lo + static_cast<std::int64_t>(rng.below(span));
  return m;
}

namespace {

void check_dims(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionMismatch(std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                            std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

// Rows [first, last) of a*b, in i-k-j order so the inner loop walks both b
// and the output contiguously.
void multiply_rows(const Matrix& a, const Matrix& b, Matrix& out, std::size_t first, std::size_t last) {
  const std::size_t inner = a.cols();
  const std::size_t cols = b.cols();
  for (std::size_t i = first; i < last; ++i) {
    for (std::size_t k = 0; k < inner; ++k) {
      const auto aik = static_cast<std::uint64_t>(a.at(i, k));
      for (std::size_t j = 0; j < cols; ++j) {
        out.at(i, j) = static_cast<std::int64_t>(static_cast<std::uint64_t>(out.at(i, j)) +
                                                 aik * static_cast<std::uint64_t>(b.at(k, j)));
      }
    }
  }
}

}  // namespace

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
  check_dims(a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      std::uint64_t sum = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        sum += static_cast<std::uint64_t>(a.at(i, k)) * static_cast<std::uint64_t>(b.at(k, j));
      }
      out.at(i, j) = static_cast<std::int64_t>(sum);
    }
  }
  return out;
}

std::vector<std::size_t> row_partition(std::size_t rows, std::size_t parts) {
  if (parts < 1) throw std::invalid_argument("need at least one part");
  std::vector<std::size_t> sizes(parts, rows / parts);
  for (std::size_t i = 0; i < rows % parts; ++i) ++sizes[i];
  return sizes;
}

Matrix matmul_parallel(const Matrix& a, const Matrix& b, std::size_t threads) {
  check_dims(a, b);
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  Matrix out(a.rows(), b.cols());
  std::vector<std::thread> workers;
  std::size_t first = 0;
  for (const std::size_t size : row_partition(a.rows(), threads)) {
    if (size == 0) continue;
    const std::size_t last = first + size;
    workers.emplace_back([&a, &b, &out, first, last] { multiply_rows(a, b, out, first, last); });
    first = last;
  }
  for (auto& w : workers) w.join();
  return out;
}

MatmulBench run_matmul_bench(std::size_t n, const std::vector<std::size_t>& thread_counts, std::size_t repetitions,
                             bool check, std::uint64_t seed) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be positive");
  const Matrix a = Matrix::random(n, n, seed);
  const Matrix b = Matrix::random(n, n, seed + 1);

  MatmulBench result;
  result.n = n;
  result.checked = check;
  std::vector<double> serial_ms;
  std::optional<Matrix> reference;
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto start = Clock::now();
    Matrix product = matmul_serial(a, b);
    serial_ms.push_back(elapsed_ms(start));
    if (!reference) reference = std::move(product);
  }
  result.serial_median_ms = median(serial_ms);

  for (const std::size_t threads : thread_counts) {
    MatmulTiming timing;
    timing.threads = threads;
    for (std::size_t r = 0; r < repetitions; ++r) {
      const auto start = Clock::now();
      const Matrix product = matmul_parallel(a, b, threads);
      timing.ms.push_back(elapsed_ms(start));
      if (check && !(product == *reference)) result.matches = false;
    }
    timing.median_ms = median(timing.ms);
    result.parallel.push_back(std::move(timing));
  }
  return result;
}

}  // namespace csnet::bench
