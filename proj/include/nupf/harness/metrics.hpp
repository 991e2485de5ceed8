#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nupf/core.hpp"

namespace nupf {

/// sum_t ||reference_t - estimate_t||^2 / sum_t ||truth_t||^2.
/// With reference = truth this is the NMSE against the signal; with
/// reference = exact posterior means it is the NMSE against the optimal filter.
inline double nmse_vs_reference(const std::vector<StateVector>& estimates, const std::vector<StateVector>& reference,
                                const std::vector<StateVector>& truth) {
  if (estimates.size() != reference.size() || estimates.size() != truth.size()) {
    throw Error(Errc::DimensionMismatch, "nmse: sequences differ in length");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < estimates.size(); ++t) {
    if (estimates[t].size() != reference[t].size() || truth[t].size() != reference[t].size()) {
      throw Error(Errc::DimensionMismatch, "nmse: state dimensions differ");
    }
    num += (reference[t] - estimates[t]).squaredNorm();
    den += truth[t].squaredNorm();
  }
  if (!(den > 0.0)) throw Error(Errc::ZeroDenominator, "nmse: ground truth is identically zero");
  return num / den;
}

inline double nmse_vs_reference(const std::vector<StateVector>& estimates, const std::vector<StateVector>& truth) {
  return nmse_vs_reference(estimates, truth, truth);
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

/// Header plus rows; fixed column order, '.' decimal point, '\n' line ends.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw Error(Errc::DimensionMismatch, "csv: row width differs from header");
    rows_.push_back(std::move(row));
  }

  [[nodiscard]] std::string str() const {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    write_row(out, header_);
    for (const auto& r : rows_) write_row(out, r);
    return out.str();
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write " + path);
    out << str();
    if (!out) throw Error(Errc::Io, "write failed for " + path);
  }

  [[nodiscard]] std::size_t size() const noexcept { return rows_.size(); }

 private:
  static void write_row(std::ostream& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void csv_write(const std::string& path, const CsvTable& table) { table.write(path); }

/// Runs body(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots, which keeps the output independent of scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace nupf
