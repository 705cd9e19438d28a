// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <istream>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace optexit {

// ---------------------------------------------------------------------------
// strings

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
/// Collapses every whitespace run to a single space and trims the ends.
std::string collapse_whitespace(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);

std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
/// Fixed-point with `digits` decimals.
std::string format_fixed(double v, int digits);

// ---------------------------------------------------------------------------
// CSV

std::string csv_escape(std::string_view field);
std::string csv_line(const std::vector<std::string>& fields);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws SchemaError when absent.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// deterministic randomness

/// SplitMix64 with fixed-formula distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// concurrency

/// Counting limiter for in-flight requests.
class InflightLimiter {
 public:
  explicit InflightLimiter(std::size_t limit) : available_(std::max<std::size_t>(1, limit)) {}

  void acquire();
  void release();

  class Guard {
   public:
    explicit Guard(InflightLimiter& l) : l_(l) { l_.acquire(); }
    ~Guard() { l_.release(); }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    InflightLimiter& l_;
  };

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t available_;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// thrown (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// little-endian binary IO

void write_u8(std::ostream& os, std::uint8_t v);
void write_u32le(std::ostream& os, std::uint32_t v);
void write_f32le(std::ostream& os, float v);
void write_f64le(std::ostream& os, double v);
bool read_u8(std::istream& is, std::uint8_t& v);
bool read_u32le(std::istream& is, std::uint32_t& v);
bool read_f32le(std::istream& is, float& v);
bool read_f64le(std::istream& is, double& v);

}  // namespace optexit
