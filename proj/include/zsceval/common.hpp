#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zsceval {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition (bad action index, slot mismatch...).
struct PreconditionError : Error {
  using Error::Error;
};

struct SchemaMismatchError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values during learning.
struct TrainingError : Error {
  using Error::Error;
};

struct MissingUpstreamError : Error {
  using Error::Error;
};

struct IntegrityError : Error {
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename E = PreconditionError, typename... Args>
inline void require(bool cond, Args&&... msg) {
  if (!cond) throw E(detail::concat(std::forward<Args>(msg)...));
}

// Warnings go to stderr; tests may silence them with set_warnings_enabled.
inline bool& warnings_enabled() {
  static bool enabled = true;
  return enabled;
}

inline void set_warnings_enabled(bool on) { warnings_enabled() = on; }

template <typename... Args>
void warn(Args&&... msg) {
  if (warnings_enabled())
    std::cerr << "warning: " << detail::concat(std::forward<Args>(msg)...) << '\n';
}

// ---------------------------------------------------------------------------
// Fixed capacities. Transitions are built on every environment step, so they
// carry inline arrays instead of heap vectors.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxAgents = 4;
inline constexpr std::size_t kMaxEvents = 16;

using JointAction = std::array<int, kMaxAgents>;
using EventVector = std::array<double, kMaxEvents>;

// ---------------------------------------------------------------------------
// Randomness. mt19937_64 is specified bit-exactly by the standard; the
// std distributions are not, so the few we need are written out here.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  // Lemire's multiply-shift; bias is below 2^-64 * n.
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

inline double standard_normal(Rng& rng) {
  // Box-Muller.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& str(std::string_view s) {
    bytes(s.data(), s.size());
    const unsigned char sep = 0xff;
    return bytes(&sep, 1);
  }
  Fnv1a& u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(b, 8);
  }
  Fnv1a& f64(double v) {
    if (v == 0.0) v = 0.0;  // fold -0.0
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof v);
    return u64(bits);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t hash_bytes(std::string_view data) {
  return Fnv1a{}.bytes(data.data(), data.size()).value();
}

// Seed for a named stage item: (global seed, stage name, item id).
inline std::uint64_t derive_seed(std::uint64_t global, std::string_view stage, std::string_view item = {}) {
  return splitmix64(Fnv1a{}.u64(global).str(stage).str(item).value());
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Sample standard error of the mean; zero for fewer than two values.
inline double standard_error(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
}

}  // namespace zsceval
