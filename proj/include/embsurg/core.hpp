#pragma once

// Shared aliases, error taxonomy and small utilities.
//
// Convention used throughout: batch matrices are column-major with one
// sample per column. Image samples are flattened channel-major, i.e. the
// value of channel c at row y, column x lives at index (c*H + y)*W + x.

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace embsurg {

template <class T> using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T> using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using VecF = Vec<float>;
using MatD = Mat<double>;
using VecD = Vec<double>;
using VecI = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

// Error taxonomy. The CLI maps ConfigError to exit code 2 and every other
// failure to exit code 3.
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct StateError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IntegrityError : std::runtime_error { using std::runtime_error::runtime_error; };

// Raised when a training loop hits a non-finite loss. The iteration index
// tells the caller which snapshots are still trustworthy.
struct TrainingError : std::runtime_error {
  int failed_iteration;
  TrainingError(const std::string& msg, int iter)
      : std::runtime_error(msg), failed_iteration(iter) {}
};

// Raised when embedding optimization produces a non-finite loss; carries the
// per-step trace collected so far (columns: total, am, diversity).
struct DivergedError : std::runtime_error {
  MatD partial_trace;
  DivergedError(const std::string& msg, MatD trace)
      : std::runtime_error(msg), partial_trace(std::move(trace)) {}
};

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

// Finalizer from splitmix64; spreads entropy of labeled seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic seed fan-out: one global seed plus a label yields an
// independent stream seed for each pipeline component.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  return mix64(base ^ fnv1a64(label));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                                 std::uint64_t index) {
  return mix64(derive_seed(base, label) ^ mix64(index));
}

template <class T>
std::uint64_t checksum(const Mat<T>& m, std::uint64_t h = kFnvOffset) {
  return fnv1a64(m.data(), sizeof(T) * static_cast<std::size_t>(m.size()), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

template <class T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

}  // namespace embsurg
