#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hirisk {

/// Domain error; the message carries all context (file, line number, code, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// log(1 + e^x) without overflow for large |x|.
inline double log1pexp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Clamp bound applied to probabilities before log-based metrics.
inline constexpr double kProbClamp = 1e-12;

inline double clamp_prob(double p) {
  if (p < kProbClamp) return kProbClamp;
  if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
  return p;
}

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// mt19937_64 is fully specified by the standard; the std:: distributions are
// not, so sampling is done by hand to keep outputs reproducible everywhere.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection; n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) fail("Rng::next_below: n must be positive");
    std::uint64_t mask = ~std::uint64_t{0};
    if ((n & (n - 1)) == 0) return engine_() & (n - 1);
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n) - 1;
    std::uint64_t v = engine_();
    while (v > limit) v = engine_();
    (void)mask;
    return v % n;
  }

  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  bool next_bernoulli(double p) { return next_unit() < p; }

  /// Fisher-Yates; deterministic given seed and input order.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derives an independent stream seed, e.g. for per-shard generators.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

/// Dense row-major matrix, used for spline bases and other small blocks.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows * cols

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Runs fn(0..n-1) on up to `threads` workers. Work items must be independent;
/// results must be written to per-index slots so scheduling cannot reorder them.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// FNV-1a 64-bit digest, hex-encoded. Used for manifest bookkeeping, not security.
std::string fnv1a64_hex(std::string_view bytes);
std::string digest_file(const std::filesystem::path& path);

/// printf-style "%.<digits>g" formatting; 17 digits round-trips a double.
std::string format_g(double value, int digits = 17);

std::vector<std::string> split(std::string_view line, char sep);

/// Parses a finite double; throws with `what` context on garbage.
double parse_double(std::string_view text, const std::string& what);
long long parse_int(std::string_view text, const std::string& what);

}  // namespace hirisk
