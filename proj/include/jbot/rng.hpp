#pragma once

// Counter-based random streams. Every random decision in the pipeline draws
// from a Philox4x32-10 stream derived from (run seed, stream name, indices),
// so results do not depend on evaluation order or worker count.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace jbot {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Philox4x32-10 generator. The 64-bit key identifies the stream; the 128-bit
/// counter advances per block of four 32-bit draws.
class Rng {
 public:
  explicit Rng(std::uint64_t key) {
    key_ = {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    ctr_ = {0, 0, 0, 0};
  }

  /// Derive a named substream of a run seed, optionally indexed (e.g. by
  /// step, jet and view) so per-item streams never overlap.
  static Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
                    std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ hash_name(name));
    h = mix64(h ^ (a + 0x9e3779b97f4a7c15ULL));
    h = mix64(h ^ (b + 0xc2b2ae3d27d4eb4fULL));
    h = mix64(h ^ (c + 0x165667b19e3779f9ULL));
    return Rng(h);
  }

  std::uint32_t next_u32() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  std::uint64_t next_u64() {
    std::uint64_t lo = next_u32();
    std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  int poisson(double lambda) {
    if (lambda < 0) throw std::invalid_argument("Rng::poisson: lambda must be >= 0");
    // Knuth's method; fine for the small rates used here.
    double l = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > l);
    return k - 1;
  }

  /// Marsaglia-Tsang for shape >= 1 (the only case needed).
  double gamma(double shape) {
    if (shape < 1.0) throw std::invalid_argument("Rng::gamma: shape must be >= 1");
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Symmetric Dirichlet draw of length n.
  std::vector<double> dirichlet(int n, double alpha) {
    std::vector<double> g(static_cast<std::size_t>(n));
    double total = 0.0;
    for (auto& v : g) {
      v = gamma(alpha);
      total += v;
    }
    for (auto& v : g) v /= total;
    return g;
  }

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::size_t j = uniform_int(i);
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  static void philox_round(std::array<std::uint32_t, 4>& x, std::array<std::uint32_t, 2>& k) {
    constexpr std::uint64_t kMul0 = 0xD2511F53ULL;
    constexpr std::uint64_t kMul1 = 0xCD9E8D57ULL;
    std::uint64_t p0 = kMul0 * x[0];
    std::uint64_t p1 = kMul1 * x[2];
    std::array<std::uint32_t, 4> y;
    y[0] = static_cast<std::uint32_t>(p1 >> 32) ^ x[1] ^ k[0];
    y[1] = static_cast<std::uint32_t>(p1);
    y[2] = static_cast<std::uint32_t>(p0 >> 32) ^ x[3] ^ k[1];
    y[3] = static_cast<std::uint32_t>(p0);
    x = y;
    k[0] += 0x9E3779B9u;
    k[1] += 0xBB67AE85u;
  }

  void refill() {
    std::array<std::uint32_t, 4> x = ctr_;
    std::array<std::uint32_t, 2> k = key_;
    for (int i = 0; i < 10; ++i) philox_round(x, k);
    buf_ = x;
    pos_ = 0;
    for (int i = 0; i < 4; ++i) {
      if (++ctr_[static_cast<std::size_t>(i)] != 0) break;
    }
  }

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> ctr_{};
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace jbot
