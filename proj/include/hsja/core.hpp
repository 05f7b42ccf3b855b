#pragma once

// Vector primitives shared by the attacks, oracles and harness: samples on
// the unit hypercube, lp distances, the two projection operators, sphere
// sampling and the reproducible random stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hsja {

using Sample = std::vector<double>;
using ConstVec = std::span<const double>;

// -------------------------------------------------------------------------
// Errors

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ModelLoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised by a querying oracle once its cap is reached. Attacks catch it and
// return the best iterate found so far.
struct BudgetExhausted : std::runtime_error {
  BudgetExhausted() : std::runtime_error("query budget exhausted") {}
};

struct InitializationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInitialization : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedExperiment : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// -------------------------------------------------------------------------
// Norms

enum class Norm { L2, Linf };

/// Dual exponent q = 1 - 1/p.
constexpr double dual_exponent(Norm n) { return n == Norm::L2 ? 0.5 : 1.0; }

inline std::string_view to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

inline Norm parse_norm(std::string_view s) {
  if (s == "l2" || s == "L2") return Norm::L2;
  if (s == "linf" || s == "Linf" || s == "LINF") return Norm::Linf;
  throw InvalidInput("unknown norm '" + std::string(s) + "' (expected l2 or linf)");
}

namespace detail {

inline void require_same_dim(ConstVec a, ConstVec b, const char* what) {
  if (a.size() != b.size())
    throw InvalidInput(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                       " vs " + std::to_string(b.size()) + ")");
}

inline void require_alpha(double alpha, const char* what) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw InvalidInput(std::string(what) + ": alpha must lie in [0, 1]");
}

}  // namespace detail

// -------------------------------------------------------------------------
// Basic linear algebra on spans

inline double dot(ConstVec a, ConstVec b) {
  detail::require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(ConstVec a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

inline double norm_inf(ConstVec a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double norm(ConstVec a, Norm n) { return n == Norm::L2 ? norm2(a) : norm_inf(a); }

/// a + s * b
inline Sample axpy(ConstVec a, double s, ConstVec b) {
  detail::require_same_dim(a, b, "axpy");
  Sample out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + s * b[i];
  return out;
}

inline Sample subtract(ConstVec a, ConstVec b) { return axpy(a, -1.0, b); }

/// Cosine of the angle between a and b; 0 if either is the zero vector.
inline double cosine(ConstVec a, ConstVec b) {
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

inline double distance(ConstVec a, ConstVec b, Norm n) {
  detail::require_same_dim(a, b, "distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc = n == Norm::L2 ? acc + diff * diff : std::max(acc, std::abs(diff));
  }
  return n == Norm::L2 ? std::sqrt(acc) : acc;
}

// -------------------------------------------------------------------------
// Domain clip and projections
//
// Both projections use the same parameterisation: alpha = 0 returns x,
// alpha = 1 returns x_star, and intermediate values shrink x toward x_star.

inline Sample clip_to_domain(ConstVec x) {
  Sample out(x.begin(), x.end());
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

inline void clip_in_place(Sample& x) {
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);
}

/// alpha * x_star + (1 - alpha) * x
inline Sample project_l2(ConstVec x_star, ConstVec x, double alpha) {
  detail::require_same_dim(x_star, x, "project_l2");
  detail::require_alpha(alpha, "project_l2");
  Sample out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x_star[i] + (1.0 - alpha) * x[i];
  return out;
}

/// Per-coordinate clip of x into the box of half-width
/// c = (1 - alpha) * ||x - x_star||_inf around x_star.
inline Sample project_linf(ConstVec x_star, ConstVec x, double alpha) {
  detail::require_same_dim(x_star, x, "project_linf");
  detail::require_alpha(alpha, "project_linf");
  const double c = (1.0 - alpha) * distance(x, x_star, Norm::Linf);
  Sample out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - x_star[i];
    if (std::abs(diff) <= c)
      out[i] = x[i];
    else
      out[i] = diff > 0.0 ? x_star[i] + c : x_star[i] - c;
  }
  return out;
}

inline Sample project(ConstVec x_star, ConstVec x, double alpha, Norm n) {
  return n == Norm::L2 ? project_l2(x_star, x, alpha) : project_linf(x_star, x, alpha);
}

// -------------------------------------------------------------------------
// Random streams
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The distribution transforms below are written out by hand
// because the standard library distributions are implementation-defined.
// The engine seed mixes (seed, stream_id) through SplitMix64.

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed),
        stream_id_(stream_id),
        engine_(detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(~stream_id))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Independent child stream; its sequence depends only on (seed, stream_id, child).
  RngStream derive(std::uint64_t child) const {
    return RngStream(detail::splitmix64(seed_ ^ detail::splitmix64(stream_id_)), child);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is discarded so the
  /// stream position depends only on the number of calls.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

/// Uniform draw from the unit sphere in R^d (normalised Gaussian vector).
inline Sample sample_unit_sphere(std::size_t d, RngStream& rng) {
  if (d == 0) throw InvalidInput("sample_unit_sphere: dimension must be >= 1");
  Sample u(d);
  double n = 0.0;
  do {
    for (double& v : u) v = rng.normal();
    n = norm2(u);
  } while (n == 0.0);
  for (double& v : u) v /= n;
  return u;
}

inline Sample sample_uniform_cube(std::size_t d, RngStream& rng) {
  Sample u(d);
  for (double& v : u) v = rng.uniform();
  return u;
}

}  // namespace hsja
