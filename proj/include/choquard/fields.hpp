#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "choquard/grid.hpp"

namespace choquard {

/// Portable deterministic stream: mt19937_64 seeded through splitmix64(seed, stream),
/// uniforms built from the top 53 bits (no library distribution involved).
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : eng_(mix(seed * 0x9E3779B97F4A7C15ULL ^ mix(stream + 1))) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  std::mt19937_64 eng_;
};

/// Characteristic half-size of the domain (radius for balls, smallest half-extent for boxes).
inline double domain_scale(const DomainGrid& g) {
  if (g.shape() == Shape::ball) return g.radius();
  double m = g.extent()[0];
  for (double e : g.extent()) m = std::min(m, e);
  return 0.5 * m;
}

/// First Dirichlet mode of the continuous domain, sampled on the mask, max 1.
inline Field eigenmode(const GridPtr& grid) {
  const DomainGrid& g = *grid;
  if (g.shape() == Shape::ball) {
    // Radial profile j0-like for n = 3; for general n it is still positive and vanishes on the sphere.
    return Field::from_function(grid, [&](std::span<const double> x, std::size_t) {
      double r2 = 0.0;
      for (double c : x) r2 += c * c;
      const double s = std::numbers::pi * std::sqrt(r2) / g.radius();
      return s < 1e-12 ? 1.0 : std::sin(s) / s;
    });
  }
  return Field::from_function(grid, [&](std::span<const double> x, std::size_t) {
    double v = 1.0;
    for (int a = 0; a < g.dim(); ++a) v *= std::sin(std::numbers::pi * (x[a] / g.extent()[a] + 0.5));
    return v;
  });
}

namespace detail {
inline std::vector<double> random_center(const DomainGrid& g, Rng& rng, double fraction) {
  std::vector<double> c(g.dim());
  const double s = domain_scale(g);
  while (true) {
    double r2 = 0.0;
    for (double& v : c) {
      v = rng.uniform(-fraction, fraction) * s;
      r2 += v * v;
    }
    if (g.shape() == Shape::box || std::sqrt(r2) < fraction * s) return c;
  }
}
}  // namespace detail

/// Positive smooth probe: a few Gaussian bumps times delta(x) (vanishes on the boundary).
inline Field random_bump_field(const GridPtr& grid, Rng& rng, int bumps = 3) {
  const DomainGrid& g = *grid;
  const double s = domain_scale(g);
  struct Bump {
    std::vector<double> c;
    double w2, amp;
  };
  std::vector<Bump> list;
  for (int b = 0; b < bumps; ++b) {
    Bump bp;
    bp.c = detail::random_center(g, rng, 0.6);
    const double w = rng.uniform(0.15, 0.5) * s;
    bp.w2 = w * w;
    bp.amp = rng.uniform(0.5, 1.5);
    list.push_back(std::move(bp));
  }
  return Field::from_function(grid, [&](std::span<const double> x, std::size_t i) {
    double v = 0.0;
    for (const Bump& b : list) {
      double d2 = 0.0;
      for (int a = 0; a < g.dim(); ++a) d2 += (x[a] - b.c[a]) * (x[a] - b.c[a]);
      v += b.amp * std::exp(-d2 / b.w2);
    }
    return v * g.delta(i) / s;
  });
}

/// IID uniform values in [lo, hi] on the mask.
inline Field random_positive_field(const GridPtr& grid, Rng& rng, double lo = 0.5, double hi = 1.5) {
  return Field::from_function(grid, [&](std::span<const double>, std::size_t) { return rng.uniform(lo, hi); });
}

/// Compactly supported C-infinity bump exp(1 - 1/(1 - rho^2)), rho = |x - c|/r, support inside the domain.
inline Field compact_bump(const GridPtr& grid, std::span<const double> center, double radius) {
  const DomainGrid& g = *grid;
  return Field::from_function(grid, [&](std::span<const double> x, std::size_t) {
    double d2 = 0.0;
    for (int a = 0; a < g.dim(); ++a) d2 += (x[a] - center[a]) * (x[a] - center[a]);
    const double rho2 = d2 / (radius * radius);
    return rho2 < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - rho2)) : 0.0;
  });
}

/// Random compact bump with radius in [3h, 0.35 * scale] and support strictly inside the domain.
inline Field random_test_bump(const GridPtr& grid, Rng& rng) {
  const DomainGrid& g = *grid;
  const double s = domain_scale(g);
  const double h = g.max_spacing();
  const double rmin = std::min(3.0 * h, 0.3 * s);
  while (true) {
    const double r = rng.uniform(rmin, std::max(rmin, 0.35 * s));
    auto c = detail::random_center(g, rng, 0.9);
    if (g.distance_to_boundary(c) > r) return compact_bump(grid, c, r);
  }
}

}  // namespace choquard
