#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "choquard/grid.hpp"
#include "choquard/riesz.hpp"

namespace choquard {

/// max |u| over the mask.
inline double linf_bound(const Field& u) {
  double m = 0.0;
  for (std::size_t i : u.grid().interior()) m = std::max(m, std::abs(u[i]));
  return m;
}

struct EnvelopeBand {
  double delta_lo = 0.0;
  double delta_hi = 0.0;
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  std::size_t count = 0;
};

/// Two-sided bound L delta <= u <= K delta, measured where delta >= h.
struct Envelope {
  double L = 0.0;
  double K = 0.0;
  double excluded_below = 0.0;  // nodes with delta below this are left out
  std::size_t nodes = 0;
  std::vector<EnvelopeBand> bands;
};

inline Envelope boundary_envelope(const Field& u, int band_count = 10) {
  const DomainGrid& g = u.grid();
  std::size_t bad = 0;
  for (std::size_t i : g.interior())
    if (!(u[i] > 0.0)) ++bad;
  if (bad > 0) {
    std::ostringstream os;
    os << "boundary_envelope: u <= 0 at " << bad << " masked node(s)";
    throw std::domain_error(os.str());
  }
  Envelope env;
  env.excluded_below = g.max_spacing();
  std::vector<std::pair<double, double>> pts;  // (delta, u / delta)
  for (std::size_t i : g.interior()) {
    const double d = g.delta(i);
    if (d >= env.excluded_below) pts.emplace_back(d, u[i] / d);
  }
  if (pts.empty()) throw std::domain_error("boundary_envelope: no nodes with delta >= h");
  env.nodes = pts.size();
  env.L = std::numeric_limits<double>::infinity();
  for (const auto& [d, r] : pts) {
    env.L = std::min(env.L, r);
    env.K = std::max(env.K, r);
  }
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t bands = std::min<std::size_t>(static_cast<std::size_t>(band_count), pts.size());
  for (std::size_t b = 0; b < bands; ++b) {
    const std::size_t lo = b * pts.size() / bands, hi = (b + 1) * pts.size() / bands;
    EnvelopeBand band;
    band.delta_lo = pts[lo].first;
    band.delta_hi = pts[hi - 1].first;
    band.min_ratio = std::numeric_limits<double>::infinity();
    band.max_ratio = 0.0;
    band.count = hi - lo;
    for (std::size_t k = lo; k < hi; ++k) {
      band.min_ratio = std::min(band.min_ratio, pts[k].second);
      band.max_ratio = std::max(band.max_ratio, pts[k].second);
    }
    env.bands.push_back(band);
  }
  return env;
}

/// max over the mask of Phi[u].
inline double nonlocal_potential_bound(const Field& u, const Exponents& e, const KernelTable& kt) {
  const Field phi = riesz_potential(u, e, kt);
  double m = 0.0;
  for (std::size_t i : u.grid().interior()) m = std::max(m, phi[i]);
  return m;
}

struct SupersolutionCheck {
  double worst = 0.0;  // min of -Delta_h rho(delta) - k2 rho(delta)^{-q} over the strip
  std::size_t nodes = 0;
  bool passed = false;
};

/// Cross-check of the barrier rho(delta) = hbar (2 alpha delta - (alpha delta)^{2-s}) on the strip
/// h <= delta < 1/alpha: the barrier is a supersolution of -Delta w = k2 w^{-q} there when worst >= 0.
inline SupersolutionCheck supersolution_check(const GridPtr& grid, double hbar, double alpha, double s, double k2, double q) {
  if (!(hbar > 0.0 && alpha > 0.0 && k2 >= 0.0 && s >= 0.0 && s < 1.0))
    throw std::invalid_argument("supersolution_check: need hbar, alpha > 0, k2 >= 0, 0 <= s < 1");
  const DomainGrid& g = *grid;
  const Field rho = Field::from_function(grid, [&](std::span<const double>, std::size_t i) {
    const double t = std::min(alpha * g.delta(i), 1.0);
    return hbar * (2.0 * t - std::pow(t, 2.0 - s));
  });
  const Field lap = neg_laplacian(rho);
  SupersolutionCheck out;
  out.worst = std::numeric_limits<double>::infinity();
  for (std::size_t i : g.interior()) {
    const double d = g.delta(i);
    if (d < g.max_spacing() || alpha * d >= 1.0) continue;
    out.worst = std::min(out.worst, lap[i] - k2 * std::pow(rho[i], -q));
    ++out.nodes;
  }
  out.passed = out.nodes > 0 && out.worst >= 0.0;
  return out;
}

}  // namespace choquard
