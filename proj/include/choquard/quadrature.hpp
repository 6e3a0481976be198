#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

namespace choquard {

/// Gauss-Legendre rule on [-1, 1] (Newton on P_n, Golub-Welsch accuracy not needed).
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  /// Maps the rule to [a, b].
  GaussRule on(double a, double b) const {
    GaussRule r;
    const double c = 0.5 * (a + b), s = 0.5 * (b - a);
    r.nodes.reserve(nodes.size());
    r.weights.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      r.nodes.push_back(c + s * nodes[i]);
      r.weights.push_back(s * weights[i]);
    }
    return r;
  }
};

inline GaussRule gauss_legendre(int n) {
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    r.weights[i] = r.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

/// Composite Gauss-Legendre on [a, b] with `panels` equal panels.
template <class F>
double integrate(F&& f, double a, double b, int panels = 16, int order = 16) {
  static thread_local std::map<int, GaussRule> cache;
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, gauss_legendre(order)).first;
  const GaussRule& g = it->second;
  double acc = 0.0;
  const double w = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * w;
    const double c = lo + 0.5 * w, s = 0.5 * w;
    double part = 0.0;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) part += g.weights[i] * f(c + s * g.nodes[i]);
    acc += s * part;
  }
  return acc;
}

/// int_0^inf f(r) dr through r = tan(theta), theta in [0, pi/2).
template <class F>
double integrate_half_line(F&& f, int panels = 64, int order = 16) {
  return integrate(
      [&](double th) {
        const double c = std::cos(th);
        return f(std::tan(th)) / (c * c);
      },
      0.0, 0.5 * std::numbers::pi, panels, order);
}

/// Surface area of the unit sphere S^{n-1} in R^n.
inline double sphere_area(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

}  // namespace choquard
