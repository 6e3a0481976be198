#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "choquard/grid.hpp"
#include "choquard/riesz.hpp"

namespace choquard {

/// I_lambda(u) split into its three terms; total = kinetic - singular - nonlocal.
struct EnergyBreakdown {
  double lambda = 0.0;
  double kinetic = 0.0;
  double singular = 0.0;
  double nonlocal = 0.0;
  double total = 0.0;
};

/// A(u) = int |u|^{1-q}.
inline double singular_integral(const Field& u, double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("singular_integral: need 0 < q < 1");
  return lp_integral(u, 1.0 - q);
}

inline EnergyBreakdown make_breakdown(double lambda, double norm_sq, double a, double b, const Exponents& e) {
  EnergyBreakdown r;
  r.lambda = lambda;
  r.kinetic = 0.5 * norm_sq;
  r.singular = lambda / (1.0 - e.q) * a;
  r.nonlocal = b / e.p_growth;
  r.total = r.kinetic - r.singular - r.nonlocal;
  return r;
}

inline EnergyBreakdown energy(const Field& u, double lambda, const Exponents& e, const KernelTable& kt) {
  if (!(lambda > 0.0)) throw std::invalid_argument("energy: lambda must be positive");
  return make_breakdown(lambda, h1_seminorm_sq(u), singular_integral(u, e.q), choquard_energy(u, e, kt), e);
}

/// Default positivity floor for u^{-q}: 1e-8 * max(u).
inline double default_floor(const Field& u, double factor = 1e-8) { return factor * u.max_value(); }

/// Nodewise lambda*max(u,floor)^{-q} + Phi[u] |u|^{2*_mu-2} u, the right-hand side of the equation.
inline Field reaction_term(const Field& u, const Field& potential, double lambda, const Exponents& e, double floor) {
  Field r(u.grid_ptr());
  auto out = r.mutable_values();
  for (std::size_t i : u.grid().interior()) {
    const double v = u[i];
    const double sing = lambda * std::pow(std::max(v, floor), -e.q);
    const double nl = v == 0.0 ? 0.0 : potential[i] * pow_abs(v, e.two_star_mu - 2.0) * v;
    out[i] = sing + nl;
  }
  return r;
}

/// Strong Euler-Lagrange field G = -Delta_h u - lambda max(u,floor)^{-q} - Phi[u] |u|^{2*_mu-2} u.
/// sum_x G w h^n equals weak_residual(u, w) for every w (summation by parts).
inline Field gradient_field(const Field& u, const Field& potential, double lambda, const Exponents& e, double floor) {
  if (!(floor > 0.0)) throw std::invalid_argument("gradient_field: floor must be positive");
  Field g = neg_laplacian(u);
  const Field f = reaction_term(u, potential, lambda, e, floor);
  auto out = g.mutable_values();
  for (std::size_t i : u.grid().interior()) out[i] -= f[i];
  return g;
}

inline Field gradient_field(const Field& u, double lambda, const Exponents& e, const KernelTable& kt, double floor) {
  return gradient_field(u, riesz_potential(u, e, kt), lambda, e, floor);
}

/// Weak-form residual of the equation tested against w, from a precomputed potential.
/// With floor == 0, u must be positive wherever w is nonzero.
inline double weak_residual(const Field& u, const Field& w, const Field& potential, double lambda,
                            const Exponents& e, double floor) {
  u.check_same_grid(w);
  if (floor <= 0.0) {
    std::size_t bad = 0;
    for (std::size_t i : u.grid().interior())
      if (w[i] != 0.0 && u[i] <= 0.0) ++bad;
    if (bad > 0) {
      std::ostringstream os;
      os << "weak_residual: u <= 0 at " << bad << " node(s) in the support of the test field";
      throw std::domain_error(os.str());
    }
  }
  double acc = 0.0;
  for (std::size_t i : u.grid().interior()) {
    if (w[i] == 0.0) continue;
    const double v = u[i];
    const double base = floor > 0.0 ? std::max(v, floor) : v;
    const double nl = v == 0.0 ? 0.0 : potential[i] * pow_abs(v, e.two_star_mu - 2.0) * v;
    acc += (lambda * std::pow(base, -e.q) + nl) * w[i];
  }
  return grad_inner(u, w) - acc * u.grid().cell_volume();
}

inline double weak_residual(const Field& u, const Field& w, double lambda, const Exponents& e, const KernelTable& kt,
                            double floor) {
  return weak_residual(u, w, riesz_potential(u, e, kt), lambda, e, floor);
}

}  // namespace choquard
