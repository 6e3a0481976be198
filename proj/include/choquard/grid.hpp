#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace choquard {

enum class Shape { ball, box };

inline std::string to_string(Shape s) { return s == Shape::ball ? "ball" : "box"; }

inline Shape parse_shape(const std::string& s) {
  if (s == "ball") return Shape::ball;
  if (s == "box") return Shape::box;
  throw std::invalid_argument("unknown shape '" + s + "' (expected ball or box)");
}

/// Input to build_grid. `radius` is only read for balls; a value <= 0 means
/// "inscribed ball" (half the smallest extent).
struct GridSpec {
  Shape shape = Shape::ball;
  std::vector<double> extent;
  std::vector<int> m;
  double radius = 0.0;
};

/// Uniform n-D node grid on the box [-extent/2, extent/2], centred at the origin.
/// Node coordinates are (i - (m-1)/2) * h so the grid is exactly symmetric.
class DomainGrid {
 public:
  int dim() const { return static_cast<int>(m_.size()); }
  Shape shape() const { return shape_; }
  double radius() const { return radius_; }
  const std::vector<double>& extent() const { return extent_; }
  const std::vector<int>& m() const { return m_; }
  const std::vector<double>& h() const { return h_; }
  const std::vector<std::size_t>& strides() const { return strides_; }
  std::size_t size() const { return size_; }
  double cell_volume() const { return cell_volume_; }
  double max_spacing() const { return *std::max_element(h_.begin(), h_.end()); }
  double min_spacing() const { return *std::min_element(h_.begin(), h_.end()); }

  bool mask(std::size_t i) const { return mask_[i] != 0; }
  double delta(std::size_t i) const { return delta_[i]; }
  /// Interior node indices in lexicographic order.
  const std::vector<std::size_t>& interior() const { return interior_; }

  int index_along(std::size_t i, int axis) const {
    return static_cast<int>((i / strides_[axis]) % static_cast<std::size_t>(m_[axis]));
  }
  double coord(std::size_t i, int axis) const { return coord_of(index_along(i, axis), axis); }
  double coord_of(int k, int axis) const { return (k - 0.5 * (m_[axis] - 1)) * h_[axis]; }
  double radial(std::size_t i) const {
    double r2 = 0.0;
    for (int a = 0; a < dim(); ++a) r2 += coord(i, a) * coord(i, a);
    return std::sqrt(r2);
  }
  std::size_t flat(std::span<const int> idx) const {
    std::size_t f = 0;
    for (int a = 0; a < dim(); ++a) f += static_cast<std::size_t>(idx[a]) * strides_[a];
    return f;
  }
  /// Node index nearest to the point (clamped to the box).
  std::size_t nearest(std::span<const double> x) const {
    std::size_t f = 0;
    for (int a = 0; a < dim(); ++a) {
      int k = static_cast<int>(std::lround(x[a] / h_[a] + 0.5 * (m_[a] - 1)));
      k = std::clamp(k, 0, m_[a] - 1);
      f += static_cast<std::size_t>(k) * strides_[a];
    }
    return f;
  }
  /// Analytic distance from a point to the domain boundary (0 outside).
  double distance_to_boundary(std::span<const double> x) const {
    if (shape_ == Shape::ball) {
      double r2 = 0.0;
      for (double c : x) r2 += c * c;
      return std::max(0.0, radius_ - std::sqrt(r2));
    }
    double d = std::numeric_limits<double>::infinity();
    for (int a = 0; a < dim(); ++a) d = std::min(d, 0.5 * extent_[a] - std::abs(x[a]));
    return std::max(0.0, d);
  }

  bool same_as(const DomainGrid& o) const {
    return this == &o ||
           (shape_ == o.shape_ && m_ == o.m_ && extent_ == o.extent_ && radius_ == o.radius_);
  }

 private:
  friend std::shared_ptr<const DomainGrid> build_grid(const GridSpec& spec);

  Shape shape_ = Shape::ball;
  double radius_ = 0.0;
  std::vector<double> extent_;
  std::vector<int> m_;
  std::vector<double> h_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
  double cell_volume_ = 0.0;
  std::vector<unsigned char> mask_;
  std::vector<double> delta_;
  std::vector<std::size_t> interior_;
};

using GridPtr = std::shared_ptr<const DomainGrid>;

inline GridPtr build_grid(const GridSpec& spec) {
  const std::size_t n = spec.m.size();
  if (spec.extent.size() != n)
    throw std::invalid_argument("grid: extent and m must have the same number of axes");
  if (n <= 2) throw std::invalid_argument("grid: dimension n must satisfy n > 2");
  for (std::size_t a = 0; a < n; ++a) {
    if (!(spec.extent[a] > 0.0) || !std::isfinite(spec.extent[a]))
      throw std::invalid_argument("grid: extents must be positive");
    if (spec.m[a] < 5) throw std::invalid_argument("grid: every axis needs m >= 5 points");
  }

  auto g = std::shared_ptr<DomainGrid>(new DomainGrid());
  g->shape_ = spec.shape;
  g->extent_ = spec.extent;
  g->m_ = spec.m;
  g->h_.resize(n);
  g->strides_.resize(n);
  g->cell_volume_ = 1.0;
  for (std::size_t a = 0; a < n; ++a) {
    g->h_[a] = spec.extent[a] / (spec.m[a] - 1);
    g->cell_volume_ *= g->h_[a];
  }
  std::size_t stride = 1;
  for (std::size_t a = n; a-- > 0;) {
    g->strides_[a] = stride;
    stride *= static_cast<std::size_t>(spec.m[a]);
  }
  g->size_ = stride;

  const double half_min = 0.5 * *std::min_element(spec.extent.begin(), spec.extent.end());
  if (spec.shape == Shape::ball) {
    g->radius_ = spec.radius > 0.0 ? spec.radius : half_min;
    if (g->radius_ > half_min * (1.0 + 1e-12))
      throw std::invalid_argument("grid: ball radius exceeds the box half-extent");
  }

  g->mask_.assign(g->size_, 0);
  g->delta_.assign(g->size_, 0.0);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < g->size_; ++i) {
    bool outer = false;
    for (std::size_t a = 0; a < n; ++a) {
      const int k = g->index_along(i, static_cast<int>(a));
      outer = outer || k == 0 || k == spec.m[a] - 1;
      x[a] = g->coord_of(k, static_cast<int>(a));
    }
    if (outer) continue;
    bool inside = true;
    if (spec.shape == Shape::ball) {
      double r2 = 0.0;
      for (double c : x) r2 += c * c;
      inside = std::sqrt(r2) < g->radius_;
    }
    if (!inside) continue;
    g->mask_[i] = 1;
    g->delta_[i] = g->distance_to_boundary(x);
    g->interior_.push_back(i);
  }
  return g;
}

/// Real grid function, zero outside the mask (discrete H^1_0 element).
class Field {
 public:
  Field() = default;
  explicit Field(GridPtr grid) : grid_(std::move(grid)), values_(grid_->size(), 0.0) {}
  Field(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_->size()) throw std::invalid_argument("field: size does not match grid");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) throw std::invalid_argument("field: non-finite value");
      if (!grid_->mask(i)) values_[i] = 0.0;
    }
  }

  template <class F>
  static Field from_function(GridPtr grid, F&& f) {
    Field u(grid);
    std::vector<double> x(grid->dim());
    for (std::size_t i : grid->interior()) {
      for (int a = 0; a < grid->dim(); ++a) x[a] = grid->coord(i, a);
      u.values_[i] = f(std::span<const double>(x), i);
    }
    return u;
  }

  const DomainGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  /// Raw write access. Callers keep unmasked nodes at zero.
  std::span<double> mutable_values() { return values_; }

  Field scaled(double s) const {
    Field r = *this;
    for (double& v : r.values_) v *= s;
    return r;
  }
  Field& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  /// this + s * w
  Field plus(double s, const Field& w) const {
    check_same_grid(w);
    Field r = *this;
    for (std::size_t i = 0; i < values_.size(); ++i) r.values_[i] += s * w.values_[i];
    return r;
  }
  Field positive_part() const {
    Field r = *this;
    for (double& v : r.values_) v = std::max(v, 0.0);
    return r;
  }
  bool is_zero() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
  }
  double max_value() const {
    double m = 0.0;
    for (std::size_t i : grid_->interior()) m = std::max(m, values_[i]);
    return m;
  }
  double min_interior() const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i : grid_->interior()) m = std::min(m, values_[i]);
    return m;
  }
  void check_same_grid(const Field& w) const {
    if (!grid_ || !w.grid_ || !grid_->same_as(*w.grid_))
      throw std::invalid_argument("field: grid mismatch");
  }
  bool operator==(const Field& o) const { return grid_->same_as(*o.grid_) && values_ == o.values_; }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

/// |v|^p evaluated as exp(p ln|v|), with 0 -> 0.
inline double pow_abs(double v, double p) {
  const double a = std::abs(v);
  return a == 0.0 ? 0.0 : std::exp(p * std::log(a));
}

namespace detail {
template <class Visit>
void for_each_edge(const DomainGrid& g, Visit&& visit) {
  const int n = g.dim();
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int a = 0; a < n; ++a) {
      if (g.index_along(i, a) + 1 >= g.m()[a]) continue;
      const std::size_t j = i + g.strides()[a];
      if (!g.mask(i) && !g.mask(j)) continue;
      visit(i, j, a);
    }
  }
}
}  // namespace detail

/// Discrete int |grad u|^2: forward differences over every edge touching the mask.
inline double h1_seminorm_sq(const Field& u) {
  const DomainGrid& g = u.grid();
  std::vector<double> inv_h2(g.dim());
  for (int a = 0; a < g.dim(); ++a) inv_h2[a] = 1.0 / (g.h()[a] * g.h()[a]);
  double acc = 0.0;
  detail::for_each_edge(g, [&](std::size_t i, std::size_t j, int a) {
    const double d = u[j] - u[i];
    acc += d * d * inv_h2[a];
  });
  return acc * g.cell_volume();
}

inline double grad_inner(const Field& u, const Field& w) {
  u.check_same_grid(w);
  const DomainGrid& g = u.grid();
  std::vector<double> inv_h2(g.dim());
  for (int a = 0; a < g.dim(); ++a) inv_h2[a] = 1.0 / (g.h()[a] * g.h()[a]);
  double acc = 0.0;
  detail::for_each_edge(g, [&](std::size_t i, std::size_t j, int a) {
    acc += (u[j] - u[i]) * (w[j] - w[i]) * inv_h2[a];
  });
  return acc * g.cell_volume();
}

inline double lp_integral(const Field& u, double p) {
  if (!(p > 0.0)) throw std::invalid_argument("lp_integral: exponent must be positive");
  double acc = 0.0;
  for (std::size_t i : u.grid().interior()) acc += pow_abs(u[i], p);
  return acc * u.grid().cell_volume();
}

/// sum_x u(x) w(x) h^n over the mask.
inline double l2_inner(const Field& u, const Field& w) {
  u.check_same_grid(w);
  double acc = 0.0;
  for (std::size_t i : u.grid().interior()) acc += u[i] * w[i];
  return acc * u.grid().cell_volume();
}

/// (2n+1)-point -Delta_h on masked nodes; adjoint of the forward-difference seminorm.
inline Field neg_laplacian(const Field& u) {
  const DomainGrid& g = u.grid();
  Field r(u.grid_ptr());
  auto out = r.mutable_values();
  for (std::size_t i : g.interior()) {
    double acc = 0.0;
    for (int a = 0; a < g.dim(); ++a) {
      const std::size_t s = g.strides()[a];
      acc += (2.0 * u[i] - u[i + s] - u[i - s]) / (g.h()[a] * g.h()[a]);
    }
    out[i] = acc;
  }
  return r;
}

struct PoissonSolve {
  Field solution;
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Solves -Delta_h d = f on the mask with homogeneous Dirichlet data (matrix-free CG).
inline PoissonSolve solve_poisson(const Field& f, double rel_tol = 1e-12, int max_iters = 5000) {
  const DomainGrid& g = f.grid();
  const auto& idx = g.interior();
  const std::size_t nn = idx.size();
  Field x(f.grid_ptr());
  Field p(f.grid_ptr());
  std::vector<double> r(nn), ap(nn);
  double rr = 0.0;
  for (std::size_t k = 0; k < nn; ++k) {
    r[k] = f[idx[k]];
    rr += r[k] * r[k];
  }
  const double rr0 = rr;
  PoissonSolve out{x, 0, 0.0};
  if (rr0 == 0.0) return out;
  {
    auto pv = p.mutable_values();
    for (std::size_t k = 0; k < nn; ++k) pv[idx[k]] = r[k];
  }
  auto xv = x.mutable_values();
  int it = 0;
  for (; it < max_iters && rr > rel_tol * rel_tol * rr0; ++it) {
    const Field lp = neg_laplacian(p);
    double pap = 0.0;
    for (std::size_t k = 0; k < nn; ++k) {
      ap[k] = lp[idx[k]];
      pap += p[idx[k]] * ap[k];
    }
    const double alpha = rr / pap;
    double rr_new = 0.0;
    for (std::size_t k = 0; k < nn; ++k) {
      xv[idx[k]] += alpha * p[idx[k]];
      r[k] -= alpha * ap[k];
      rr_new += r[k] * r[k];
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    auto pv = p.mutable_values();
    for (std::size_t k = 0; k < nn; ++k) pv[idx[k]] = r[k] + beta * pv[idx[k]];
  }
  out.solution = x;
  out.iterations = it;
  out.relative_residual = std::sqrt(rr / rr0);
  return out;
}

/// CSV rows "i,j,k,x,y,z,value" (n = 3) in lexicographic node order, one header line.
inline void write_csv(std::ostream& os, const Field& u) {
  const DomainGrid& g = u.grid();
  const int n = g.dim();
  if (n == 3) {
    os << "i,j,k,x,y,z,value\n";
  } else {
    for (int a = 0; a < n; ++a) os << 'i' << a << ',';
    for (int a = 0; a < n; ++a) os << 'x' << a << ',';
    os << "value\n";
  }
  std::ostringstream line;
  line << std::setprecision(17);
  for (std::size_t i = 0; i < g.size(); ++i) {
    line.str("");
    for (int a = 0; a < n; ++a) line << g.index_along(i, a) << ',';
    for (int a = 0; a < n; ++a) line << g.coord(i, a) << ',';
    line << u[i] << '\n';
    os << line.str();
  }
}

}  // namespace choquard
