#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "choquard/grid.hpp"
#include "choquard/quadrature.hpp"

namespace choquard {

/// Problem exponents. `p_growth` = 2 * 2*_mu is the homogeneity degree of B.
struct Exponents {
  int n = 3;
  double mu = 1.0;
  double q = 0.5;
  double two_star_mu = 5.0;
  double two_star = 6.0;
  double p_growth = 10.0;
};

inline Exponents make_exponents(int n, double mu, double q) {
  if (n <= 2) throw std::invalid_argument("exponents: need n > 2 (problem is posed for n > 2)");
  if (!(mu > 0.0 && mu < n)) throw std::invalid_argument("exponents: need 0 < mu < n");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("exponents: need 0 < q < 1");
  Exponents e;
  e.n = n;
  e.mu = mu;
  e.q = q;
  e.two_star_mu = (2.0 * n - mu) / (n - 2.0);
  e.two_star = 2.0 * n / (n - 2.0);
  e.p_growth = 2.0 * e.two_star_mu;
  return e;
}

enum class ConvolutionPath { direct, fast, both };

inline std::string to_string(ConvolutionPath p) {
  switch (p) {
    case ConvolutionPath::direct: return "direct";
    case ConvolutionPath::fast: return "fast";
    default: return "both";
  }
}

inline ConvolutionPath parse_convolution(const std::string& s) {
  if (s == "direct") return ConvolutionPath::direct;
  if (s == "fast") return ConvolutionPath::fast;
  if (s == "both") return ConvolutionPath::both;
  throw std::invalid_argument("unknown convolution path '" + s + "' (expected direct, fast or both)");
}

/// Cell average of |z|^-mu over the box prod [-h_a/2, h_a/2].
///
/// The cell is cut into 2n pyramids with apex at the origin. On each pyramid
/// z = t b with b on a face, so the t-integral is t^{n-1-mu} -> 1/(n-mu) and the
/// remaining face integrand is smooth, which tensor Gauss resolves to roundoff.
inline double cell_average_kernel(std::span<const double> h, double mu, int points = 32) {
  const int n = static_cast<int>(h.size());
  const GaussRule base = gauss_legendre(points);
  double total = 0.0;
  std::vector<GaussRule> rules(n);
  for (int a = 0; a < n; ++a) rules[a] = base.on(0.0, 0.5 * h[a]);
  for (int k = 0; k < n; ++k) {
    const double hk = 0.5 * h[k];
    std::vector<int> axes;
    for (int a = 0; a < n; ++a)
      if (a != k) axes.push_back(a);
    const int d = n - 1;
    std::vector<int> it(d, 0);
    double face = 0.0;
    while (true) {
      double r2 = hk * hk, w = 1.0;
      for (int j = 0; j < d; ++j) {
        const double x = rules[axes[j]].nodes[it[j]];
        r2 += x * x;
        w *= rules[axes[j]].weights[it[j]];
      }
      face += w * std::pow(r2, -0.5 * mu);
      int j = 0;
      while (j < d && ++it[j] == points) it[j++] = 0;
      if (j == d) break;
    }
    // 2^{n-1} quadrants per face, two opposite faces per axis.
    total += 2.0 * std::ldexp(face, d) * hk / (n - mu);
  }
  double vol = 1.0;
  for (double v : h) vol *= v;
  return total / vol;
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftBuffers {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  FftBuffers(std::size_t nreal, std::size_t nspec)
      : real(fftw_alloc_real(nreal)), spec(fftw_alloc_complex(nspec)) {
    if (!real || !spec) throw std::bad_alloc();
  }
  ~FftBuffers() {
    fftw_free(real);
    fftw_free(spec);
  }
  FftBuffers(const FftBuffers&) = delete;
  FftBuffers& operator=(const FftBuffers&) = delete;
};

struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  ~FftPlans() {
    std::lock_guard lock(fftw_planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

}  // namespace detail

/// Tabulated Riesz kernel for one (grid, mu): w(z) = |z|^-mu for z != 0, the cell
/// average at z = 0, plus its zero-padded spectrum for the fast path.
/// Immutable after construction; safe to share between threads.
class KernelTable {
 public:
  KernelTable(GridPtr grid, double mu, ConvolutionPath path = ConvolutionPath::fast)
      : grid_(std::move(grid)), mu_(mu), path_(path) {
    const DomainGrid& g = *grid_;
    const int n = g.dim();
    if (!(mu > 0.0 && mu < n)) throw std::invalid_argument("kernel_table: need 0 < mu < n");
    self_weight_ = cell_average_kernel(g.h(), mu);

    weights_.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double r2 = 0.0;
      for (int a = 0; a < n; ++a) {
        const double z = g.index_along(i, a) * g.h()[a];
        r2 += z * z;
      }
      weights_[i] = i == 0 ? self_weight_ : std::pow(r2, -0.5 * mu);
    }

    padded_.resize(n);
    padded_strides_.resize(n);
    std::size_t stride = 1;
    for (int a = n; a-- > 0;) {
      padded_[a] = 2 * g.m()[a];
      padded_strides_[a] = stride;
      stride *= static_cast<std::size_t>(padded_[a]);
    }
    padded_size_ = stride;
    spectrum_size_ = padded_size_ / padded_[n - 1] * (padded_[n - 1] / 2 + 1);

    node_to_padded_.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::size_t f = 0;
      for (int a = 0; a < n; ++a) f += static_cast<std::size_t>(g.index_along(i, a)) * padded_strides_[a];
      node_to_padded_[i] = f;
    }

    plans_ = std::make_shared<detail::FftPlans>();
    detail::FftBuffers buf(padded_size_, spectrum_size_);
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      plans_->forward = fftw_plan_dft_r2c(n, padded_.data(), buf.real, buf.spec, FFTW_ESTIMATE);
      plans_->backward = fftw_plan_dft_c2r(n, padded_.data(), buf.spec, buf.real, FFTW_ESTIMATE);
    }
    if (!plans_->forward || !plans_->backward) throw std::runtime_error("kernel_table: FFTW planning failed");

    // Circular embedding of the kernel over offsets |d_a| <= m_a - 1.
    std::fill(buf.real, buf.real + padded_size_, 0.0);
    for (std::size_t j = 0; j < padded_size_; ++j) {
      std::size_t w = 0;
      bool inside = true;
      for (int a = 0; a < n; ++a) {
        const int k = static_cast<int>((j / padded_strides_[a]) % static_cast<std::size_t>(padded_[a]));
        const int d = k < g.m()[a] ? k : padded_[a] - k;
        if (d >= g.m()[a]) {
          inside = false;
          break;
        }
        w += static_cast<std::size_t>(d) * g.strides()[a];
      }
      buf.real[j] = inside ? weights_[w] : 0.0;
    }
    fftw_execute_dft_r2c(plans_->forward, buf.real, buf.spec);
    spectrum_.resize(spectrum_size_);
    for (std::size_t k = 0; k < spectrum_size_; ++k) spectrum_[k] = {buf.spec[k][0], buf.spec[k][1]};
  }

  const DomainGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  double mu() const { return mu_; }
  ConvolutionPath path() const { return path_; }
  double self_weight() const { return self_weight_; }
  /// Kernel at the node offset with |d_a| = offset index components (flat index in the grid).
  double weight_at_offset(std::span<const int> offset) const {
    std::size_t f = 0;
    for (int a = 0; a < grid_->dim(); ++a) f += static_cast<std::size_t>(std::abs(offset[a])) * grid_->strides()[a];
    return weights_[f];
  }

  /// Linear convolution sum_y w(x - y) rho(y) h^n at every node (fast path).
  std::vector<double> convolve_fast(std::span<const double> rho) const {
    detail::FftBuffers buf(padded_size_, spectrum_size_);
    std::fill(buf.real, buf.real + padded_size_, 0.0);
    for (std::size_t i = 0; i < rho.size(); ++i) buf.real[node_to_padded_[i]] = rho[i];
    fftw_execute_dft_r2c(plans_->forward, buf.real, buf.spec);
    for (std::size_t k = 0; k < spectrum_size_; ++k) {
      const std::complex<double> z(buf.spec[k][0], buf.spec[k][1]);
      const std::complex<double> r = z * spectrum_[k];
      buf.spec[k][0] = r.real();
      buf.spec[k][1] = r.imag();
    }
    fftw_execute_dft_c2r(plans_->backward, buf.spec, buf.real);
    const double scale = grid_->cell_volume() / static_cast<double>(padded_size_);
    std::vector<double> out(rho.size(), 0.0);
    for (std::size_t i : grid_->interior()) out[i] = buf.real[node_to_padded_[i]] * scale;
    return out;
  }

  /// Same sum evaluated term by term, O(N^2); output in the same node order.
  std::vector<double> convolve_direct(std::span<const double> rho) const {
    const DomainGrid& g = *grid_;
    const int n = g.dim();
    std::vector<std::size_t> src;
    for (std::size_t i : g.interior())
      if (rho[i] != 0.0) src.push_back(i);
    std::vector<int> src_idx(src.size() * n);
    for (std::size_t s = 0; s < src.size(); ++s)
      for (int a = 0; a < n; ++a) src_idx[s * n + a] = g.index_along(src[s], a);
    const auto& targets = g.interior();
    std::vector<double> out(rho.size(), 0.0);
    const long nt = static_cast<long>(targets.size());
#pragma omp parallel for schedule(static)
    for (long t = 0; t < nt; ++t) {
      const std::size_t x = targets[t];
      int xi[16];
      for (int a = 0; a < n; ++a) xi[a] = g.index_along(x, a);
      double acc = 0.0;
      for (std::size_t s = 0; s < src.size(); ++s) {
        std::size_t f = 0;
        for (int a = 0; a < n; ++a) f += static_cast<std::size_t>(std::abs(xi[a] - src_idx[s * n + a])) * g.strides()[a];
        acc += weights_[f] * rho[src[s]];
      }
      out[x] = acc * g.cell_volume();
    }
    return out;
  }

 private:
  GridPtr grid_;
  double mu_;
  ConvolutionPath path_;
  double self_weight_ = 0.0;
  std::vector<double> weights_;
  std::vector<int> padded_;
  std::vector<std::size_t> padded_strides_;
  std::size_t padded_size_ = 0, spectrum_size_ = 0;
  std::vector<std::size_t> node_to_padded_;
  std::vector<std::complex<double>> spectrum_;
  std::shared_ptr<detail::FftPlans> plans_;
};

inline KernelTable kernel_table(GridPtr grid, double mu, ConvolutionPath path = ConvolutionPath::fast) {
  return KernelTable(std::move(grid), mu, path);
}

/// max|a - b| / max|a| over the entries.
inline double relative_discrepancy(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(a[i]));
  }
  return den == 0.0 ? num : num / den;
}

inline constexpr double kConvolutionAgreement = 1e-10;

inline Field riesz_potential(const Field& u, const Exponents& e, const KernelTable& kt, ConvolutionPath path) {
  if (!u.grid().same_as(kt.grid())) throw std::invalid_argument("riesz_potential: field and kernel grids differ");
  std::vector<double> rho(u.size(), 0.0);
  for (std::size_t i : u.grid().interior()) rho[i] = pow_abs(u[i], e.two_star_mu);
  switch (path) {
    case ConvolutionPath::direct: return Field(u.grid_ptr(), kt.convolve_direct(rho));
    case ConvolutionPath::fast: return Field(u.grid_ptr(), kt.convolve_fast(rho));
    default: break;
  }
  auto direct = kt.convolve_direct(rho);
  auto fast = kt.convolve_fast(rho);
  const double rel = relative_discrepancy(direct, fast);
  if (rel > kConvolutionAgreement) {
    std::ostringstream os;
    os << "riesz_potential: direct and fast paths disagree (relative " << rel << ")";
    throw std::runtime_error(os.str());
  }
  return Field(u.grid_ptr(), std::move(fast));
}

/// Phi[u](x) = sum_y w(x - y) |u(y)|^{2*_mu} h^n, using the table's configured path.
inline Field riesz_potential(const Field& u, const Exponents& e, const KernelTable& kt) {
  return riesz_potential(u, e, kt, kt.path());
}

/// B(u) from an already computed potential.
inline double choquard_energy(const Field& u, const Field& potential, const Exponents& e) {
  double acc = 0.0;
  for (std::size_t i : u.grid().interior()) acc += potential[i] * pow_abs(u[i], e.two_star_mu);
  return acc * u.grid().cell_volume();
}

inline double choquard_energy(const Field& u, const Exponents& e, const KernelTable& kt) {
  return choquard_energy(u, riesz_potential(u, e, kt), e);
}

struct HlsCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
};

/// B(u) against C_hat * |u|_{2*}^{2 * 2*_mu}.
inline HlsCheck hls_check(const Field& u, const Exponents& e, const KernelTable& kt, double c_hat) {
  if (u.is_zero()) throw std::invalid_argument("hls_check: u must be nonzero");
  HlsCheck r;
  r.lhs = choquard_energy(u, e, kt);
  r.rhs = c_hat * std::pow(lp_integral(u, e.two_star), e.p_growth / e.two_star);
  r.ratio = r.lhs / r.rhs;
  return r;
}

}  // namespace choquard
