#ifndef DBARLAB_GEOMETRY_HPP
#define DBARLAB_GEOMETRY_HPP

/* Model strictly pseudoconvex domains in C^n:
     unit-ball           rho0 = |z|^2 - 1
     ellipsoid           rho0 = sum_j |z_j|^2 / a_j^2 - 1         (params = a_j)
     graph-perturbation  rho0 = |z|^2 - 1 + eps*(cos(w Re z1) + sin(w Im z1))
                                                                  (params = eps, w)
   plus the regularized defining function rho = E_2(e^{L0 rho0} - 1): equal to
   e^{L0 rho0}-1 on the closed domain, Whitney-extended outside, with growth
   |d^i rho| <= C (1 + d^{2-i}).  Real coordinates interleave as
   x[2j] = Re z_j, x[2j+1] = Im z_j. */

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbarlab/dual.hpp"
#include "dbarlab/whitney.hpp"

namespace dbarlab {

enum class DomainKind { UnitBall, Ellipsoid, GraphPerturbation };

struct DomainSpec {
  DomainKind kind = DomainKind::UnitBall;
  int n = 2;
  std::vector<double> params;  // ellipsoid: semi-axes; perturbation: {eps, omega}
  double L0 = 1.0;
};

std::string domain_kind_name(DomainKind k);
DomainKind domain_kind_from_name(const std::string& s);
void validate_domain(const DomainSpec& spec);
double min_semi_axis(const DomainSpec& spec);
inline double delta_max(const DomainSpec& spec) { return 0.2 * min_semi_axis(spec); }

// ---------------------------------------------------------------- analytic core

namespace detail {
template <class S>
S pert_g(const DomainSpec& spec, const S* z) {
  // g = cos(w x1) + sin(w y1)
  double w = spec.params.at(1);
  S x1 = re_s(z[0]), y1 = im_s(z[0]);
  return cos_s(w * x1) + sin_s(w * y1);
}
}  // namespace detail

template <class S>
S rho0_eval(const DomainSpec& spec, const S* z) {
  S r = S(-1.0);
  switch (spec.kind) {
    case DomainKind::UnitBall:
      for (int j = 0; j < spec.n; ++j) r = r + abs2_s(z[j]);
      return r;
    case DomainKind::Ellipsoid:
      for (int j = 0; j < spec.n; ++j) {
        double c = 1.0 / (spec.params[j] * spec.params[j]);
        r = r + c * abs2_s(z[j]);
      }
      return r;
    case DomainKind::GraphPerturbation:
      for (int j = 0; j < spec.n; ++j) r = r + abs2_s(z[j]);
      return r + spec.params.at(0) * detail::pert_g(spec, z);
  }
  throw std::logic_error("rho0_eval: bad kind");
}

// Wirtinger gradient d rho0 / d z_j
template <class S>
void rho0_grad(const DomainSpec& spec, const S* z, S* g) {
  const int n = spec.n;
  switch (spec.kind) {
    case DomainKind::UnitBall:
      for (int j = 0; j < n; ++j) g[j] = conj_s(z[j]);
      return;
    case DomainKind::Ellipsoid:
      for (int j = 0; j < n; ++j)
        g[j] = (1.0 / (spec.params[j] * spec.params[j])) * conj_s(z[j]);
      return;
    case DomainKind::GraphPerturbation: {
      for (int j = 0; j < n; ++j) g[j] = conj_s(z[j]);
      double eps = spec.params.at(0), w = spec.params.at(1);
      S x1 = re_s(z[0]), y1 = im_s(z[0]);
      // d g / d z1 = 1/2 (dx - i dy) g = 1/2 (-w sin(w x1) - i w cos(w y1))
      S gz = 0.5 * ((-w) * sin_s(w * x1) + scalar_one_i<S>() * ((-w) * cos_s(w * y1)));
      g[0] = g[0] + eps * gz;
      return;
    }
  }
  throw std::logic_error("rho0_grad: bad kind");
}

// holomorphic Hessian d^2 rho0 / d z_j d z_k (row-major n x n)
template <class S>
void rho0_hess_holo(const DomainSpec& spec, const S* z, S* a) {
  const int n = spec.n;
  for (int i = 0; i < n * n; ++i) a[i] = S(0.0);
  if (spec.kind == DomainKind::GraphPerturbation) {
    double eps = spec.params.at(0), w = spec.params.at(1);
    S x1 = re_s(z[0]), y1 = im_s(z[0]);
    // d^2 g / d z1^2 = 1/4 (-w^2 cos(w x1) + w^2 sin(w y1))
    a[0] = eps * 0.25 * ((-w * w) * cos_s(w * x1) + (w * w) * sin_s(w * y1));
  }
}

// Levi matrix d^2 rho0 / d z_j d zbar_k (row-major n x n)
template <class S>
void rho0_levi(const DomainSpec& spec, const S* z, S* L) {
  const int n = spec.n;
  for (int i = 0; i < n * n; ++i) L[i] = S(0.0);
  switch (spec.kind) {
    case DomainKind::UnitBall:
      for (int j = 0; j < n; ++j) L[j * n + j] = S(1.0);
      return;
    case DomainKind::Ellipsoid:
      for (int j = 0; j < n; ++j)
        L[j * n + j] = S(1.0 / (spec.params[j] * spec.params[j]));
      return;
    case DomainKind::GraphPerturbation: {
      for (int j = 0; j < n; ++j) L[j * n + j] = S(1.0);
      double eps = spec.params.at(0), w = spec.params.at(1);
      S x1 = re_s(z[0]), y1 = im_s(z[0]);
      // d^2 g / d z1 d zbar1 = 1/4 (dxx + dyy) g
      L[0] = L[0] + eps * 0.25 * ((-w * w) * cos_s(w * x1) + (-w * w) * sin_s(w * y1));
      return;
    }
  }
  throw std::logic_error("rho0_levi: bad kind");
}

// analytic regularized branch  r = e^{L0 rho0} - 1  and its derivatives
template <class S>
S rho_an(const DomainSpec& spec, const S* z) {
  return exp_s(spec.L0 * rho0_eval(spec, z)) - 1.0;
}
template <class S>
void rho_an_grad(const DomainSpec& spec, const S* z, S* g) {
  S e = exp_s(spec.L0 * rho0_eval(spec, z));
  rho0_grad(spec, z, g);
  for (int j = 0; j < spec.n; ++j) g[j] = spec.L0 * e * g[j];
}
template <class S>
void rho_an_levi(const DomainSpec& spec, const S* z, S* L) {
  const int n = spec.n;
  S e = exp_s(spec.L0 * rho0_eval(spec, z));
  std::array<S, kMaxN> g{};
  rho0_grad(spec, z, g.data());
  rho0_levi(spec, z, L);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      L[j * n + k] = spec.L0 * e * (L[j * n + k] + spec.L0 * g[j] * conj_s(g[k]));
}
template <class S>
void rho_an_hess_holo(const DomainSpec& spec, const S* z, S* A) {
  const int n = spec.n;
  S e = exp_s(spec.L0 * rho0_eval(spec, z));
  std::array<S, kMaxN> g{};
  rho0_grad(spec, z, g.data());
  rho0_hess_holo(spec, z, A);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      A[j * n + k] = spec.L0 * e * (A[j * n + k] + spec.L0 * g[j] * g[k]);
}

// real <-> complex coordinate lifting (tower-safe)
template <class S>
void lift_complex(int n, const S* x, typename complex_of<S>::type* z) {
  for (int j = 0; j < n; ++j) z[j] = complexify(x[2 * j], x[2 * j + 1]);
}

template <class S>
S rho0_eval_real(const DomainSpec& spec, const S* x) {
  std::array<typename complex_of<S>::type, kMaxN> z{};
  lift_complex(spec.n, x, z.data());
  return real_of(rho0_eval(spec, z.data()));
}
template <class S>
S rho_an_real(const DomainSpec& spec, const S* x) {
  std::array<typename complex_of<S>::type, kMaxN> z{};
  lift_complex(spec.n, x, z.data());
  return real_of(rho_an(spec, z.data()));
}

// ------------------------------------------------------------------- eval op

struct EvalDefining {
  double rho = 0.0;
  std::vector<cdouble> drho;  // n
  std::vector<cdouble> levi;  // n*n row-major
};
EvalDefining eval_defining(const DomainSpec& spec, const cdouble* z);

// --------------------------------------------------------------- region query

struct RegionInfo {
  double d = 0.0;         // distance to the boundary (nonneg)
  double signed_d = 0.0;  // < 0 inside D
  bool inside_D = false;
  bool on_boundary = false;
  bool in_outer = false;  // D_delta
  bool in_inner = false;  // D_{-delta}
  bool in_shell = false;  // D_delta \ closure(D)
};

class Domain {
 public:
  explicit Domain(DomainSpec spec);

  const DomainSpec& spec() const { return spec_; }
  int n() const { return spec_.n; }
  int rdim() const { return 2 * spec_.n; }
  double delta_cap() const { return delta_max(spec_); }

  double rho0(const double* x) const { return rho0_eval_real(spec_, x); }
  double signed_distance(const double* x) const;       // Euclidean, < 0 inside
  void boundary_foot(const double* x, double* f) const;
  RegionInfo distance_and_region(const double* x, double delta) const;

  // smallest r > 0 with signed_distance(x0 + r dir) = level (level >= -delta_cap)
  double ray_level_crossing(const double* x0, const double* dir, double level,
                            double r_hint = 1.0) const;
  // r > 0 with rho0(x0 + r dir) = c; cheap (no distance solves), used by meshes
  double ray_rho0_crossing(const double* x0, const double* dir, double c,
                           double r_hint = 1.0) const;

  double min_grad_rho0_boundary(int samples, std::uint64_t seed) const;
  std::vector<std::array<double, kMaxDim>> sample_boundary(int count, std::uint64_t seed) const;
  std::size_t fallback_warnings() const;

 private:
  DomainSpec spec_;
  std::shared_ptr<std::size_t> warn_count_;
};

// ------------------------------------------------- regularized defining function

struct RegularizeOptions {
  double h = 0.025;                 // collar grid spacing (<= delta/8)
  double delta = 0.0;               // 0 -> delta_max(spec)
  int boundary_check_samples = 256; // Levi positivity audit
  std::uint64_t seed = 7;
};

struct LeviPositivityError : std::runtime_error {
  LeviPositivityError(const std::string& msg, std::array<double, kMaxDim> pt, double eig)
      : std::runtime_error(msg), point(pt), eigenvalue(eig) {}
  std::array<double, kMaxDim> point{};
  double eigenvalue = 0.0;
};

class DefiningFunction {
 public:
  DefiningFunction(DomainSpec spec, RegularizeOptions opt = {});

  const Domain& domain() const { return dom_; }
  bool regularized() const { return true; }
  double L0() const { return dom_.spec().L0; }
  double C0() const { return C0_; }           // measured Levi floor on boundary
  double omega2(double sep) const;            // second-derivative modulus bound

  // rho at real coordinates, any dual tower (analytic on D-bar, Whitney outside)
  template <class S>
  S eval_real(const S* x) const {
    std::array<double, kMaxDim> xg{};
    for (int i = 0; i < dom_.rdim(); ++i) xg[i] = ground_real(x[i]);
    if (dom_.signed_distance(xg.data()) <= 0.0) return rho_an_real(dom_.spec(), x);
    return whit_->eval(x);
  }
  double operator()(const double* x) const { return eval_real<double>(x); }

  void grad_complex(const double* x, cdouble* g) const;  // d rho / d z_j, n entries
  const WhitneyField& whitney() const { return *whit_; }

 private:
  Domain dom_;
  RegularizeOptions opt_;
  std::unique_ptr<WhitneyField> whit_;
  double C0_ = 0.0;
  double omega2_coeff_ = 0.0;
};

// ------------------------------------------------------------------- charts

struct BoundaryChart {
  std::array<double, kMaxDim> base{};                 // zeta0, real coords
  std::array<cdouble, kMaxN> nu{};                    // complex unit normal
  std::array<std::array<cdouble, kMaxN>, kMaxN> frame{};  // unitary columns, [0]=nu
  double radius = 0.0;
  double jac_det = 0.0;  // |det DPsi| at the base point
};

struct ChartCoords {
  double s1 = 0.0;                // rho(zeta) (analytic regularized branch)
  double s2 = 0.0;                // Im( drho(zeta0) . (zeta - z) )
  std::array<double, 2 * kMaxN - 2> t{};
  double tnorm = 0.0;
};

std::vector<BoundaryChart> build_charts(const Domain& dom, int points_per_circle = 12,
                                        double radius_factor = 1.6);
ChartCoords chart_coords(const DomainSpec& spec, const BoundaryChart& ch,
                         const double* zeta, const double* z);
// true if zeta lies in the chart patch
bool chart_contains(const BoundaryChart& ch, const double* zeta, int rdim);

using PhiFn = std::function<cdouble(const cdouble* z, const cdouble* zeta)>;

struct ChartBoundSample {
  int chart = 0;
  double s1 = 0, s2 = 0, tnorm = 0, absphi = 0, ratio = 0;
};
struct ChartBoundReport {
  double c_star = 0.0;        // min |Phi| / (d(z)+s1+|s2|+|t|^2)
  double c_star_plus = 0.0;   // min |Phi| / |zeta-z|^2
  double c_sep = 0.0;         // min |zeta-z| / |(s2,t)|
  std::size_t samples = 0;
  int worst_chart = -1;
  std::array<double, kMaxDim> worst_zeta{};
  std::array<double, kMaxDim> worst_z{};
  std::vector<ChartBoundSample> rows;  // for CSV diagnostics
};

ChartBoundReport chart_bound_report(const Domain& dom, const std::vector<BoundaryChart>& charts,
                                    const PhiFn& phi, const double* z, double delta,
                                    std::size_t samples_per_chart, std::uint64_t seed,
                                    bool keep_rows = false);

}  // namespace dbarlab

#endif
