#ifndef DBARLAB_QUADRATURE_HPP
#define DBARLAB_QUADRATURE_HPP

/* Quadrature over D, the shell D_delta \ closure(D), and the boundary dD.
   All meshes are polar: directions on S^{2n-1} (product hyperspherical
   angles, Gauss-Legendre in the polar angles, trapezoid in the periodic
   one) times per-ray radial Gauss-Legendre bands, with exact Jacobian
   r^{2n-1} (surface nodes carry r^{2n-1}/<omega,nu> dsigma).  A mesh may
   carry a singular target z: it is then centered at z, so the r^{2n-1}
   Jacobian cancels the O(|zeta-z|^{-(2n-1)}) kernel growth, and the radial
   bands are graded dyadically (ratio 1/2) toward the near edge down to the
   radius h_min.  Summation is compensated (Neumaier) in a fixed node order,
   so identical inputs give bit-identical results. */

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbarlab/dual.hpp"
#include "dbarlab/geometry.hpp"

namespace dbarlab {

enum class MeshRegion { Interior, Shell, Boundary };

std::string mesh_region_name(MeshRegion r);
MeshRegion mesh_region_from_name(const std::string& s);

struct MeshOptions {
  int radial_per_band = 4;    // Gauss-Legendre nodes per radial band
  double band_width = 3.0;    // uniform band width in units of h_eff
  double hmin_factor = 1e-3;  // h_min = hmin_factor * h_eff for graded meshes
  bool grade_boundary = false;  // interior mesh: dyadic bands toward dD
  double jitter = 1e-3;       // angular jitter amplitude in units of h_eff
  double ang_floor = 0.0;     // angular pitch = max(h_eff, ang_floor); for
                              // target-centered meshes the angular profile is
                              // self-similar, so level refinement can stay radial
  std::uint64_t seed = 7;
};

struct QuadratureMesh {
  int n = 0;          // complex dimension
  int m = 0;          // real dimension 2n
  MeshRegion region = MeshRegion::Interior;
  int level = 0;      // refinement level; spacing h_eff = h / 2^level
  double h = 0.0;
  double h_eff = 0.0;
  double delta = 0.0;  // shell width (Shell region only)
  bool has_target = false;
  std::array<double, kMaxDim> target{};  // singular target z (mesh center)
  double h_min = 0.0;                    // innermost graded radius
  std::vector<double> grading_radii;     // dyadic radii actually used (global)
  std::vector<double> nodes;             // m * count, interleaved
  std::vector<double> weights;           // count
  std::vector<double> normals;           // m * count, Boundary meshes only

  std::size_t count() const { return weights.size(); }
  const double* node(std::size_t i) const { return nodes.data() + std::size_t(m) * i; }
  const double* normal(std::size_t i) const { return normals.data() + std::size_t(m) * i; }
  double total_weight() const;          // compensated sum of weights
  double min_target_distance() const;   // +inf when no target
};

/* target: empty -> mesh centered at the origin; otherwise 2n coords of the
   singular point (must lie strictly inside D).  delta: shell width, 0 ->
   delta_max(spec).  Throws std::invalid_argument on bad parameters and
   std::runtime_error when the region is empty at resolution h. */
QuadratureMesh build_mesh(const Domain& dom, MeshRegion region, double h, int level = 0,
                          const std::vector<double>& target = {}, double delta = 0.0,
                          const MeshOptions& opt = {});

// ------------------------------------------------------------- integration

struct IntegralResult {
  cdouble value{};
  double refine_est = 0.0;    // |level L - level L-1|, NaN when single level
  std::size_t nodes = 0;
  long long floor_skips = 0;  // integrand evaluations excluded by the floor
  bool flagged = false;       // refine_est above the requested tolerance
};

// |Phi| < floor exclusion counter (guard against catastrophic node placement)
struct FloorGuard {
  double floor = 1e-14;
  long long skips = 0;
  bool bad(const cdouble& phi) {
    if (std::abs(phi) < floor) {
      ++skips;
      return true;
    }
    return false;
  }
};

// Neumaier compensated sum of w_i f(x_i) in fixed node order.
// F: (const double* x, std::size_t node_index) -> cdouble
template <class F>
cdouble integrate_nodes(const QuadratureMesh& mesh, F&& f) {
  double sr = 0.0, cr = 0.0, si = 0.0, ci = 0.0;
  const std::size_t cnt = mesh.count();
  for (std::size_t i = 0; i < cnt; ++i) {
    cdouble v = f(mesh.node(i), i);
    double tr = v.real() * mesh.weights[i];
    double ti = v.imag() * mesh.weights[i];
    double t = sr + tr;
    cr += (std::abs(sr) >= std::abs(tr)) ? ((sr - t) + tr) : ((tr - t) + sr);
    sr = t;
    t = si + ti;
    ci += (std::abs(si) >= std::abs(ti)) ? ((si - t) + ti) : ((ti - t) + si);
    si = t;
  }
  return {sr + cr, si + ci};
}

// Same, for dim simultaneous components.
// F: (const double* x, std::size_t node_index, cdouble* out)
template <class F>
void integrate_nodes_vec(const QuadratureMesh& mesh, std::size_t dim, F&& f, cdouble* out) {
  std::vector<double> s(2 * dim, 0.0), c(2 * dim, 0.0);
  std::vector<cdouble> buf(dim);
  const std::size_t cnt = mesh.count();
  for (std::size_t i = 0; i < cnt; ++i) {
    for (auto& b : buf) b = cdouble(0.0, 0.0);
    f(mesh.node(i), i, buf.data());
    for (std::size_t k = 0; k < dim; ++k) {
      double parts[2] = {buf[k].real() * mesh.weights[i], buf[k].imag() * mesh.weights[i]};
      for (int p = 0; p < 2; ++p) {
        double& acc = s[2 * k + p];
        double& comp = c[2 * k + p];
        double t = acc + parts[p];
        comp += (std::abs(acc) >= std::abs(parts[p])) ? ((acc - t) + parts[p])
                                                      : ((parts[p] - t) + acc);
        acc = t;
      }
    }
  }
  for (std::size_t k = 0; k < dim; ++k)
    out[k] = cdouble(s[2 * k] + c[2 * k], s[2 * k + 1] + c[2 * k + 1]);
}

/* Integrate f over the region, meshing at levels level-1 and level; the
   returned value is the fine level, refine_est = |fine - coarse|, flagged
   when refine_est > tol.  guard (optional) collects floor-exclusion counts
   applied by f itself; its skip total is copied into the result. */
IntegralResult singular_integrate(const Domain& dom, MeshRegion region, double h, int level,
                                  const std::function<cdouble(const double*)>& f, double tol,
                                  const std::vector<double>& target = {}, double delta = 0.0,
                                  const MeshOptions& opt = {}, FloorGuard* guard = nullptr);

// Single-mesh flavor (no refinement estimate).
IntegralResult integrate_mesh(const QuadratureMesh& mesh,
                              const std::function<cdouble(const double*)>& f,
                              FloorGuard* guard = nullptr);

// ------------------------------------------------- singular kernel metadata

/* Shape of one term of the kernel decomposition: numerator degree N1 over
   Phi^{n-ell} |zeta-z|^{2 ell}, 1 <= ell < n. */
struct SingularIntegralSpec {
  int n = 2;
  int ell = 1;
  int phi_power = 1;       // n - ell
  int dist_power = 2;      // 2 ell
  int numerator_degree = 1;
  std::array<double, kMaxDim> target{};
  double floor = 1e-14;
};

SingularIntegralSpec make_singular_spec(int n, int ell, const double* z, int numerator_degree = 1,
                                        double floor = 1e-14);
// model magnitude |zeta-z|^{N1 - 2 ell} / |phi|^{n - ell}
double singular_spec_model(const SingularIntegralSpec& spec, const double* zeta, cdouble phi);

// --------------------------------------------------------- scaling probes

struct ScalingProbeRow {
  double delta = 0.0;
  double value = 0.0;
};

struct ScalingProbeReport {
  std::string kind;  // "interior" | "band" | "projection"
  double alpha = 0.0;
  double beta = 0.0;
  int n = 0;
  double slope = 0.0;     // fitted d log I / d log delta
  double expected = 0.0;  // predicted exponent
  double constant = 0.0;  // median of I(delta) / delta^expected
  std::vector<ScalingProbeRow> rows;
};

/* I(delta) = int_0^1 int_0^1 s^{alpha+1} / (delta + s + t^2)^{3+beta} dt ds,
   expected slope alpha - 1/2 - beta (needs 0 <= alpha < beta + 1/2). */
ScalingProbeReport scaling_probe_interior(double alpha, double beta,
                                          const std::vector<double>& deltas = {});
/* band version: int_delta^{2 delta} int_0^1 s^{alpha+1} / (s + t^2)^{1+beta},
   expected slope alpha - beta + 3/2. */
ScalingProbeReport scaling_probe_band(double alpha, double beta,
                                      const std::vector<double>& deltas = {});
/* I(delta) = int int s^{alpha+1} t^{2n-3} / (delta + s + t^2)^{n+2},
   expected slope alpha - 1 (needs 0 <= alpha < 1, n >= 2); the constant
   carries the 1/(1-alpha) blow-up. */
ScalingProbeReport scaling_probe_projection(int n, double alpha,
                                            const std::vector<double>& deltas = {});

std::string probe_report_csv(const ScalingProbeReport& rep);

// ------------------------------------------------------ singular Stokes

struct StokesReport {
  double residual = 0.0;         // max_j |I_j| at the finest level
  double coarse_residual = 0.0;  // same one level coarser
  double c_s = 0.0, c_b = 0.0;   // sampled growth constants
  double slope_s = 0.0, slope_b = 0.0;  // sampled decay rates of |S|, |B|
  bool converging = false;
  std::size_t nodes = 0;
};

namespace detail {
struct StokesField {
  std::function<double(const double*)> f;
  std::function<void(const double*, double*)> grad;
};
StokesReport stokes_check_impl(const Domain& dom, const StokesField& S, const StokesField& B,
                               double m_exp, double b_exp, double h, int level,
                               std::uint64_t seed);
template <class F>
StokesField wrap_stokes_field(int m, F f) {
  StokesField out;
  out.f = [f, m](const double* x) -> double {
    std::array<double, kMaxDim> p{};
    for (int i = 0; i < m; ++i) p[i] = x[i];
    return f(p.data(), m);
  };
  out.grad = [f, m](const double* x, double* g) {
    for (int k = 0; k < m; ++k) {
      std::array<Dual<double>, kMaxDim> p{};
      for (int i = 0; i < m; ++i) p[i] = Dual<double>(x[i], i == k ? 1.0 : 0.0);
      g[k] = f(p.data(), m).d;
    }
  };
  return out;
}
}  // namespace detail

/* Verify int_V (B dS/dx_j + S dB/dx_j) dV -> 0 under refinement.  S, B:
   generic callables T(const T* x, int m) for T in {double, Dual<double>}.
   Preconditions |d^i S| <= C d^{m_exp-i}, |d^i B| <= C (1 + d^{b_exp-i})
   are validated by sampling; m_exp + b_exp <= 0 or sampled growth beyond
   the claim rejects with an exception. */
template <class FS, class FB>
StokesReport singular_stokes_check(const Domain& dom, FS&& S, FB&& B, double m_exp, double b_exp,
                                   double h = 0.1, int level = 2, std::uint64_t seed = 11) {
  return detail::stokes_check_impl(dom, detail::wrap_stokes_field(dom.rdim(), std::forward<FS>(S)),
                                   detail::wrap_stokes_field(dom.rdim(), std::forward<FB>(B)),
                                   m_exp, b_exp, h, level, seed);
}

// ------------------------------------------------------------- mesh cache

std::string domain_hash(const DomainSpec& spec);
std::string mesh_cache_key(const DomainSpec& spec, MeshRegion region, double h, int level,
                           const std::vector<double>& target, double delta);

void save_mesh(const QuadratureMesh& mesh, const std::string& path);
QuadratureMesh load_mesh(const std::string& path);

/* Process-wide cache keyed by mesh_cache_key; when a cache directory is set
   (set_mesh_cache_dir), misses are backed by <dir>/<key>.qmesh files. */
const QuadratureMesh& cached_mesh(const Domain& dom, MeshRegion region, double h, int level,
                                  const std::vector<double>& target = {}, double delta = 0.0,
                                  const MeshOptions& opt = {});
void set_mesh_cache_dir(const std::string& dir);
void clear_mesh_cache();

// orthonormal tangent frame t_1..t_{m-1} at a surface point with outward
// normal nu, oriented so det[nu | t_1 | ... | t_{m-1}] = +1
void boundary_tangent_frame(const double* nu, int m, double* frame);

}  // namespace dbarlab

#endif
