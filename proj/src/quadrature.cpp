#include "dbarlab/quadrature.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

#include "dbarlab/fit.hpp"
#include "dbarlab/gauss.hpp"

namespace dbarlab {

std::string mesh_region_name(MeshRegion r) {
  switch (r) {
    case MeshRegion::Interior: return "interior";
    case MeshRegion::Shell: return "shell";
    case MeshRegion::Boundary: return "boundary";
  }
  throw std::logic_error("mesh_region_name: bad region");
}

MeshRegion mesh_region_from_name(const std::string& s) {
  if (s == "interior") return MeshRegion::Interior;
  if (s == "shell") return MeshRegion::Shell;
  if (s == "boundary") return MeshRegion::Boundary;
  throw std::invalid_argument("unknown mesh region: " + s);
}

double QuadratureMesh::total_weight() const {
  double s = 0.0, c = 0.0;
  for (double w : weights) {
    double t = s + w;
    c += (std::abs(s) >= std::abs(w)) ? ((s - t) + w) : ((w - t) + s);
    s = t;
  }
  return s + c;
}

double QuadratureMesh::min_target_distance() const {
  if (!has_target) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count(); ++i) {
    double d2 = 0.0;
    const double* x = node(i);
    for (int k = 0; k < m; ++k) d2 += (x[k] - target[k]) * (x[k] - target[k]);
    best = std::min(best, std::sqrt(d2));
  }
  return best;
}

// ----------------------------------------------------------- local helpers

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// uniform in [-1, 1), deterministic in (seed, index)
double jitter_unit(std::uint64_t seed, std::uint64_t idx) {
  std::uint64_t r = mix64(seed ^ mix64(idx));
  return 2.0 * (double(r >> 11) * 0x1.0p-53) - 1.0;
}

struct DirGrid {
  int m = 0;
  std::size_t count = 0;
  std::vector<double> dirs;  // m * count
  std::vector<double> w;     // count
};

/* Product hyperspherical grid on S^{m-1}: Gauss-Legendre in the polar
   angles phi_k in (0, pi) with weight sin^{m-1-k}, trapezoid in the
   periodic azimuth.  Small seeded jitter keeps nodes off exact symmetry
   alignments. */
DirGrid direction_grid(int m, double h_ang, double jitter_ang, std::uint64_t seed) {
  DirGrid g;
  g.m = m;
  const int n_az = std::max(8, int(std::ceil(2.0 * M_PI / h_ang)));
  const int n_pol = std::max(6, int(std::ceil(M_PI / h_ang)));
  const int npolar = m - 2;  // number of [0, pi] angles

  double predicted = double(n_az);
  for (int k = 0; k < npolar; ++k) predicted *= double(n_pol);
  if (predicted > 2.5e7)
    throw std::runtime_error("direction_grid: angular resolution too fine (node count cap)");

  GaussRule pol = gauss_legendre(n_pol, 0.0, M_PI);
  const double waz = 2.0 * M_PI / n_az;

  std::vector<int> idx(std::max(npolar, 1), 0);
  std::uint64_t node_ctr = 0, ring_ctr = 0;
  for (;;) {
    // polar part of this ring
    double wring = 1.0;
    std::array<double, kMaxDim> phi{};
    bool ok = true;
    for (int k = 0; k < npolar; ++k) {
      double p = pol.x[idx[k]] + jitter_ang * jitter_unit(seed, 3 * ring_ctr + k + 101);
      p = std::min(std::max(p, 1e-9), M_PI - 1e-9);
      phi[k] = p;
      int spow = m - 2 - k;  // sin^{m-1-(k+1)}
      double sw = 1.0;
      for (int t = 0; t < spow; ++t) sw *= std::sin(p);
      wring *= pol.w[idx[k]] * sw;
      if (wring <= 0.0) ok = false;
    }
    if (ok) {
      double phase = jitter_ang * jitter_unit(seed, 7 * ring_ctr + 3);
      for (int j = 0; j < n_az; ++j) {
        double az = (j + 0.5) * waz + phase;
        // x1 = cos(phi1), x2 = sin(phi1) cos(phi2), ..., xm = prod sin * sin(az)
        std::array<double, kMaxDim> x{};
        double sprod = 1.0;
        for (int k = 0; k < npolar; ++k) {
          x[k] = sprod * std::cos(phi[k]);
          sprod *= std::sin(phi[k]);
        }
        x[npolar] = sprod * std::cos(az);
        x[npolar + 1] = sprod * std::sin(az);
        for (int k = 0; k < m; ++k) g.dirs.push_back(x[k]);
        g.w.push_back(wring * waz);
        ++node_ctr;
      }
    }
    ++ring_ctr;
    // advance the polar multi-index
    int k = 0;
    for (; k < npolar; ++k) {
      if (++idx[k] < n_pol) break;
      idx[k] = 0;
    }
    if (k == npolar) break;  // wrapped all digits (also ends the npolar==0 case)
  }
  g.count = node_ctr;
  return g;
}

// dyadic bands [lo, hi] of offsets from the accumulation edge, widths
// halving from length/2 down to w_min; hole=true leaves (0, w_min) empty
std::vector<std::pair<double, double>> graded_offsets(double length, double w_min, bool hole) {
  std::vector<std::pair<double, double>> bands;
  if (length <= 0.0) return bands;
  if (hole && w_min >= length) return bands;
  double hi = length;
  for (;;) {
    double lo = 0.5 * hi;
    if (lo <= w_min) {
      bands.emplace_back(hole ? w_min : 0.0, hi);
      break;
    }
    bands.emplace_back(lo, hi);
    hi = lo;
  }
  return bands;
}

std::vector<std::pair<double, double>> uniform_offsets(double length, double width) {
  std::vector<std::pair<double, double>> bands;
  if (length <= 0.0) return bands;
  int nb = std::max(1, int(std::ceil(length / width)));
  double w = length / nb;
  for (int k = 0; k < nb; ++k) bands.emplace_back(k * w, (k + 1) * w);
  return bands;
}

// real gradient of rho0 from the Wirtinger gradient
void rho0_real_gradient(const DomainSpec& spec, const double* x, double* grad) {
  std::array<cdouble, kMaxN> z{}, gz{};
  lift_complex(spec.n, x, z.data());
  rho0_grad(spec, z.data(), gz.data());
  for (int j = 0; j < spec.n; ++j) {
    grad[2 * j] = 2.0 * gz[j].real();
    grad[2 * j + 1] = -2.0 * gz[j].imag();
  }
}

}  // namespace

// --------------------------------------------------------------- build_mesh

QuadratureMesh build_mesh(const Domain& dom, MeshRegion region, double h, int level,
                          const std::vector<double>& target, double delta,
                          const MeshOptions& opt) {
  if (!(h > 0.0)) throw std::invalid_argument("build_mesh: h must be positive");
  if (level < 0) throw std::invalid_argument("build_mesh: level must be >= 0");
  const int n = dom.n(), m = dom.rdim();
  if (delta == 0.0) delta = dom.delta_cap();
  if (region == MeshRegion::Shell && !(delta > 0.0))
    throw std::invalid_argument("build_mesh: shell requires delta > 0");

  QuadratureMesh mesh;
  mesh.n = n;
  mesh.m = m;
  mesh.region = region;
  mesh.level = level;
  mesh.h = h;
  mesh.h_eff = h * std::pow(0.5, level);
  mesh.delta = (region == MeshRegion::Shell) ? delta : 0.0;

  std::array<double, kMaxDim> center{};
  if (!target.empty()) {
    if (int(target.size()) != m)
      throw std::invalid_argument("build_mesh: target must have 2n coordinates");
    if (!(dom.signed_distance(target.data()) < 0.0))
      throw std::invalid_argument("build_mesh: singular target must lie strictly inside D");
    mesh.has_target = true;
    for (int k = 0; k < m; ++k) {
      mesh.target[k] = target[k];
      center[k] = target[k];
    }
  }
  const bool graded = mesh.has_target;
  mesh.h_min = (graded || opt.grade_boundary) ? opt.hmin_factor * mesh.h_eff : 0.0;

  const double h_ang = std::max(mesh.h_eff, opt.ang_floor);
  DirGrid dirs = direction_grid(m, h_ang, opt.jitter * mesh.h_eff, opt.seed);
  GaussRule unit = gauss_legendre(std::max(2, opt.radial_per_band));  // on [-1,1]
  const double bw = opt.band_width * mesh.h_eff;

  // radial nodes per ray are bounded by the band count; refuse meshes that
  // cannot fit in memory rather than thrashing
  {
    double ext = 1.0;  // radial extent bound
    switch (dom.spec().kind) {
      case DomainKind::UnitBall: ext = 1.0; break;
      case DomainKind::Ellipsoid:
        for (double a : dom.spec().params) ext = std::max(ext, a);
        break;
      case DomainKind::GraphPerturbation: ext = 1.0 + std::abs(dom.spec().params.at(0)); break;
    }
    ext = 2.2 * ext;  // worst chord through an off-center target
    double bands = 1.0;
    if (region == MeshRegion::Boundary) {
      bands = 0.25;
    } else if (graded) {
      bands = std::ceil(std::log2(ext / std::max(mesh.h_min, 1e-12))) + 3.0;
    } else if (region == MeshRegion::Shell) {
      bands = std::max(8.0 + 4.0 * level, delta / bw) + 2.0;
    } else {
      bands = ext / bw + 2.0;
      if (opt.grade_boundary)
        bands += std::ceil(std::log2(2.0 * bw / std::max(mesh.h_min, 1e-12))) + 2.0;
    }
    if (double(dirs.count) * bands * double(unit.x.size()) > 3.2e7)
      throw std::runtime_error(
          "build_mesh: node count cap exceeded; increase h or decrease level");
  }

  double r_max = 0.0;
  std::size_t live_rays = 0;
  std::vector<std::pair<double, double>> bands;
  for (std::size_t id = 0; id < dirs.count; ++id) {
    const double* w_dir = dirs.dirs.data() + std::size_t(m) * id;
    const double wd = dirs.w[id];
    double r0 = 0.0, r1 = 0.0;  // radial segment [r0, r1] along this ray
    switch (region) {
      case MeshRegion::Interior:
        r0 = 0.0;
        r1 = dom.ray_level_crossing(center.data(), w_dir, 0.0);
        break;
      case MeshRegion::Shell:
        r0 = dom.ray_level_crossing(center.data(), w_dir, 0.0);
        r1 = dom.ray_level_crossing(center.data(), w_dir, delta, r0 + delta);
        break;
      case MeshRegion::Boundary: {
        double r = dom.ray_level_crossing(center.data(), w_dir, 0.0);
        std::array<double, kMaxDim> x{}, nu{};
        for (int k = 0; k < m; ++k) x[k] = center[k] + r * w_dir[k];
        rho0_real_gradient(dom.spec(), x.data(), nu.data());
        double gn = 0.0, cosg = 0.0;
        for (int k = 0; k < m; ++k) gn += nu[k] * nu[k];
        gn = std::sqrt(gn);
        if (!(gn > 0.0)) throw std::runtime_error("build_mesh: vanishing boundary gradient");
        for (int k = 0; k < m; ++k) {
          nu[k] /= gn;
          cosg += nu[k] * w_dir[k];
        }
        if (cosg <= 1e-6)
          throw std::runtime_error("build_mesh: boundary not star-shaped about the center");
        double wt = wd * std::pow(r, m - 1) / cosg;
        for (int k = 0; k < m; ++k) mesh.nodes.push_back(x[k]);
        for (int k = 0; k < m; ++k) mesh.normals.push_back(nu[k]);
        mesh.weights.push_back(wt);
        r_max = std::max(r_max, r);
        ++live_rays;
        continue;
      }
    }
    const double len = r1 - r0;
    if (len <= 1e-12) continue;  // ray misses the region (thin shell corner)
    ++live_rays;
    r_max = std::max(r_max, r1);

    bands.clear();
    if (region == MeshRegion::Interior) {
      if (graded) {
        bands = graded_offsets(r1, mesh.h_min, /*hole=*/true);  // accumulate at z
      } else if (opt.grade_boundary) {
        double g = std::min(2.0 * bw, 0.5 * r1);  // graded collar depth
        bands = uniform_offsets(r1 - g, bw);
        for (auto [ulo, uhi] : graded_offsets(g, mesh.h_min, /*hole=*/false))
          bands.emplace_back(r1 - uhi, r1 - ulo);
      } else {
        bands = uniform_offsets(r1, bw);
      }
    } else {  // Shell
      if (graded) {
        // kernel peak sits at the inner edge (closest approach to z)
        for (auto [ulo, uhi] : graded_offsets(len, std::min(mesh.h_min, 0.25 * len), false))
          bands.emplace_back(r0 + ulo, r0 + uhi);
      } else {
        // resolve shell-supported densities (cutoff bump ~ len wide) even
        // when h_eff is coarse, and keep refining with the level although
        // the shell extent itself never changes
        double wr = std::min(bw, len / (8.0 + 4.0 * level));
        for (auto [ulo, uhi] : uniform_offsets(len, wr))
          bands.emplace_back(r0 + ulo, r0 + uhi);
      }
    }
    for (auto [lo, hi] : bands) {
      for (std::size_t q = 0; q < unit.x.size(); ++q) {
        double r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * unit.x[q];
        double wt = 0.5 * (hi - lo) * unit.w[q] * wd * std::pow(r, m - 1);
        for (int k = 0; k < m; ++k) mesh.nodes.push_back(center[k] + r * w_dir[k]);
        mesh.weights.push_back(wt);
      }
    }
  }

  if (live_rays == 0 || mesh.weights.empty())
    throw std::runtime_error("build_mesh: region empty at resolution h");
  for (double w : mesh.weights)
    if (!(w > 0.0) || !std::isfinite(w))
      throw std::runtime_error("build_mesh: nonpositive quadrature weight");
  if (graded)
    for (double r = r_max; r > mesh.h_min; r *= 0.5) mesh.grading_radii.push_back(r);
  return mesh;
}

// -------------------------------------------------------------- integration

IntegralResult integrate_mesh(const QuadratureMesh& mesh,
                              const std::function<cdouble(const double*)>& f,
                              FloorGuard* guard) {
  IntegralResult res;
  res.value = integrate_nodes(mesh, [&](const double* x, std::size_t) { return f(x); });
  res.nodes = mesh.count();
  res.refine_est = std::numeric_limits<double>::quiet_NaN();
  if (guard) res.floor_skips = guard->skips;
  return res;
}

IntegralResult singular_integrate(const Domain& dom, MeshRegion region, double h, int level,
                                  const std::function<cdouble(const double*)>& f, double tol,
                                  const std::vector<double>& target, double delta,
                                  const MeshOptions& opt, FloorGuard* guard) {
  IntegralResult res;
  cdouble coarse(0.0, 0.0);
  if (level >= 1) {
    QuadratureMesh mc = build_mesh(dom, region, h, level - 1, target, delta, opt);
    coarse = integrate_nodes(mc, [&](const double* x, std::size_t) { return f(x); });
  }
  QuadratureMesh mf = build_mesh(dom, region, h, level, target, delta, opt);
  res.value = integrate_nodes(mf, [&](const double* x, std::size_t) { return f(x); });
  res.nodes = mf.count();
  if (level >= 1) {
    res.refine_est = std::abs(res.value - coarse);
    res.flagged = res.refine_est > tol;
  } else {
    res.refine_est = std::numeric_limits<double>::quiet_NaN();
  }
  if (guard) res.floor_skips = guard->skips;
  return res;
}

// ------------------------------------------------- singular kernel metadata

SingularIntegralSpec make_singular_spec(int n, int ell, const double* z, int numerator_degree,
                                        double floor) {
  if (!(1 <= ell && ell < n))
    throw std::invalid_argument("SingularIntegralSpec: requires 1 <= ell < n");
  SingularIntegralSpec s;
  s.n = n;
  s.ell = ell;
  s.phi_power = n - ell;
  s.dist_power = 2 * ell;
  s.numerator_degree = numerator_degree;
  s.floor = floor;
  for (int k = 0; k < 2 * n; ++k) s.target[k] = z[k];
  return s;
}

double singular_spec_model(const SingularIntegralSpec& spec, const double* zeta, cdouble phi) {
  double d2 = 0.0;
  for (int k = 0; k < 2 * spec.n; ++k)
    d2 += (zeta[k] - spec.target[k]) * (zeta[k] - spec.target[k]);
  double dist = std::sqrt(d2);
  double aphi = std::max(std::abs(phi), spec.floor);
  return std::pow(dist, spec.numerator_degree - spec.dist_power) /
         std::pow(aphi, spec.phi_power);
}

// ------------------------------------------------------------ scaling probes

namespace {

// nodes/weights on [0,1] with dyadic grading toward 0 (scale resolved: s_min)
GaussRule graded_grid01(double s_min, int per_band) {
  GaussRule unit = gauss_legendre(per_band);
  GaussRule out;
  double hi = 1.0;
  for (;;) {
    double lo = (0.5 * hi <= s_min) ? 0.0 : 0.5 * hi;
    for (int q = 0; q < per_band; ++q) {
      out.x.push_back(0.5 * (lo + hi) + 0.5 * (hi - lo) * unit.x[q]);
      out.w.push_back(0.5 * (hi - lo) * unit.w[q]);
    }
    if (lo == 0.0) break;
    hi = lo;
  }
  return out;
}

std::vector<double> default_deltas() {
  std::vector<double> d;
  for (int k = 8; k <= 16; ++k) d.push_back(std::pow(0.5, k));
  return d;
}

/* leading constant of I(delta) = C delta^expo + D by linear least squares;
   the O(1) tail of the probe integrals would otherwise bias C badly when
   expo is close to 0 */
double leading_constant(const std::vector<ScalingProbeRow>& rows, double expo) {
  double sxx = 0.0, sx = 0.0, s1 = 0.0, sxy = 0.0, sy = 0.0;
  for (const auto& row : rows) {
    double x = std::pow(row.delta, expo);
    sxx += x * x;
    sx += x;
    s1 += 1.0;
    sxy += x * row.value;
    sy += row.value;
  }
  double det = sxx * s1 - sx * sx;
  if (std::abs(det) < 1e-300) return 0.0;
  return (sxy * s1 - sx * sy) / det;
}

ScalingProbeReport finish_probe(ScalingProbeReport rep) {
  std::vector<double> xs, ys;
  for (const auto& row : rep.rows) {
    xs.push_back(row.delta);
    ys.push_back(row.value);
  }
  rep.slope = loglog_slope(xs, ys);
  rep.constant = leading_constant(rep.rows, rep.expected);
  return rep;
}

}  // namespace

ScalingProbeReport scaling_probe_interior(double alpha, double beta,
                                          const std::vector<double>& deltas) {
  if (!(alpha >= 0.0 && alpha < beta + 0.5))
    throw std::invalid_argument("scaling_probe_interior: requires 0 <= alpha < beta + 1/2");
  ScalingProbeReport rep;
  rep.kind = "interior";
  rep.alpha = alpha;
  rep.beta = beta;
  rep.expected = alpha - 0.5 - beta;
  std::vector<double> ds = deltas.empty() ? default_deltas() : deltas;
  for (double d : ds) {
    GaussRule gs = graded_grid01(1e-3 * d, 10);
    GaussRule gt = graded_grid01(1e-3 * std::sqrt(d), 10);
    double acc = 0.0;
    for (std::size_t i = 0; i < gs.x.size(); ++i) {
      double s = gs.x[i];
      double num = gs.w[i] * std::pow(s, alpha + 1.0);
      double inner = 0.0;
      for (std::size_t j = 0; j < gt.x.size(); ++j)
        inner += gt.w[j] / std::pow(d + s + gt.x[j] * gt.x[j], 3.0 + beta);
      acc += num * inner;
    }
    rep.rows.push_back({d, acc});
  }
  return finish_probe(std::move(rep));
}

ScalingProbeReport scaling_probe_band(double alpha, double beta,
                                      const std::vector<double>& deltas) {
  if (!(alpha >= 0.0 && alpha < beta + 0.5))
    throw std::invalid_argument("scaling_probe_band: requires 0 <= alpha < beta + 1/2");
  ScalingProbeReport rep;
  rep.kind = "band";
  rep.alpha = alpha;
  rep.beta = beta;
  rep.expected = alpha - beta + 1.5;
  std::vector<double> ds = deltas.empty() ? default_deltas() : deltas;
  for (double d : ds) {
    GaussRule gs = gauss_legendre(16, d, 2.0 * d);
    GaussRule gt = graded_grid01(1e-3 * std::sqrt(d), 10);
    double acc = 0.0;
    for (std::size_t i = 0; i < gs.x.size(); ++i) {
      double s = gs.x[i];
      double num = gs.w[i] * std::pow(s, alpha + 1.0);
      double inner = 0.0;
      for (std::size_t j = 0; j < gt.x.size(); ++j)
        inner += gt.w[j] / std::pow(s + gt.x[j] * gt.x[j], 1.0 + beta);
      acc += num * inner;
    }
    rep.rows.push_back({d, acc});
  }
  return finish_probe(std::move(rep));
}

ScalingProbeReport scaling_probe_projection(int n, double alpha,
                                            const std::vector<double>& deltas) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw std::invalid_argument("scaling_probe_projection: requires 0 <= alpha < 1");
  if (n < 2) throw std::invalid_argument("scaling_probe_projection: requires n >= 2");
  ScalingProbeReport rep;
  rep.kind = "projection";
  rep.alpha = alpha;
  rep.n = n;
  rep.expected = alpha - 1.0;
  std::vector<double> ds = deltas.empty() ? default_deltas() : deltas;
  for (double d : ds) {
    GaussRule gs = graded_grid01(1e-3 * d, 10);
    GaussRule gt = graded_grid01(1e-3 * std::sqrt(d), 10);
    double acc = 0.0;
    for (std::size_t i = 0; i < gs.x.size(); ++i) {
      double s = gs.x[i];
      double num = gs.w[i] * std::pow(s, alpha + 1.0);
      double inner = 0.0;
      for (std::size_t j = 0; j < gt.x.size(); ++j) {
        double t = gt.x[j];
        inner += gt.w[j] * std::pow(t, 2.0 * n - 3.0) / std::pow(d + s + t * t, n + 2.0);
      }
      acc += num * inner;
    }
    rep.rows.push_back({d, acc});
  }
  return finish_probe(std::move(rep));
}

std::string probe_report_csv(const ScalingProbeReport& rep) {
  std::string out = "delta,value,slope,expected\n";
  char buf[160];
  for (const auto& row : rep.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", row.delta, row.value, rep.slope,
                  rep.expected);
    out += buf;
  }
  return out;
}

// --------------------------------------------------------- singular Stokes

namespace detail {

StokesReport stokes_check_impl(const Domain& dom, const StokesField& S, const StokesField& B,
                               double m_exp, double b_exp, double h, int level,
                               std::uint64_t seed) {
  if (!(m_exp + b_exp > 0.0))
    throw std::invalid_argument("singular_stokes_check: requires m + b > 0");
  const int m = dom.rdim();
  StokesReport rep;

  // --- sampled growth validation along inward normals ------------------
  auto bpts = dom.sample_boundary(24, seed);
  const std::vector<double> dists = {0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625};
  std::vector<double> sup_s, sup_b;
  double c_s = 0.0, c_b = 0.0;
  for (double d : dists) {
    double s0 = 0.0, s1 = 0.0, b0 = 0.0, b1 = 0.0;
    for (const auto& bp : bpts) {
      std::array<double, kMaxDim> nu{}, x{}, g{};
      rho0_real_gradient(dom.spec(), bp.data(), nu.data());
      double gn = 0.0;
      for (int k = 0; k < m; ++k) gn += nu[k] * nu[k];
      gn = std::sqrt(gn);
      for (int k = 0; k < m; ++k) x[k] = bp[k] - d * nu[k] / gn;
      s0 = std::max(s0, std::abs(S.f(x.data())));
      b0 = std::max(b0, std::abs(B.f(x.data())));
      S.grad(x.data(), g.data());
      for (int k = 0; k < m; ++k) s1 = std::max(s1, std::abs(g[k]));
      B.grad(x.data(), g.data());
      for (int k = 0; k < m; ++k) b1 = std::max(b1, std::abs(g[k]));
    }
    sup_s.push_back(s0);
    sup_b.push_back(b0);
    c_s = std::max({c_s, s0 / std::pow(d, m_exp), s1 / std::pow(d, m_exp - 1.0)});
    c_b = std::max({c_b, b0 / (1.0 + std::pow(d, b_exp)), b1 / (1.0 + std::pow(d, b_exp - 1.0))});
  }
  auto decay_slope = [&](const std::vector<double>& sup) {
    bool allz = true;
    for (double v : sup) allz = allz && v <= 1e-300;
    if (allz) return std::numeric_limits<double>::infinity();
    return loglog_slope(dists, sup);
  };
  rep.slope_s = decay_slope(sup_s);
  rep.slope_b = decay_slope(sup_b);
  rep.c_s = c_s;
  rep.c_b = c_b;
  if (rep.slope_s < m_exp - 0.6)
    throw std::runtime_error("singular_stokes_check: S decays slower than the claimed d^m");
  if (rep.slope_b < std::min(b_exp, 0.0) - 0.6)
    throw std::runtime_error("singular_stokes_check: B grows faster than the claimed d^b");

  // --- integral at two refinement levels --------------------------------
  MeshOptions mo;
  mo.grade_boundary = true;
  mo.seed = seed;
  auto resid = [&](int lv, std::size_t* nodes) {
    QuadratureMesh mesh = build_mesh(dom, MeshRegion::Interior, h, lv, {}, 0.0, mo);
    std::vector<cdouble> acc(m);
    integrate_nodes_vec(
        mesh, std::size_t(m),
        [&](const double* x, std::size_t, cdouble* out) {
          std::array<double, kMaxDim> gs{}, gb{};
          double sv = S.f(x), bv = B.f(x);
          S.grad(x, gs.data());
          B.grad(x, gb.data());
          for (int j = 0; j < m; ++j) out[j] = cdouble(bv * gs[j] + sv * gb[j], 0.0);
        },
        acc.data());
    if (nodes) *nodes = mesh.count();
    double r = 0.0;
    for (int j = 0; j < m; ++j) r = std::max(r, std::abs(acc[j]));
    return r;
  };
  rep.coarse_residual = resid(level, nullptr);
  rep.residual = resid(level + 1, &rep.nodes);
  rep.converging = rep.residual <= rep.coarse_residual * 1.05 + 1e-14;
  return rep;
}

}  // namespace detail

// ----------------------------------------------------------------- caching

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::map<std::string, QuadratureMesh>& mesh_cache_map() {
  static std::map<std::string, QuadratureMesh> cache;
  return cache;
}
std::mutex& mesh_cache_mutex() {
  static std::mutex mu;
  return mu;
}
std::string& mesh_cache_dir_ref() {
  static std::string dir;
  return dir;
}

}  // namespace

std::string domain_hash(const DomainSpec& spec) {
  std::string s = domain_kind_name(spec.kind) + "|" + std::to_string(spec.n);
  char buf[64];
  for (double p : spec.params) {
    std::snprintf(buf, sizeof buf, "|%.17g", p);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "|%.17g", spec.L0);
  s += buf;
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a(s));
  return buf;
}

std::string mesh_cache_key(const DomainSpec& spec, MeshRegion region, double h, int level,
                           const std::vector<double>& target, double delta) {
  std::string s = domain_hash(spec) + "-" + mesh_region_name(region);
  char buf[96];
  std::snprintf(buf, sizeof buf, "-h%.17g-l%d-d%.17g", h, level, delta);
  s += buf;
  if (!target.empty()) {
    std::string t;
    for (double x : target) {
      std::snprintf(buf, sizeof buf, ",%.17g", x);
      t += buf;
    }
    std::snprintf(buf, sizeof buf, "-z%016" PRIx64, fnv1a(t));
    s += buf;
  }
  return s;
}

namespace {

constexpr std::uint64_t kMeshMagic = 0x44424c514d455348ULL;  // "DBLQMESH"

template <class T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
void get(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof v);
}
void put_vec(std::ofstream& f, const std::vector<double>& v) {
  std::uint64_t n = v.size();
  put(f, n);
  f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(n * sizeof(double)));
}
void get_vec(std::ifstream& f, std::vector<double>& v) {
  std::uint64_t n = 0;
  get(f, n);
  if (n > (1ULL << 32)) throw std::runtime_error("load_mesh: corrupt size field");
  v.resize(n);
  f.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
}

}  // namespace

void save_mesh(const QuadratureMesh& mesh, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_mesh: cannot open " + path);
  put(f, kMeshMagic);
  put(f, std::int32_t(mesh.n));
  put(f, std::int32_t(mesh.m));
  put(f, std::int32_t(mesh.region));
  put(f, std::int32_t(mesh.level));
  put(f, mesh.h);
  put(f, mesh.h_eff);
  put(f, mesh.delta);
  put(f, std::int32_t(mesh.has_target ? 1 : 0));
  f.write(reinterpret_cast<const char*>(mesh.target.data()), sizeof mesh.target);
  put(f, mesh.h_min);
  put_vec(f, mesh.grading_radii);
  put_vec(f, mesh.nodes);
  put_vec(f, mesh.weights);
  put_vec(f, mesh.normals);
  if (!f) throw std::runtime_error("save_mesh: write failed for " + path);
}

QuadratureMesh load_mesh(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_mesh: cannot open " + path);
  std::uint64_t magic = 0;
  get(f, magic);
  if (magic != kMeshMagic) throw std::runtime_error("load_mesh: bad magic in " + path);
  QuadratureMesh mesh;
  std::int32_t n = 0, m = 0, region = 0, level = 0, has_target = 0;
  get(f, n);
  get(f, m);
  get(f, region);
  get(f, level);
  get(f, mesh.h);
  get(f, mesh.h_eff);
  get(f, mesh.delta);
  get(f, has_target);
  f.read(reinterpret_cast<char*>(mesh.target.data()), sizeof mesh.target);
  get(f, mesh.h_min);
  get_vec(f, mesh.grading_radii);
  get_vec(f, mesh.nodes);
  get_vec(f, mesh.weights);
  get_vec(f, mesh.normals);
  if (!f) throw std::runtime_error("load_mesh: truncated file " + path);
  mesh.n = n;
  mesh.m = m;
  mesh.region = MeshRegion(region);
  mesh.level = level;
  mesh.has_target = has_target != 0;
  if (mesh.nodes.size() != std::size_t(mesh.m) * mesh.weights.size())
    throw std::runtime_error("load_mesh: inconsistent node/weight sizes in " + path);
  return mesh;
}

const QuadratureMesh& cached_mesh(const Domain& dom, MeshRegion region, double h, int level,
                                  const std::vector<double>& target, double delta,
                                  const MeshOptions& opt) {
  double d = (delta == 0.0) ? dom.delta_cap() : delta;
  std::string key = mesh_cache_key(dom.spec(), region, h, level, target, d);
  char buf[160];
  std::snprintf(buf, sizeof buf, "-o%d,%.17g,%.17g,%d,%.17g,%.17g,%" PRIu64,
                opt.radial_per_band, opt.band_width, opt.hmin_factor,
                opt.grade_boundary ? 1 : 0, opt.jitter, opt.ang_floor, opt.seed);
  key += buf;
  std::lock_guard<std::mutex> lock(mesh_cache_mutex());
  auto& cache = mesh_cache_map();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const std::string& dir = mesh_cache_dir_ref();
  std::string path = dir.empty() ? "" : dir + "/" + std::to_string(fnv1a(key)) + ".qmesh";
  if (!dir.empty()) {
    try {
      return cache.emplace(key, load_mesh(path)).first->second;
    } catch (const std::exception&) {
      // miss or corrupt cache file: rebuild below
    }
  }
  QuadratureMesh mesh = build_mesh(dom, region, h, level, target, delta, opt);
  if (!dir.empty()) {
    try {
      save_mesh(mesh, path);
    } catch (const std::exception&) {
      // cache directory not writable: keep the in-memory copy only
    }
  }
  return cache.emplace(key, std::move(mesh)).first->second;
}

void set_mesh_cache_dir(const std::string& dir) {
  std::lock_guard<std::mutex> lock(mesh_cache_mutex());
  mesh_cache_dir_ref() = dir;
}

void clear_mesh_cache() {
  std::lock_guard<std::mutex> lock(mesh_cache_mutex());
  mesh_cache_map().clear();
}

// ------------------------------------------------------------ frame helper

void boundary_tangent_frame(const double* nu, int m, double* frame) {
  // Gram-Schmidt of the coordinate axes against nu, skipping the axis most
  // parallel to it; orientation fixed so det[nu | t_1 | ... | t_{m-1}] = +1.
  int skip = 0;
  for (int k = 1; k < m; ++k)
    if (std::abs(nu[k]) > std::abs(nu[skip])) skip = k;
  std::vector<double> basis;  // rows: nu, then tangents
  basis.insert(basis.end(), nu, nu + m);
  int rows = 1;
  for (int k = 0; k < m && rows < m; ++k) {
    if (k == skip) continue;
    std::vector<double> v(m, 0.0);
    v[k] = 1.0;
    for (int r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int i = 0; i < m; ++i) dot += v[i] * basis[std::size_t(r) * m + i];
      for (int i = 0; i < m; ++i) v[i] -= dot * basis[std::size_t(r) * m + i];
    }
    double nv = 0.0;
    for (double x : v) nv += x * x;
    nv = std::sqrt(nv);
    if (nv < 1e-12) continue;
    for (int i = 0; i < m; ++i) v[i] /= nv;
    basis.insert(basis.end(), v.begin(), v.end());
    ++rows;
  }
  if (rows != m) throw std::runtime_error("boundary_tangent_frame: degenerate normal");
  // determinant sign of the row matrix via Gaussian elimination
  std::vector<double> a = basis;
  double det = 1.0;
  for (int c = 0; c < m; ++c) {
    int p = c;
    for (int r = c + 1; r < m; ++r)
      if (std::abs(a[std::size_t(r) * m + c]) > std::abs(a[std::size_t(p) * m + c])) p = r;
    if (p != c) {
      for (int i = 0; i < m; ++i)
        std::swap(a[std::size_t(p) * m + i], a[std::size_t(c) * m + i]);
      det = -det;
    }
    double piv = a[std::size_t(c) * m + c];
    det *= piv;
    if (piv == 0.0) break;
    for (int r = c + 1; r < m; ++r) {
      double fac = a[std::size_t(r) * m + c] / piv;
      for (int i = c; i < m; ++i) a[std::size_t(r) * m + i] -= fac * a[std::size_t(c) * m + i];
    }
  }
  if (det < 0.0)
    for (int i = 0; i < m; ++i) basis[std::size_t(m - 1) * m + i] = -basis[std::size_t(m - 1) * m + i];
  std::copy(basis.begin() + m, basis.end(), frame);
}

}  // namespace dbarlab
