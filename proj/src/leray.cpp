#include "dbarlab/leray.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

#include "dbarlab/fit.hpp"

namespace dbarlab {

namespace {

using D1 = Dual<double>;
using D2 = Dual<D1>;
using D3 = Dual<D2>;

void outward_normal(const DomainSpec& spec, const double* x, double* nu) {
  const int m = 2 * spec.n;
  std::array<D1, 2 * kMaxN> X{};
  for (int i = 0; i < m; ++i) X[i] = D1(x[i]);
  double norm2 = 0.0;
  for (int i = 0; i < m; ++i) {
    X[i].d = 1.0;
    nu[i] = rho0_eval_real(spec, X.data()).d;
    X[i].d = 0.0;
    norm2 += nu[i] * nu[i];
  }
  double inv = 1.0 / std::sqrt(norm2);
  for (int i = 0; i < m; ++i) nu[i] *= inv;
}

std::array<double, kMaxDim> random_unit(std::mt19937_64& rng, int m) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<double, kMaxDim> u{};
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (int i = 0; i < m; ++i) {
      u[i] = gauss(rng);
      norm2 += u[i] * u[i];
    }
  } while (norm2 < 1e-12);
  double inv = 1.0 / std::sqrt(norm2);
  for (int i = 0; i < m; ++i) u[i] *= inv;
  return u;
}

// boundary samples pushed along the outward normal by offset t
std::vector<std::array<double, kMaxDim>> offset_samples(const Domain& dom, int count,
                                                        double t, std::uint64_t seed) {
  auto base = dom.sample_boundary(count, seed);
  const int m = dom.rdim();
  for (auto& b : base) {
    std::array<double, kMaxDim> nu{};
    outward_normal(dom.spec(), b.data(), nu.data());
    for (int i = 0; i < m; ++i) b[i] += t * nu[i];
  }
  return base;
}

// slope 0 for identically-flat (or vanishing) data instead of a fit error
double safe_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (y[i] > 0.0 && x[i] > 0.0) {
      xs.push_back(x[i]);
      ys.push_back(y[i]);
    }
  if (xs.size() < 2) return 0.0;
  return loglog_slope(xs, ys);
}

}  // namespace

std::string leray_kind_name(LerayKind k) {
  switch (k) {
    case LerayKind::BM: return "bm";
    case LerayKind::Ball: return "ball";
    case LerayKind::Convex: return "convex";
    case LerayKind::Levi: return "levi";
    case LerayKind::WhitneyConvex: return "whitney-convex";
  }
  return "?";
}

LerayKind leray_kind_from_name(const std::string& s) {
  if (s == "bm") return LerayKind::BM;
  if (s == "ball") return LerayKind::Ball;
  if (s == "convex") return LerayKind::Convex;
  if (s == "levi") return LerayKind::Levi;
  if (s == "whitney-convex") return LerayKind::WhitneyConvex;
  throw std::invalid_argument("unknown Leray map kind: " + s);
}

double convexity_floor(const DomainSpec& spec, int samples, std::uint64_t seed) {
  Domain dom(spec);
  const int m = dom.rdim();
  double delta = delta_max(spec);
  double floor_eig = std::numeric_limits<double>::infinity();
  for (double off : {-0.5 * delta, 0.0, 0.5 * delta}) {
    auto pts = offset_samples(dom, samples, off, seed);
    for (const auto& p : pts) {
      Eigen::MatrixXd H(m, m);
      std::array<D2, 2 * kMaxN> X{};
      for (int i = 0; i < m; ++i) X[i] = D2(D1(p[i]));
      for (int i = 0; i < m; ++i) {
        X[i].v.d = 1.0;
        for (int j = i; j < m; ++j) {
          X[j].d = D1(1.0);
          double hij = rho0_eval_real(spec, X.data()).d.d;
          X[j].d = D1(0.0);
          H(i, j) = hij;
          H(j, i) = hij;
        }
        X[i].v.d = 0.0;
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      floor_eig = std::min(floor_eig, es.eigenvalues().minCoeff());
    }
  }
  return floor_eig;
}

LerayMap make_leray_map(const std::string& kind, const DomainSpec& spec, double shell_delta) {
  validate_domain(spec);
  LerayMap map;
  map.kind = leray_kind_from_name(kind);
  map.spec = spec;
  map.shell_delta = (shell_delta > 0.0) ? shell_delta : delta_max(spec);
  switch (map.kind) {
    case LerayKind::BM:
      map.holomorphic_in_z = false;
      break;
    case LerayKind::Ball:
      if (spec.kind != DomainKind::UnitBall)
        throw std::invalid_argument("ball Leray map requires the unit ball domain");
      map.holomorphic_in_z = true;
      break;
    case LerayKind::Convex: {
      double floor_eig = convexity_floor(spec, 64, 1771);
      if (!(floor_eig > 1e-9))
        throw std::runtime_error("convex Leray map rejected: Hessian floor " +
                                 std::to_string(floor_eig));
      map.holomorphic_in_z = true;
      break;
    }
    case LerayKind::Levi:
      map.holomorphic_in_z = true;
      break;
    case LerayKind::WhitneyConvex:
      return make_whitney_convex_map(spec);
  }
  return map;
}

LerayMap make_whitney_convex_map(const DomainSpec& spec, const RegularizeOptions& opt) {
  validate_domain(spec);
  double floor_eig = convexity_floor(spec, 64, 1771);
  if (!(floor_eig > 1e-9))
    throw std::runtime_error("whitney-convex Leray map rejected: Hessian floor " +
                             std::to_string(floor_eig));
  LerayMap map;
  map.kind = LerayKind::WhitneyConvex;
  map.spec = spec;
  map.holomorphic_in_z = true;
  map.shell_delta = (opt.delta > 0.0) ? opt.delta : delta_max(spec);
  map.rho_reg = std::make_shared<DefiningFunction>(spec, opt);
  return map;
}

PhiFn leray_phi_fn(const LerayMap& map) {
  const int n = map.spec.n;
  return [map, n](const cdouble* z, const cdouble* zeta) -> cdouble {
    std::array<double, kMaxDim> xz{}, xt{};
    for (int j = 0; j < n; ++j) {
      xz[2 * j] = z[j].real();
      xz[2 * j + 1] = z[j].imag();
      xt[2 * j] = zeta[j].real();
      xt[2 * j + 1] = zeta[j].imag();
    }
    return map.phi(xz.data(), xt.data());
  };
}

double max_dbar_z(const LerayMap& map, int samples, std::uint64_t seed) {
  Domain dom(map.spec);
  const int n = map.spec.n;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto zetas = offset_samples(dom, samples, 0.5 * map.shell_delta, seed + 1);
  auto zs = offset_samples(dom, samples, -0.3 * min_semi_axis(map.spec), seed + 2);
  double worst = 0.0;
  const cdouble ii(0.0, 1.0);
  for (int s = 0; s < samples; ++s) {
    std::array<D1, 2 * kMaxN> Z{}, T{};
    for (int i = 0; i < 2 * n; ++i) {
      Z[i] = D1(zs[s][i]);
      T[i] = D1(zetas[s][i]);
    }
    std::array<complex_of_t<D1>, kMaxN> gx{}, gy{};
    for (int k = 0; k < n; ++k) {
      Z[2 * k].d = 1.0;
      map.eval_g(Z.data(), T.data(), gx.data());
      Z[2 * k].d = 0.0;
      Z[2 * k + 1].d = 1.0;
      map.eval_g(Z.data(), T.data(), gy.data());
      Z[2 * k + 1].d = 0.0;
      for (int j = 0; j < n; ++j)
        worst = std::max(worst, std::abs(0.5 * (gx[j].d + ii * gy[j].d)));
    }
  }
  (void)uni;
  return worst;
}

PhiMinReport min_phi_report(const LerayMap& map, int z_samples, int zeta_samples,
                            std::uint64_t seed) {
  Domain dom(map.spec);
  const int m = dom.rdim();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  auto zb = dom.sample_boundary(z_samples, seed + 10);
  std::vector<std::array<double, kMaxDim>> zs(zb.size());
  double depth_cap = 0.9 * min_semi_axis(map.spec);
  for (std::size_t i = 0; i < zb.size(); ++i) {
    std::array<double, kMaxDim> nu{};
    outward_normal(map.spec, zb[i].data(), nu.data());
    double t = (0.02 + 0.98 * uni(rng)) * depth_cap;
    zs[i] = zb[i];
    for (int k = 0; k < m; ++k) zs[i][k] -= t * nu[k];
  }
  auto tb = dom.sample_boundary(zeta_samples, seed + 20);
  std::vector<std::array<double, kMaxDim>> ts(tb.size());
  for (std::size_t i = 0; i < tb.size(); ++i) {
    std::array<double, kMaxDim> nu{};
    outward_normal(map.spec, tb[i].data(), nu.data());
    double t = (1e-3 + (1.0 - 1e-3) * uni(rng)) * map.shell_delta;
    ts[i] = tb[i];
    for (int k = 0; k < m; ++k) ts[i][k] += t * nu[k];
  }

  PhiMinReport rep;
  rep.min_abs_phi = std::numeric_limits<double>::infinity();
  for (const auto& z : zs)
    for (const auto& t : ts) {
      double a = std::abs(map.phi(z.data(), t.data()));
      ++rep.pairs;
      if (a < rep.min_abs_phi) {
        rep.min_abs_phi = a;
        rep.worst_z = z;
        rep.worst_zeta = t;
      }
    }
  return rep;
}

double curvature_floor(const DomainSpec& spec) {
  switch (spec.kind) {
    case DomainKind::UnitBall:
      return 1.0;
    case DomainKind::Ellipsoid: {
      double amin = spec.params[0], amax = spec.params[0];
      for (int j = 1; j < spec.n; ++j) {
        amin = std::min(amin, spec.params[j]);
        amax = std::max(amax, spec.params[j]);
      }
      return amin * amin / amax;
    }
    case DomainKind::GraphPerturbation: {
      double eps = spec.params.at(0), w = spec.params.at(1);
      return 1.0 / (1.0 + 0.5 * eps * w * w);  // conservative estimate
    }
  }
  return 1.0;
}

namespace {

LeviBoundReport levi_margins(const DomainSpec& spec,
                             const std::vector<std::array<double, kMaxDim>>& zetas,
                             const std::vector<std::array<double, kMaxDim>>& zs,
                             double eps_pair) {
  LerayMap levi;
  levi.kind = LerayKind::Levi;
  levi.spec = spec;
  levi.holomorphic_in_z = true;
  const int m = 2 * spec.n;
  LeviBoundReport rep;
  rep.eps_pair = eps_pair;
  rep.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < zetas.size(); ++i) {
    const auto& zeta = zetas[i];
    const auto& z = zs[i];
    double w2 = 0.0;
    for (int k = 0; k < m; ++k) w2 += (zeta[k] - z[k]) * (zeta[k] - z[k]);
    if (w2 < 1e-24) continue;
    double reF = std::real(levi.phi(z.data(), zeta.data()));
    double drho = rho0_eval_real(spec, zeta.data()) - rho0_eval_real(spec, z.data());
    double margin = (reF - drho) / w2;
    ++rep.pairs;
    if (margin <= 0.0) ++rep.violations;
    if (margin < rep.min_margin) {
      rep.min_margin = margin;
      rep.worst_z = z;
      rep.worst_zeta = zeta;
    }
  }
  rep.c_measured = (rep.min_margin > 0.0) ? 1.0 / rep.min_margin
                                          : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace

LeviBoundReport levi_lower_bound_sweep(const DomainSpec& spec, int pairs, double eps_pair,
                                       std::uint64_t seed) {
  Domain dom(spec);
  const int m = dom.rdim();
  if (eps_pair <= 0.0) eps_pair = 0.3 * curvature_floor(spec);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double delta = delta_max(spec);
  auto bases = dom.sample_boundary(pairs, seed + 5);
  std::vector<std::array<double, kMaxDim>> zetas, zs;
  zetas.reserve(bases.size());
  zs.reserve(bases.size());
  for (auto& b : bases) {
    std::array<double, kMaxDim> nu{};
    outward_normal(spec, b.data(), nu.data());
    double t = (uni(rng) - 0.5) * delta;  // collar: both sides of the boundary
    std::array<double, kMaxDim> zeta = b;
    for (int k = 0; k < m; ++k) zeta[k] += t * nu[k];
    auto u = random_unit(rng, m);
    double r = (0.05 + 0.95 * uni(rng)) * eps_pair;
    std::array<double, kMaxDim> z = zeta;
    for (int k = 0; k < m; ++k) z[k] -= r * u[k];
    zetas.push_back(zeta);
    zs.push_back(z);
  }
  return levi_margins(spec, zetas, zs, eps_pair);
}

LeviBoundReport levi_radial_sweep(const DomainSpec& spec, int rays, std::uint64_t seed) {
  Domain dom(spec);
  const int m = dom.rdim();
  std::mt19937_64 rng(seed);
  const double dgrid[] = {0.02, 0.05, 0.1, 0.15};
  const double sgrid[] = {0.005, 0.02, 0.05, 0.08};
  std::vector<std::array<double, kMaxDim>> zetas, zs;
  double worst_sep = 0.0;
  for (int r = 0; r < rays; ++r) {
    auto dir = random_unit(rng, m);
    double rb = dom.ray_rho0_crossing(std::array<double, kMaxDim>{}.data(), dir.data(), 0.0);
    std::array<double, kMaxDim> zeta0{};
    for (int k = 0; k < m; ++k) zeta0[k] = rb * dir[k];
    for (double d : dgrid)
      for (double s : sgrid) {
        std::array<double, kMaxDim> z{}, zeta{};
        for (int k = 0; k < m; ++k) {
          z[k] = (1.0 - d) * zeta0[k];
          zeta[k] = (1.0 + s) * zeta0[k];
        }
        zs.push_back(z);
        zetas.push_back(zeta);
        worst_sep = std::max(worst_sep, (d + s) * rb);
      }
  }
  return levi_margins(spec, zetas, zs, worst_sep);
}

LerayGrowthReport check_regularized_growth(const LerayMap& map,
                                           const std::vector<double>& dists,
                                           int base_samples, int dir_probes,
                                           std::uint64_t seed,
                                           const std::vector<std::array<double, kMaxDim>>& z_list) {
  Domain dom(map.spec);
  const int n = map.spec.n;
  const int m = 2 * n;
  std::vector<std::array<double, kMaxDim>> zs = z_list;
  if (zs.empty()) zs.push_back({});  // origin (interior for all model domains)
  auto bases = dom.sample_boundary(base_samples, seed + 3);

  LerayGrowthReport rep;
  std::vector<double> xs, y1, y2, y3;
  for (double d : dists) {
    LerayGrowthRow row;
    row.dist = d;
    std::mt19937_64 rng(seed + std::uint64_t(1e6 * d));
    for (const auto& b : bases) {
      std::array<double, kMaxDim> nu{}, zeta{};
      outward_normal(map.spec, b.data(), nu.data());
      for (int k = 0; k < m; ++k) zeta[k] = b[k] + d * nu[k];
      for (int p = 0; p < dir_probes; ++p) {
        auto u = random_unit(rng, m);
        std::array<D3, 2 * kMaxN> Z{}, T{};
        for (int i = 0; i < m; ++i) {
          T[i] = D3(D2(D1(zeta[i], u[i]), D1(u[i])), D2(D1(u[i])));
        }
        for (const auto& zp : zs) {
          for (int i = 0; i < m; ++i) Z[i] = D3(D2(D1(zp[i])));
          std::array<complex_of_t<D3>, kMaxN> g{};
          map.eval_g(Z.data(), T.data(), g.data());
          double s1 = 0.0, s2 = 0.0, s3 = 0.0;
          for (int j = 0; j < n; ++j) {
            s1 += std::norm(g[j].d.v.v);
            s2 += std::norm(g[j].d.d.v);
            s3 += std::norm(g[j].d.d.d);
          }
          row.sup1 = std::max(row.sup1, std::sqrt(s1));
          row.sup2 = std::max(row.sup2, std::sqrt(s2));
          row.sup3 = std::max(row.sup3, std::sqrt(s3));
        }
      }
    }
    rep.rows.push_back(row);
    xs.push_back(d);
    y1.push_back(row.sup1);
    y2.push_back(row.sup2);
    y3.push_back(row.sup3);
  }
  rep.slope1 = safe_loglog_slope(xs, y1);
  rep.slope2 = safe_loglog_slope(xs, y2);
  rep.slope3 = safe_loglog_slope(xs, y3);
  return rep;
}

}  // namespace dbarlab
