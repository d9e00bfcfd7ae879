#include "dbarlab/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

namespace dbarlab {

std::string domain_kind_name(DomainKind k) {
  switch (k) {
    case DomainKind::UnitBall: return "unit-ball";
    case DomainKind::Ellipsoid: return "ellipsoid";
    case DomainKind::GraphPerturbation: return "graph-perturbation";
  }
  return "?";
}

DomainKind domain_kind_from_name(const std::string& s) {
  if (s == "unit-ball") return DomainKind::UnitBall;
  if (s == "ellipsoid") return DomainKind::Ellipsoid;
  if (s == "graph-perturbation") return DomainKind::GraphPerturbation;
  throw std::invalid_argument("unknown domain kind: " + s);
}

void validate_domain(const DomainSpec& spec) {
  if (spec.n < 1 || spec.n > kMaxN) throw std::invalid_argument("domain: n out of range");
  if (!(spec.L0 > 0.0)) throw std::invalid_argument("domain: L0 must be positive");
  switch (spec.kind) {
    case DomainKind::UnitBall:
      break;
    case DomainKind::Ellipsoid:
      if (int(spec.params.size()) != spec.n)
        throw std::invalid_argument("ellipsoid: need n semi-axes");
      for (double a : spec.params)
        if (!(a > 0.0)) throw std::invalid_argument("ellipsoid: semi-axes must be positive");
      break;
    case DomainKind::GraphPerturbation:
      if (spec.params.size() != 2)
        throw std::invalid_argument("graph-perturbation: need {eps, omega}");
      if (std::abs(spec.params[0]) >= 0.2)
        throw std::invalid_argument("graph-perturbation: |eps| too large");
      break;
  }
}

double min_semi_axis(const DomainSpec& spec) {
  switch (spec.kind) {
    case DomainKind::UnitBall: return 1.0;
    case DomainKind::Ellipsoid: return *std::min_element(spec.params.begin(), spec.params.end());
    case DomainKind::GraphPerturbation: return 1.0 - std::abs(spec.params.at(0)) * 2.0;
  }
  return 1.0;
}

EvalDefining eval_defining(const DomainSpec& spec, const cdouble* z) {
  validate_domain(spec);
  for (int j = 0; j < spec.n; ++j)
    if (!std::isfinite(z[j].real()) || !std::isfinite(z[j].imag()))
      throw std::domain_error("eval_defining: non-finite input");
  EvalDefining out;
  out.rho = rho0_eval(spec, z).real();
  out.drho.resize(spec.n);
  out.levi.resize(spec.n * spec.n);
  rho0_grad(spec, z, out.drho.data());
  rho0_levi(spec, z, out.levi.data());
  return out;
}

// ------------------------------------------------------------------ Domain

Domain::Domain(DomainSpec spec) : spec_(std::move(spec)), warn_count_(new std::size_t(0)) {
  validate_domain(spec_);
}

std::size_t Domain::fallback_warnings() const { return *warn_count_; }

namespace {

double norm2(const double* x, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

// real gradient of rho0 via complex gradient: (dx_j, dy_j) = (2 Re g_j, -2 Im g_j)
void rho0_real_grad(const DomainSpec& spec, const double* x, double* g) {
  std::array<cdouble, kMaxN> z{}, gz{};
  lift_complex(spec.n, x, z.data());
  rho0_grad(spec, z.data(), gz.data());
  for (int j = 0; j < spec.n; ++j) {
    g[2 * j] = 2.0 * gz[j].real();
    g[2 * j + 1] = -2.0 * gz[j].imag();
  }
}

void rho0_real_hess(const DomainSpec& spec, const double* x, Eigen::MatrixXd& H) {
  const int d = 2 * spec.n;
  H.resize(d, d);
  using D2 = Dual<Dual<double>>;
  std::array<D2, kMaxDim> xs{};
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      for (int k = 0; k < d; ++k) xs[k] = D2(Dual<double>(x[k]));
      xs[i].v.d += 1.0;
      xs[j].d = xs[j].d + Dual<double>(1.0);
      D2 r = rho0_eval_real(spec, xs.data());
      H(i, j) = H(j, i) = r.d.d;
    }
}

}  // namespace

double Domain::signed_distance(const double* x) const {
  const int d = rdim();
  switch (spec_.kind) {
    case DomainKind::UnitBall:
      return norm2(x, d) - 1.0;
    case DomainKind::Ellipsoid: {
      std::array<double, kMaxDim> f{};
      boundary_foot(x, f.data());
      double dist = 0.0;
      for (int i = 0; i < d; ++i) dist += (x[i] - f[i]) * (x[i] - f[i]);
      dist = std::sqrt(dist);
      return rho0(x) < 0.0 ? -dist : dist;
    }
    case DomainKind::GraphPerturbation: {
      std::array<double, kMaxDim> f{};
      boundary_foot(x, f.data());
      double dist = 0.0;
      for (int i = 0; i < d; ++i) dist += (x[i] - f[i]) * (x[i] - f[i]);
      dist = std::sqrt(dist);
      return rho0(x) < 0.0 ? -dist : dist;
    }
  }
  throw std::logic_error("signed_distance: bad kind");
}

void Domain::boundary_foot(const double* x, double* f) const {
  const int d = rdim();
  switch (spec_.kind) {
    case DomainKind::UnitBall: {
      double r = norm2(x, d);
      if (r < 1e-14) {
        for (int i = 0; i < d; ++i) f[i] = 0.0;
        f[0] = 1.0;
        return;
      }
      for (int i = 0; i < d; ++i) f[i] = x[i] / r;
      return;
    }
    case DomainKind::Ellipsoid: {
      std::array<double, kMaxDim> w{};
      for (int j = 0; j < spec_.n; ++j)
        w[2 * j] = w[2 * j + 1] = 1.0 / (spec_.params[j] * spec_.params[j]);
      double r = norm2(x, d);
      if (r < 1e-14) {  // degenerate center: nearest point lies on the shortest axis
        int jm = 0;
        for (int j = 1; j < spec_.n; ++j)
          if (spec_.params[j] < spec_.params[jm]) jm = j;
        for (int i = 0; i < d; ++i) f[i] = 0.0;
        f[2 * jm] = spec_.params[jm];
        return;
      }
      // Lagrange normal equation: y_i = x_i/(1+lam w_i), sum w_i y_i^2 = 1
      double wmax = *std::max_element(w.begin(), w.begin() + d);
      double lo = -1.0 / wmax + 1e-12, hi = 1.0;
      auto g = [&](double lam) {
        double s = -1.0;
        for (int i = 0; i < d; ++i) {
          double t = x[i] / (1.0 + lam * w[i]);
          s += w[i] * t * t;
        }
        return s;
      };
      if (g(lo) <= 0.0) {
        // degenerate branch: x vanishes on every max-weight axis and lies
        // inside the evolute; the foot sits off those axes at lam = -1/wmax
        double acc = 1.0;
        for (int i = 0; i < d; ++i) {
          if (w[i] == wmax) {
            f[i] = 0.0;
          } else {
            f[i] = x[i] / (1.0 - w[i] / wmax);
            acc -= w[i] * f[i] * f[i];
          }
        }
        int k0 = int(std::max_element(w.begin(), w.begin() + d) - w.begin());
        f[k0] = std::sqrt(std::max(acc, 0.0) / wmax);
        return;
      }
      while (g(hi) > 0.0) hi *= 2.0;
      double lam = 0.5 * (lo + hi);
      for (int it = 0; it < 200; ++it) {
        double gv = g(lam);
        if (std::abs(gv) < 1e-14) break;
        double dg = 0.0;  // g'(lam)
        for (int i = 0; i < d; ++i) {
          double den = 1.0 + lam * w[i];
          dg += -2.0 * w[i] * w[i] * x[i] * x[i] / (den * den * den);
        }
        double step = gv / dg;
        double nl = lam - step;
        if (gv > 0.0) lo = lam; else hi = lam;
        if (!(nl > lo && nl < hi)) nl = 0.5 * (lo + hi);  // bisection fallback
        if (std::abs(nl - lam) < 1e-15 * (1.0 + std::abs(lam))) { lam = nl; break; }
        lam = nl;
      }
      for (int i = 0; i < d; ++i) f[i] = x[i] / (1.0 + lam * w[i]);
      return;
    }
    case DomainKind::GraphPerturbation: {
      // KKT Newton: y - x + lam*grad(y) = 0, rho0(y) = 0
      const int m = d + 1;
      Eigen::VectorXd u(m);
      std::array<double, kMaxDim> y0{};
      double r = norm2(x, d);
      if (r < 1e-12) {
        std::array<double, kMaxDim> dir{};
        dir[0] = 1.0;
        double rb = ray_level_crossing(y0.data(), dir.data(), 0.0);
        for (int i = 0; i < d; ++i) f[i] = rb * dir[i];
        return;
      }
      {
        std::array<double, kMaxDim> dir{}, origin{};
        for (int i = 0; i < d; ++i) dir[i] = x[i] / r;
        double rb = ray_level_crossing(origin.data(), dir.data(), 0.0);
        for (int i = 0; i < d; ++i) u(i) = rb * dir[i];
      }
      {
        std::array<double, kMaxDim> y{}, g{};
        for (int i = 0; i < d; ++i) y[i] = u(i);
        rho0_real_grad(spec_, y.data(), g.data());
        double gg = 0.0, xg = 0.0;
        for (int i = 0; i < d; ++i) {
          gg += g[i] * g[i];
          xg += (x[i] - y[i]) * g[i];
        }
        u(d) = xg / gg;
      }
      bool ok = false;
      Eigen::MatrixXd H;
      for (int it = 0; it < 60; ++it) {
        std::array<double, kMaxDim> y{}, g{};
        for (int i = 0; i < d; ++i) y[i] = u(i);
        rho0_real_grad(spec_, y.data(), g.data());
        double rho = rho0(y.data());
        Eigen::VectorXd R(m);
        for (int i = 0; i < d; ++i) R(i) = y[i] - x[i] + u(d) * g[i];
        R(d) = rho;
        if (R.norm() < 1e-12) { ok = true; break; }
        rho0_real_hess(spec_, y.data(), H);
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
        J.topLeftCorner(d, d) = Eigen::MatrixXd::Identity(d, d) + u(d) * H;
        for (int i = 0; i < d; ++i) {
          J(i, d) = g[i];
          J(d, i) = g[i];
        }
        Eigen::VectorXd step = J.fullPivLu().solve(R);
        double sn = step.norm();
        if (sn > 0.3) step *= 0.3 / sn;
        u -= step;
      }
      if (!ok) {
        // sampled minimization fallback over boundary rays, then polish once
        ++*warn_count_;
        std::mt19937_64 rng(99991);
        std::normal_distribution<double> nd;
        double best = 1e300;
        std::array<double, kMaxDim> ybest{}, origin{};
        for (int s = 0; s < 512; ++s) {
          std::array<double, kMaxDim> dir{};
          double nn = 0.0;
          for (int i = 0; i < d; ++i) {
            dir[i] = nd(rng);
            nn += dir[i] * dir[i];
          }
          nn = std::sqrt(nn);
          for (int i = 0; i < d; ++i) dir[i] /= nn;
          double rb = ray_level_crossing(origin.data(), dir.data(), 0.0);
          double dist = 0.0;
          for (int i = 0; i < d; ++i) {
            double t = x[i] - rb * dir[i];
            dist += t * t;
          }
          if (dist < best) {
            best = dist;
            for (int i = 0; i < d; ++i) ybest[i] = rb * dir[i];
          }
        }
        for (int i = 0; i < d; ++i) u(i) = ybest[i];
      }
      for (int i = 0; i < d; ++i) f[i] = u(i);
      return;
    }
  }
  throw std::logic_error("boundary_foot: bad kind");
}

RegionInfo Domain::distance_and_region(const double* x, double delta) const {
  if (!(delta > 0.0) || delta > delta_cap() + 1e-12)
    throw std::invalid_argument("distance_and_region: delta outside (0, delta_max]");
  RegionInfo r;
  r.signed_d = signed_distance(x);
  r.d = std::abs(r.signed_d);
  r.inside_D = r.signed_d < 0.0;
  r.on_boundary = r.d < 1e-9;
  r.in_outer = r.signed_d < delta;
  r.in_inner = r.signed_d < -delta;
  r.in_shell = r.signed_d > 0.0 && r.signed_d < delta;
  return r;
}

double Domain::ray_level_crossing(const double* x0, const double* dir, double level,
                                  double r_hint) const {
  const int d = rdim();
  // the zero level set of the distance is exactly {rho0 = 0}
  if (level == 0.0 && spec_.kind == DomainKind::GraphPerturbation)
    return ray_rho0_crossing(x0, dir, 0.0, r_hint);
  // quadric fast path for the zero level set of ball/ellipsoid
  if (level == 0.0 &&
      (spec_.kind == DomainKind::UnitBall || spec_.kind == DomainKind::Ellipsoid)) {
    std::array<double, kMaxDim> w{};
    for (int j = 0; j < spec_.n; ++j) {
      double c = spec_.kind == DomainKind::UnitBall
                     ? 1.0
                     : 1.0 / (spec_.params[j] * spec_.params[j]);
      w[2 * j] = w[2 * j + 1] = c;
    }
    double A = 0.0, B = 0.0, C = -1.0;
    for (int i = 0; i < d; ++i) {
      A += w[i] * dir[i] * dir[i];
      B += 2.0 * w[i] * x0[i] * dir[i];
      C += w[i] * x0[i] * x0[i];
    }
    double disc = B * B - 4.0 * A * C;
    if (disc < 0.0) throw std::runtime_error("ray_level_crossing: ray misses boundary");
    double s = std::sqrt(disc);
    double r1 = (-B - s) / (2.0 * A), r2 = (-B + s) / (2.0 * A);
    if (r1 > 0.0) return r1;
    if (r2 > 0.0) return r2;
    throw std::runtime_error("ray_level_crossing: no positive root");
  }
  auto h = [&](double r) {
    std::array<double, kMaxDim> p{};
    for (int i = 0; i < d; ++i) p[i] = x0[i] + r * dir[i];
    return signed_distance(p.data()) - level;
  };
  double lo = 0.0;
  double hlo = h(lo);
  if (hlo >= 0.0) throw std::runtime_error("ray_level_crossing: start not below level");
  double hi = r_hint;
  int guard = 0;
  while (h(hi) < 0.0) {
    hi *= 1.5;
    if (++guard > 64) throw std::runtime_error("ray_level_crossing: no bracket");
  }
  for (int it = 0; it < 90 && (hi - lo) > 1e-13 * (1.0 + hi); ++it) {
    double mid = 0.5 * (lo + hi);
    if (h(mid) < 0.0) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double Domain::ray_rho0_crossing(const double* x0, const double* dir, double c,
                                 double r_hint) const {
  const int d = rdim();
  if (c == 0.0 &&
      (spec_.kind == DomainKind::UnitBall || spec_.kind == DomainKind::Ellipsoid))
    return ray_level_crossing(x0, dir, 0.0, r_hint);
  auto f = [&](double r) {
    std::array<Dual<double>, kMaxDim> p{};
    for (int i = 0; i < d; ++i) p[i] = Dual<double>(x0[i] + r * dir[i], dir[i]);
    return rho0_eval_real(spec_, p.data());
  };
  double lo = 0.0;
  if (f(lo).v - c >= 0.0) throw std::runtime_error("ray_rho0_crossing: start not below level");
  double hi = r_hint;
  int guard = 0;
  while (f(hi).v - c < 0.0) {
    hi *= 1.5;
    if (++guard > 64) throw std::runtime_error("ray_rho0_crossing: no bracket");
  }
  double r = 0.5 * (lo + hi);
  for (int it = 0; it < 100; ++it) {
    Dual<double> fv = f(r);
    double g = fv.v - c;
    if (std::abs(g) < 1e-14) break;
    if (g < 0.0) lo = r; else hi = r;
    double nr = r - g / fv.d;
    if (!(nr > lo && nr < hi)) nr = 0.5 * (lo + hi);
    if (std::abs(nr - r) < 1e-16 * (1.0 + std::abs(r))) { r = nr; break; }
    r = nr;
  }
  return r;
}

std::vector<std::array<double, kMaxDim>> Domain::sample_boundary(int count,
                                                                 std::uint64_t seed) const {
  const int d = rdim();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<std::array<double, kMaxDim>> out;
  out.reserve(count);
  std::array<double, kMaxDim> origin{};
  for (int s = 0; s < count; ++s) {
    std::array<double, kMaxDim> dir{};
    double nn = 0.0;
    for (int i = 0; i < d; ++i) {
      dir[i] = nd(rng);
      nn += dir[i] * dir[i];
    }
    nn = std::sqrt(nn);
    for (int i = 0; i < d; ++i) dir[i] /= nn;
    double rb = ray_level_crossing(origin.data(), dir.data(), 0.0);
    std::array<double, kMaxDim> p{};
    for (int i = 0; i < d; ++i) p[i] = rb * dir[i];
    out.push_back(p);
  }
  return out;
}

double Domain::min_grad_rho0_boundary(int samples, std::uint64_t seed) const {
  double mn = 1e300;
  for (const auto& p : sample_boundary(samples, seed)) {
    std::array<cdouble, kMaxN> z{}, g{};
    lift_complex(spec_.n, p.data(), z.data());
    rho0_grad(spec_, z.data(), g.data());
    double s = 0.0;
    for (int j = 0; j < spec_.n; ++j) s += std::norm(g[j]);
    mn = std::min(mn, std::sqrt(s));
  }
  return mn;
}

// ------------------------------------------------------- DefiningFunction

DefiningFunction::DefiningFunction(DomainSpec spec, RegularizeOptions opt)
    : dom_(std::move(spec)), opt_(opt) {
  const DomainSpec& sp = dom_.spec();
  const int n = sp.n, d = 2 * n;
  if (opt_.delta <= 0.0) opt_.delta = delta_max(sp);
  if (opt_.h > opt_.delta / 8.0) opt_.h = opt_.delta / 8.0;

  // Levi positivity audit of e^{L0 rho0}-1 on the boundary
  double c0 = 1e300;
  for (const auto& p : dom_.sample_boundary(opt_.boundary_check_samples, opt_.seed)) {
    std::array<cdouble, kMaxN> z{};
    lift_complex(n, p.data(), z.data());
    std::array<cdouble, kMaxN * kMaxN> L{};
    rho_an_levi(sp, z.data(), L.data());
    Eigen::MatrixXcd M(n, n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) M(j, k) = L[j * n + k];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(M);
    double ev = es.eigenvalues().minCoeff();
    if (ev <= 0.0)
      throw LeviPositivityError("regularize_defining: Levi form not positive at boundary point",
                                p, ev);
    c0 = std::min(c0, ev);
  }
  C0_ = c0;

  // Whitney extension of the analytic branch from closure(D)
  double R = 0.0;
  switch (sp.kind) {
    case DomainKind::UnitBall: R = 2.2; break;
    case DomainKind::Ellipsoid:
      R = 1.2 + *std::max_element(sp.params.begin(), sp.params.end());
      break;
    case DomainKind::GraphPerturbation: R = 2.4; break;
  }
  WhitneyParams wp;
  wp.dim = d;
  for (int i = 0; i < d; ++i) {
    wp.lo[i] = -R;
    wp.hi[i] = R;
  }
  wp.max_level = 48;
  wp.min_side = std::max(opt_.h / 256.0, 1e-8);

  Domain dom_copy = dom_;
  DistanceOracle oracle;
  oracle.dim = d;
  oracle.dist = [dom_copy](const double* x) {
    return std::max(dom_copy.signed_distance(x), 0.0);
  };
  oracle.foot = [dom_copy](const double* x, double* f) { dom_copy.boundary_foot(x, f); };

  DomainSpec sp_copy = sp;
  JetSource jets;
  jets.order = 2;
  jets.jet = [sp_copy, d](const double* p) {
    RealJet2 J;
    J.dim = d;
    J.order = 2;
    J.f = rho_an_real(sp_copy, p);
    using D1 = Dual<double>;
    using D2 = Dual<Dual<double>>;
    std::array<D1, kMaxDim> x1{};
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < d; ++k) x1[k] = D1(p[k]);
      x1[i].d = 1.0;
      J.g[i] = rho_an_real(sp_copy, x1.data()).d;
    }
    std::array<D2, kMaxDim> x2{};
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        for (int k = 0; k < d; ++k) x2[k] = D2(Dual<double>(p[k]));
        x2[i].v.d += 1.0;
        x2[j].d = x2[j].d + Dual<double>(1.0);
        double h = rho_an_real(sp_copy, x2.data()).d.d;
        J.H[i * d + j] = h;
        J.H[j * d + i] = h;
      }
    return J;
  };
  whit_ = std::make_unique<WhitneyField>(wp, std::move(oracle), std::move(jets));

  // modulus of continuity of the second derivatives: measured |d^3 rho| probe
  {
    auto pts = dom_.sample_boundary(8, opt_.seed + 1);
    double c3 = 0.0;
    using D3 = Dual<Dual<Dual<double>>>;
    for (const auto& p : pts) {
      std::array<double, kMaxDim> q{};
      std::array<double, kMaxDim> nrm{};
      double nn = 0.0;
      for (int i = 0; i < d; ++i) nn += p[i] * p[i];
      nn = std::sqrt(nn);
      for (int i = 0; i < d; ++i) nrm[i] = p[i] / nn;
      for (int i = 0; i < d; ++i) q[i] = p[i] + 0.1 * nrm[i];
      std::array<D3, kMaxDim> xs{};
      for (int a = 0; a < d; ++a) {
        for (int k = 0; k < d; ++k) xs[k] = D3(q[k]);
        xs[a].v.v.d += 1.0;
        xs[a].v.d.v += 1.0;
        xs[a].d.v.v += 1.0;
        D3 r = eval_real(xs.data());
        c3 = std::max(c3, std::abs(r.d.d.d));
      }
    }
    omega2_coeff_ = c3;
  }
}

double DefiningFunction::omega2(double sep) const { return omega2_coeff_ * sep; }

void DefiningFunction::grad_complex(const double* x, cdouble* g) const {
  const int n = dom_.n(), d = 2 * n;
  using D1 = Dual<double>;
  std::array<double, kMaxDim> der{};
  std::array<D1, kMaxDim> xs{};
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) xs[k] = D1(x[k]);
    xs[i].d = 1.0;
    der[i] = eval_real(xs.data()).d;
  }
  for (int j = 0; j < n; ++j)
    g[j] = 0.5 * cdouble(der[2 * j], -der[2 * j + 1]);
}

// ------------------------------------------------------------------ charts

namespace {

void unitary_frame(int n, const std::array<cdouble, kMaxN>& nu,
                   std::array<std::array<cdouble, kMaxN>, kMaxN>& frame) {
  // modified Gram-Schmidt with column pivoting, first column = nu
  std::vector<std::array<cdouble, kMaxN>> cols;
  cols.push_back(nu);
  std::vector<int> used;
  for (int slot = 1; slot < n; ++slot) {
    int best = -1;
    double bestres = -1.0;
    std::array<cdouble, kMaxN> bestv{};
    for (int j = 0; j < n; ++j) {
      if (std::find(used.begin(), used.end(), j) != used.end()) continue;
      std::array<cdouble, kMaxN> v{};
      v[j] = 1.0;
      for (const auto& c : cols) {
        cdouble ip = 0.0;
        for (int k = 0; k < n; ++k) ip += v[k] * std::conj(c[k]);
        for (int k = 0; k < n; ++k) v[k] -= ip * c[k];
      }
      double nn = 0.0;
      for (int k = 0; k < n; ++k) nn += std::norm(v[k]);
      if (nn > bestres) {
        bestres = nn;
        best = j;
        bestv = v;
      }
    }
    used.push_back(best);
    double nn = std::sqrt(bestres);
    for (int k = 0; k < n; ++k) bestv[k] /= nn;
    cols.push_back(bestv);
  }
  for (int j = 0; j < n; ++j) frame[j] = cols[j];
}

}  // namespace

std::vector<BoundaryChart> build_charts(const Domain& dom, int points_per_circle,
                                        double radius_factor) {
  const int n = dom.n(), d = dom.rdim();
  const DomainSpec& sp = dom.spec();
  int count = points_per_circle;
  for (int k = 1; k < 2 * n - 1; ++k) count *= 2;  // ppc * 2^(2n-2)
  auto bases = dom.sample_boundary(count, /*seed=*/1234577);

  // coverage radius: max over dense samples of distance to nearest base
  auto cover = dom.sample_boundary(2048, /*seed=*/424243);
  double rad = 0.0;
  for (const auto& c : cover) {
    double mn = 1e300;
    for (const auto& b : bases) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += (c[i] - b[i]) * (c[i] - b[i]);
      mn = std::min(mn, s);
    }
    rad = std::max(rad, std::sqrt(mn));
  }
  rad *= radius_factor;

  std::vector<BoundaryChart> charts;
  charts.reserve(bases.size());
  for (const auto& b : bases) {
    BoundaryChart ch;
    ch.base = b;
    ch.radius = rad;
    std::array<cdouble, kMaxN> z{}, g{};
    lift_complex(n, b.data(), z.data());
    rho0_grad(sp, z.data(), g.data());
    double gn = 0.0;
    for (int j = 0; j < n; ++j) gn += std::norm(g[j]);
    gn = std::sqrt(gn);
    for (int j = 0; j < n; ++j) ch.nu[j] = std::conj(g[j]) / gn;
    unitary_frame(n, ch.nu, ch.frame);

    // Jacobian of Psi = (s1, s2, t) at the base point
    std::array<cdouble, kMaxN> a{};
    rho_an_grad(sp, z.data(), a.data());
    Eigen::MatrixXd Jm(d, d);
    for (int k = 0; k < n; ++k) {
      Jm(0, 2 * k) = 2.0 * a[k].real();
      Jm(0, 2 * k + 1) = -2.0 * a[k].imag();
      Jm(1, 2 * k) = a[k].imag();
      Jm(1, 2 * k + 1) = a[k].real();
    }
    for (int m = 1; m < n; ++m) {
      const auto& e = ch.frame[m];
      for (int k = 0; k < n; ++k) {
        cdouble du_dx = std::conj(e[k]);
        cdouble du_dy = cdouble(0, 1) * std::conj(e[k]);
        Jm(2 * m, 2 * k) = du_dx.real();
        Jm(2 * m, 2 * k + 1) = du_dy.real();
        Jm(2 * m + 1, 2 * k) = du_dx.imag();
        Jm(2 * m + 1, 2 * k + 1) = du_dy.imag();
      }
    }
    ch.jac_det = std::abs(Jm.determinant());
    charts.push_back(ch);
  }
  return charts;
}

bool chart_contains(const BoundaryChart& ch, const double* zeta, int rdim) {
  double s = 0.0;
  for (int i = 0; i < rdim; ++i) s += (zeta[i] - ch.base[i]) * (zeta[i] - ch.base[i]);
  return std::sqrt(s) < ch.radius;
}

ChartCoords chart_coords(const DomainSpec& spec, const BoundaryChart& ch,
                         const double* zeta, const double* z) {
  const int n = spec.n;
  ChartCoords out;
  std::array<cdouble, kMaxN> zc{}, zec{}, bc{}, a{};
  lift_complex(n, z, zc.data());
  lift_complex(n, zeta, zec.data());
  lift_complex(n, ch.base.data(), bc.data());
  out.s1 = rho_an(spec, zec.data()).real();
  rho_an_grad(spec, bc.data(), a.data());
  cdouble acc = 0.0;
  for (int j = 0; j < n; ++j) acc += a[j] * (zec[j] - zc[j]);
  out.s2 = acc.imag();
  double tn = 0.0;
  for (int m = 1; m < n; ++m) {
    cdouble u = 0.0;
    for (int k = 0; k < n; ++k) u += (zec[k] - bc[k]) * std::conj(ch.frame[m][k]);
    out.t[2 * (m - 1)] = u.real();
    out.t[2 * (m - 1) + 1] = u.imag();
    tn += std::norm(u);
  }
  out.tnorm = std::sqrt(tn);
  return out;
}

ChartBoundReport chart_bound_report(const Domain& dom, const std::vector<BoundaryChart>& charts,
                                    const PhiFn& phi, const double* z, double delta,
                                    std::size_t samples_per_chart, std::uint64_t seed,
                                    bool keep_rows) {
  const int n = dom.n(), d = dom.rdim();
  ChartBoundReport rep;
  rep.c_star = 1e300;
  rep.c_star_plus = 1e300;
  rep.c_sep = 1e300;
  double dz = std::abs(dom.signed_distance(z));
  std::array<cdouble, kMaxN> zc{};
  lift_complex(n, z, zc.data());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (std::size_t ci = 0; ci < charts.size(); ++ci) {
    const auto& ch = charts[ci];
    std::size_t accepted = 0, guard = 0;
    while (accepted < samples_per_chart && guard < 400 * samples_per_chart) {
      ++guard;
      std::array<double, kMaxDim> zeta{};
      double s = 0.0;
      for (int i = 0; i < d; ++i) {
        zeta[i] = ud(rng);
        s += zeta[i] * zeta[i];
      }
      if (s > 1.0) continue;
      for (int i = 0; i < d; ++i) zeta[i] = ch.base[i] + ch.radius * zeta[i];
      double sd = dom.signed_distance(zeta.data());
      if (!(sd > 1e-12 && sd < delta)) continue;
      ++accepted;
      std::array<cdouble, kMaxN> zec{};
      lift_complex(n, zeta.data(), zec.data());
      cdouble ph = phi(zc.data(), zec.data());
      ChartCoords cc = chart_coords(dom.spec(), ch, zeta.data(), z);
      double denom = dz + std::max(cc.s1, 0.0) + std::abs(cc.s2) + cc.tnorm * cc.tnorm;
      double wz = 0.0;
      for (int j = 0; j < n; ++j) wz += std::norm(zec[j] - zc[j]);
      double dist_zz = std::sqrt(wz);
      double st = std::sqrt(cc.s2 * cc.s2 + cc.tnorm * cc.tnorm);
      double ratio = std::abs(ph) / denom;
      if (ratio < rep.c_star) {
        rep.c_star = ratio;
        rep.worst_chart = int(ci);
        rep.worst_zeta = zeta;
        std::copy(z, z + d, rep.worst_z.begin());
      }
      rep.c_star_plus = std::min(rep.c_star_plus, std::abs(ph) / (wz));
      if (st > 1e-12) rep.c_sep = std::min(rep.c_sep, dist_zz / st);
      if (keep_rows)
        rep.rows.push_back({int(ci), cc.s1, cc.s2, cc.tnorm, std::abs(ph), ratio});
      ++rep.samples;
    }
  }
  return rep;
}

}  // namespace dbarlab
