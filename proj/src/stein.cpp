#include "dbarlab/stein.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "dbarlab/gauss.hpp"

namespace dbarlab {

namespace {
// oscillatory base: Im(c0 exp(-omega (lambda-1)^{1/4})) / lambda with
// omega = 1 - i and c0 = 1, i.e. e^{-u} sin(u)/lambda at u = (lambda-1)^{1/4}
double psi_base(double lambda) {
  if (lambda <= 1.0) return 0.0;
  double u = std::pow(lambda - 1.0, 0.25);
  return std::exp(-u) * std::sin(u) / lambda;
}
}  // namespace

double MomentKernel::psi(double lambda) const {
  if (lambda <= 1.0 || lambda >= Lambda) return 0.0;
  // multiplier stored in the shifted variable tau = (2 lambda - (1+Lambda))/(Lambda-1)
  double tau = (2.0 * lambda - (1.0 + Lambda)) / (Lambda - 1.0);
  double p = 0.0;
  for (int j = K; j >= 0; --j) p = p * tau + poly[j];
  return psi_base(lambda) * p;
}

MomentKernel build_moment_kernel(int K, double Lambda, int nquad) {
  if (K < 0 || K > 7) throw std::invalid_argument("moment kernel: K out of range");
  MomentKernel mk;
  mk.K = K;
  mk.Lambda = Lambda;
  // substitution lambda = 1 + u^4 removes the fractional-power endpoint
  double U = std::pow(Lambda - 1.0, 0.25);
  GaussRule g = gauss_legendre(nquad, 0.0, U);

  // Moment conditions int psi lambda^k = delta_{k0} are equivalent to
  // int psi q(lambda) = q(0) for all polynomials of degree <= K; solving in
  // the shifted variable tau in [-1,1] keeps the system well conditioned.
  auto tau_of = [&](double lam) { return (2.0 * lam - (1.0 + Lambda)) / (Lambda - 1.0); };
  const double tau0 = tau_of(0.0);
  const int m = K + 1;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m, m);
  for (int l = 0; l < nquad; ++l) {
    double u = g.x[l];
    double lam = 1.0 + u * u * u * u;
    double base = std::exp(-u) * std::sin(u) / lam;
    double jac = 4.0 * u * u * u;
    double tau = tau_of(lam);
    double tk = 1.0;
    for (int k = 0; k < m; ++k) {
      double tj = 1.0;
      for (int j = 0; j < m; ++j) {
        M(k, j) += g.w[l] * tk * base * tj * jac;
        tj *= tau;
      }
      tk *= tau;
    }
  }
  Eigen::VectorXd rhs(m);
  double t0k = 1.0;
  for (int k = 0; k < m; ++k) {
    rhs(k) = t0k;
    t0k *= tau0;
  }
  Eigen::VectorXd a = M.fullPivLu().solve(rhs);

  mk.poly.fill(0.0);
  for (int j = 0; j < m; ++j) mk.poly[j] = a(j);
  mk.nodes.resize(nquad);
  mk.weights.resize(nquad);
  for (int l = 0; l < nquad; ++l) {
    double u = g.x[l];
    double lam = 1.0 + u * u * u * u;
    mk.nodes[l] = lam;
    double tau = tau_of(lam);
    double p = 0.0;
    for (int j = K; j >= 0; --j) p = p * tau + mk.poly[j];
    mk.weights[l] = g.w[l] * 4.0 * u * u * u * psi_base(lam) * p;
  }
  for (int k = 0; k <= K; ++k) {
    double target = k == 0 ? 1.0 : 0.0;
    if (std::abs(mk.moment(k) - target) > 1e-10)
      throw std::runtime_error("moment kernel: projection failed");
  }
  return mk;
}

SteinPath::SteinPath(DomainSpec spec, const MomentKernel& mk, double safety)
    : spec_(std::move(spec)) {
  validate_domain(spec_);
  Domain dom(spec_);
  const int d = 2 * spec_.n;
  double amin = min_semi_axis(spec_);
  cap_ = amin;

  // measure Delta/d equivalence constants on the collar
  auto bpts = dom.sample_boundary(128, /*seed=*/5150);
  double c1 = 1e300, c2 = 0.0;
  for (const auto& b : bpts) {
    std::array<double, kMaxDim> nu{};
    direction(b.data(), nu.data());
    for (double frac : {0.05, 0.1, 0.25, 0.5, 0.75, 1.0}) {
      double dd = frac * delta_max(spec_);
      std::array<double, kMaxDim> x{};
      for (int i = 0; i < d; ++i) x[i] = b[i] + dd * nu[i];
      double sd = dom.signed_distance(x.data());
      if (sd <= 0.0) continue;
      double ratio = delta_reg(x.data()) / sd;
      c1 = std::min(c1, ratio);
      c2 = std::max(c2, ratio);
    }
  }
  c1_ = c1;
  c2_ = c2;
  c_ = safety / c1;
  delta_used_ = std::min(delta_max(spec_), 1.5 * amin / (c_ * mk.Lambda * c2));

  // path-inside audit over the certified collar
  for (const auto& b : bpts) {
    std::array<double, kMaxDim> nu{};
    direction(b.data(), nu.data());
    for (double frac : {0.1, 0.25, 0.5, 0.75, 1.0}) {
      double dd = frac * delta_used_;
      std::array<double, kMaxDim> x{};
      for (int i = 0; i < d; ++i) x[i] = b[i] + dd * nu[i];
      if (dom.signed_distance(x.data()) <= 0.0) continue;
      double delta = delta_reg(x.data());
      std::array<double, kMaxDim> nux{};
      direction(x.data(), nux.data());
      for (double lam : mk.nodes) {
        std::array<double, kMaxDim> p{};
        for (int i = 0; i < d; ++i) p[i] = x[i] - c_ * lam * delta * nux[i];
        if (rho0_eval_real(spec_, p.data()) > 1e-10)
          throw std::runtime_error("stein path leaves the domain; reduce safety or delta");
      }
    }
  }
}

}  // namespace dbarlab
