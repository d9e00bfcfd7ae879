#ifndef DBARLAB_STEIN_HPP
#define DBARLAB_STEIN_HPP

/* Stein-type extension across the boundary:
       E f(x) = int_1^Lambda f(p(x,lambda)) psi(lambda) dlambda ,
   with p(x,lambda) = x - c*lambda*Delta(x)*nu(x) affine in lambda, Delta a
   regularized (analytic, dual-evaluable) signed distance and nu the unit
   outward direction.  psi is supported on [1,Lambda] with
       int psi = 1,   int lambda^k psi = 0   (k = 1..K),
   built from the oscillatory base Im(c0 * exp(-omega*(lambda-1)^{1/4}))/lambda
   times a degree-K polynomial multiplier whose coefficients solve the moment
   system exactly on the truncated interval.  Vanishing moments make E
   reproduce polynomials of degree <= K near the boundary and give the
   C^r-boundedness of the extension; the path audit at construction certifies
   p(x,lambda) stays in the closed domain for collar points. */

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dbarlab/geometry.hpp"

namespace dbarlab {

struct MomentKernel {
  int K = 4;
  double Lambda = 4.0;
  std::vector<double> nodes;    // lambda_l
  std::vector<double> weights;  // W_l (psi and substitution jacobian folded in)
  std::array<double, 8> poly{}; // multiplier coefficients (degree K)

  double psi(double lambda) const;  // the projected kernel itself
  double moment(int k) const {      // sum_l W_l lambda_l^k
    double s = 0.0;
    for (std::size_t l = 0; l < nodes.size(); ++l) {
      double p = 1.0;
      for (int j = 0; j < k; ++j) p *= nodes[l];
      s += weights[l] * p;
    }
    return s;
  }
};

MomentKernel build_moment_kernel(int K = 4, double Lambda = 4.0, int nquad = 48);

class SteinPath {
 public:
  SteinPath(DomainSpec spec, const MomentKernel& mk, double safety = 2.0);

  const DomainSpec& spec() const { return spec_; }
  double c() const { return c_; }
  double delta_used() const { return delta_used_; }  // collar depth certified
  double c1() const { return c1_; }                  // min Delta/d on the collar
  double c2() const { return c2_; }                  // max Delta/d on the collar

  // regularized signed distance Delta(x) = G/|grad G| with a smooth cap
  template <class S>
  S delta_reg(const S* x) const {
    const int n = spec_.n;
    S g = S(0.0), gg = S(0.0);
    if (spec_.kind == DomainKind::GraphPerturbation) {
      using C = complex_of_t<S>;
      std::array<C, kMaxN> z{}, gz{};
      lift_complex(n, x, z.data());
      g = real_of(rho0_eval(spec_, z.data()));
      rho0_grad(spec_, z.data(), gz.data());
      for (int j = 0; j < n; ++j) {
        S gx = 2.0 * real_of(gz[j]), gy = -2.0 * imag_of(gz[j]);
        gg = gg + gx * gx + gy * gy;
      }
    } else {
      // G = |T x| - 1 with T = diag(1/a_j)
      S u2 = S(0.0);
      for (int j = 0; j < n; ++j) {
        double w = spec_.kind == DomainKind::UnitBall
                       ? 1.0
                       : 1.0 / (spec_.params[j] * spec_.params[j]);
        u2 = u2 + w * (x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1]);
        gg = gg + (w * w) * (x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1]);
      }
      S u = sqrt_s(u2);
      g = u - 1.0;
      gg = gg / u2;
    }
    S d = g / sqrt_s(gg);
    // smooth cap at cap_: d * cap/(d+cap) for large d, identity near 0
    double cap = cap_;
    double dg = ground_real(d);
    if (dg <= 0.0) return d;
    return d * (cap / (d + cap));
  }

  // unit outward direction nu = grad(rho0)/|grad(rho0)| in real coordinates
  template <class S>
  void direction(const S* x, S* nu) const {
    const int n = spec_.n;
    using C = complex_of_t<S>;
    std::array<C, kMaxN> z{}, gz{};
    lift_complex(n, x, z.data());
    rho0_grad(spec_, z.data(), gz.data());
    S nn = S(0.0);
    for (int j = 0; j < n; ++j) {
      nu[2 * j] = 2.0 * real_of(gz[j]);
      nu[2 * j + 1] = -2.0 * imag_of(gz[j]);
      nn = nn + nu[2 * j] * nu[2 * j] + nu[2 * j + 1] * nu[2 * j + 1];
    }
    S inv = 1.0 / sqrt_s(nn);
    for (int i = 0; i < 2 * n; ++i) nu[i] = nu[i] * inv;
  }

 private:
  DomainSpec spec_;
  double c_ = 2.0;
  double c1_ = 1.0, c2_ = 1.0;
  double delta_used_ = 0.2;
  double cap_ = 0.25;
};

/* E f at x.  F is any callable f(const S*) evaluable on the closed domain,
   returning S or a complex lift of S; inside (Delta <= 0) the value is f(x)
   itself. */
template <class S, class F>
auto stein_extend_eval(const SteinPath& sp, const MomentKernel& mk, F&& f, const S* x)
    -> decltype(f(x)) {
  using R = decltype(f(x));
  const int d = 2 * sp.spec().n;
  S delta = sp.delta_reg(x);
  if (ground_real(delta) <= 0.0) return f(x);
  std::array<S, kMaxDim> nu{};
  sp.direction(x, nu.data());
  S shift = sp.c() * delta;
  R acc = R(0.0);
  std::array<S, kMaxDim> p{};
  for (std::size_t l = 0; l < mk.nodes.size(); ++l) {
    for (int i = 0; i < d; ++i) p[i] = x[i] - (mk.nodes[l] * shift) * nu[i];
    acc = acc + mk.weights[l] * f(p.data());
  }
  return acc;
}

}  // namespace dbarlab

#endif
