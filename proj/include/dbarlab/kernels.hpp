#ifndef DBARLAB_KERNELS_HPP
#define DBARLAB_KERNELS_HPP

/* Cauchy-Fantappie / Koppelman kernel machinery.

   For a map g(z,zeta) with g.w != 0 (w = zeta - z) set
       eta  = sum_j g_j dw_j,            s = g . w,
       omega = eta / (2 pi i s),
       Omega^g      = eta ^ (dbar eta)^(n-1) / (2 pi i s)^n,
       Omega^{g0,g1} = sum_{a+b=n-2} eta0 ^ eta1 ^ (dbar eta0)^a ^ (dbar eta1)^b
                        / ((2 pi i s0)^(a+1) (2 pi i s1)^(b+1)),
   where dbar = dbar_z + dbar_zeta acts on the coefficients and the closed
   forms above use eta/s instead of omega (the cross terms cancel against
   omega ^ omega = 0).  Everything is assembled pointwise over a scalar tower
   S, so outer dual seeds differentiate the whole construction exactly.

   Maps enter through a duck-typed interface:
       map.eval_g(xz, xzeta, g)   // real interleaved coords, any tower S
       map.holomorphic_in_z       // bool member: dbar_z g == 0 identically
   Coefficient derivatives of g are produced here with one inner dual level. */

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbarlab/dual.hpp"
#include "dbarlab/forms.hpp"

namespace dbarlab {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// default singularity floor for |s|; below it the caller is on the diagonal
inline constexpr double kCfFloor = 1e-150;

template <class C>
C two_pi_i() {
  return C(cdouble(0.0, kTwoPi));
}

// ------------------------------------------------------------------ map jets

// g and its conjugate coefficient derivatives at one point (z, zeta)
template <class S>
struct MapJet {
  using C = complex_of_t<S>;
  int n = 0;
  bool has_zbar = true;  // false: dg_zbar identically zero (skip those terms)
  std::array<C, kMaxN> g{};
  std::array<std::array<C, kMaxN>, kMaxN> dg_zetabar{};  // [j][k] = d g_j / d zetabar_k
  std::array<std::array<C, kMaxN>, kMaxN> dg_zbar{};     // [j][k] = d g_j / d zbar_k
};

template <class S, class M>
MapJet<S> map_jet(const M& map, int n, const S* xz, const S* xzeta) {
  using C = complex_of_t<S>;
  using DS = Dual<S>;
  using DC = complex_of_t<DS>;
  MapJet<S> mj;
  mj.n = n;
  mj.has_zbar = !map.holomorphic_in_z;
  map.eval_g(xz, xzeta, mj.g.data());

  std::array<DS, 2 * kMaxN> Z{}, T{};
  for (int i = 0; i < 2 * n; ++i) {
    Z[i] = DS(xz[i]);
    T[i] = DS(xzeta[i]);
  }
  std::array<DC, kMaxN> gx{}, gy{};
  const C ii = scalar_one_i<C>();
  auto pass = [&](DS* slot, std::array<DC, kMaxN>& out) {
    slot->d = S(1.0);
    map.eval_g(Z.data(), T.data(), out.data());
    slot->d = S(0.0);
  };
  for (int k = 0; k < n; ++k) {
    pass(&T[2 * k], gx);
    pass(&T[2 * k + 1], gy);
    for (int j = 0; j < n; ++j)
      mj.dg_zetabar[j][k] = C(0.5) * (gx[j].d + ii * gy[j].d);
    if (mj.has_zbar) {
      pass(&Z[2 * k], gx);
      pass(&Z[2 * k + 1], gy);
      for (int j = 0; j < n; ++j)
        mj.dg_zbar[j][k] = C(0.5) * (gx[j].d + ii * gy[j].d);
    }
  }
  return mj;
}

template <class S>
void w_vector(int n, const S* xz, const S* xzeta, complex_of_t<S>* w) {
  for (int j = 0; j < n; ++j)
    w[j] = complexify(xzeta[2 * j] - xz[2 * j], xzeta[2 * j + 1] - xz[2 * j + 1]);
}

// ------------------------------------------------------------- CF components

template <class S>
Form<complex_of_t<S>> cf_eta(const MapJet<S>& mj) {
  using C = complex_of_t<S>;
  Form<C> f(mj.n);
  for (int j = 0; j < mj.n; ++j) {
    f.add_term(gen_dz(j), -mj.g[j]);
    f.add_term(gen_dzeta(mj.n, j), mj.g[j]);
  }
  return f;
}

template <class S>
Form<complex_of_t<S>> cf_dbar_eta(const MapJet<S>& mj) {
  using C = complex_of_t<S>;
  const int n = mj.n;
  Form<C> f(n);
  for (int j = 0; j < n; ++j) {
    Form<C> dbar_gj(n);
    for (int k = 0; k < n; ++k) {
      dbar_gj.add_term(gen_dzetabar(n, k), mj.dg_zetabar[j][k]);
      if (mj.has_zbar) dbar_gj.add_term(gen_dzbar(n, k), mj.dg_zbar[j][k]);
    }
    Form<C> dwj(n);
    dwj.add_term(gen_dz(j), C(-1.0));
    dwj.add_term(gen_dzeta(n, j), C(1.0));
    f += wedge(dbar_gj, dwj);
  }
  return f;
}

template <class S>
complex_of_t<S> cf_s(const MapJet<S>& mj, const complex_of_t<S>* w) {
  using C = complex_of_t<S>;
  C s = C(0.0);
  for (int j = 0; j < mj.n; ++j) s = s + mj.g[j] * w[j];
  return s;
}

inline void cf_check_floor(double abs2_s_ground, double floor_value) {
  if (!(abs2_s_ground > floor_value * floor_value))
    throw std::runtime_error("cf kernel: too close to diagonal");
}

// omega = eta / (2 pi i s)
template <class S>
Form<complex_of_t<S>> cf_form(const MapJet<S>& mj, const complex_of_t<S>* w,
                              double floor_value = kCfFloor) {
  using C = complex_of_t<S>;
  C s = cf_s(mj, w);
  cf_check_floor(ground_real(abs2_s(s)), floor_value);
  Form<C> f = cf_eta(mj);
  f *= C(1.0) / (two_pi_i<C>() * s);
  return f;
}

// omega ^ (dbar omega)^alpha = eta ^ (dbar eta)^alpha / (2 pi i s)^(alpha+1)
template <class S>
Form<complex_of_t<S>> cf_power(const MapJet<S>& mj, const complex_of_t<S>* w, int alpha,
                               double floor_value = kCfFloor) {
  using C = complex_of_t<S>;
  if (alpha < 0) throw std::invalid_argument("cf_power: alpha must be >= 0");
  C s = cf_s(mj, w);
  cf_check_floor(ground_real(abs2_s(s)), floor_value);
  Form<C> f = cf_eta(mj);
  if (alpha > 0) {
    Form<C> de = cf_dbar_eta(mj);
    for (int i = 0; i < alpha; ++i) f = wedge(f, de);
  }
  f *= C(1.0) / pow_int(two_pi_i<C>() * s, alpha + 1);
  return f;
}

// full single-map kernel Omega^g = omega ^ (dbar omega)^(n-1)
template <class S>
Form<complex_of_t<S>> cf_omega(const MapJet<S>& mj, const complex_of_t<S>* w,
                               double floor_value = kCfFloor) {
  return cf_power(mj, w, mj.n - 1, floor_value);
}

// Omega^{g0,g1} = sum_{a+b=n-2} eta0^eta1^(dbar eta0)^a^(dbar eta1)^b / (...)
template <class S>
Form<complex_of_t<S>> cf_omega01(const MapJet<S>& mj0, const MapJet<S>& mj1,
                                 const complex_of_t<S>* w, double floor_value = kCfFloor) {
  using C = complex_of_t<S>;
  const int n = mj0.n;
  Form<C> acc(n);
  if (n < 2) return acc;  // empty sum
  C s0 = cf_s(mj0, w), s1 = cf_s(mj1, w);
  cf_check_floor(ground_real(abs2_s(s0)), floor_value);
  cf_check_floor(ground_real(abs2_s(s1)), floor_value);
  Form<C> e01 = wedge(cf_eta(mj0), cf_eta(mj1));
  Form<C> d0 = cf_dbar_eta(mj0), d1 = cf_dbar_eta(mj1);
  for (int a = 0; a + 2 <= n; ++a) {
    int b = n - 2 - a;
    Form<C> t = e01;
    for (int i = 0; i < a; ++i) t = wedge(t, d0);
    for (int i = 0; i < b; ++i) t = wedge(t, d1);
    t *= C(1.0) / (pow_int(two_pi_i<C>() * s0, a + 1) * pow_int(two_pi_i<C>() * s1, b + 1));
    acc += t;
  }
  return acc;
}

// --------------------------------------------------------- kernel components

enum class KernelFamily { Omega0, Omega1, Omega01 };

std::string kernel_family_name(KernelFamily f);

// bidegree metadata: z-type (0,q), zeta-type (zeta_p, zeta_pbar); a component
// is identically zero iff its zeta-type (or q) is out of range
struct KernelComponent {
  KernelFamily family = KernelFamily::Omega0;
  int n = 0;
  int q = 0;
  int zeta_p = 0;
  int zeta_pbar = 0;
  std::vector<std::pair<int, int>> denom_powers;  // (s0 power, s1 power) per term
  bool zero = false;
};

KernelComponent kernel_component(KernelFamily family, int n, int q);

// grading check: every surviving term of a (0,q) component has no dz, exactly
// q dzbar and exactly n dzeta generators; returns max |coeff| of violations
template <class C>
double grading_violation(const Form<C>& f, int n, int q) {
  double bad = 0.0;
  for (const auto& [m, c] : f.terms) {
    bool ok = deg_dz(m, n) == 0 && deg_dzbar(m, n) == q && deg_dzeta(m, n) == n;
    if (!ok) bad = std::max(bad, std::abs(ground(c)));
  }
  return bad;
}

// drop terms with |coeff| <= tol (plain forms only; duals would lose slots)
Form<cdouble> prune_form(const Form<cdouble>& f, double tol);

// JSON dump of a form's term list at a probe point (debugging interface)
std::string form_dump_json(const Form<cdouble>& f, int n, double tol = 0.0);
std::vector<std::string> generator_names(Mask m, int n);

// ------------------------------------------------- coefficientwise dbar of K

enum class DiffMode { Dual, Fd };

/* dbar_apply: given a pointwise builder F(z, zeta) -> Form (generic over the
   real tower), returns  sum_k dvbar_k ^ dF/dvbar_k  at (xz, xzeta), where v
   runs over zeta (wrt_zeta) or z.  Dual mode differentiates the whole build
   exactly; Fd mode uses central differences of step h. */
template <class B>
Form<cdouble> dbar_apply(int n, B&& build, const double* xz, const double* xzeta,
                         bool wrt_zeta, DiffMode mode = DiffMode::Dual, double h = 1e-5) {
  Form<cdouble> acc(n);
  const cdouble ii(0.0, 1.0);
  for (int k = 0; k < n; ++k) {
    Form<cdouble> dx(n), dy(n);
    if (mode == DiffMode::Dual) {
      std::array<Dual<double>, 2 * kMaxN> Z{}, T{};
      for (int i = 0; i < 2 * n; ++i) {
        Z[i] = Dual<double>(xz[i]);
        T[i] = Dual<double>(xzeta[i]);
      }
      auto run = [&](int comp) {
        Dual<double>* slot = (wrt_zeta ? &T[2 * k + comp] : &Z[2 * k + comp]);
        slot->d = 1.0;
        Form<Dual<cdouble>> F = build(Z.data(), T.data());
        slot->d = 0.0;
        Form<cdouble> D(n);
        D.terms.reserve(F.terms.size());
        for (const auto& [m, c] : F.terms) D.terms.push_back({m, c.d});
        return D;
      };
      dx = run(0);
      dy = run(1);
    } else {
      std::array<double, 2 * kMaxN> Z{}, T{};
      for (int i = 0; i < 2 * n; ++i) {
        Z[i] = xz[i];
        T[i] = xzeta[i];
      }
      auto run = [&](int comp) {
        double* slot = (wrt_zeta ? &T[2 * k + comp] : &Z[2 * k + comp]);
        double v0 = *slot;
        *slot = v0 + h;
        Form<cdouble> Fp = build(Z.data(), T.data());
        *slot = v0 - h;
        Form<cdouble> Fm = build(Z.data(), T.data());
        *slot = v0;
        Fm *= cdouble(-1.0);
        Fp += Fm;
        Fp *= cdouble(1.0 / (2.0 * h));
        return Fp;
      };
      dx = run(0);
      dy = run(1);
    }
    dy *= ii;
    dx += dy;
    dx *= cdouble(0.5);
    Mask gen = wrt_zeta ? gen_dzetabar(n, k) : gen_dzbar(n, k);
    acc += wedge(Form<cdouble>::monomial(n, gen, cdouble(1.0)), dx);
  }
  return acc;
}

// ---------------------------------------------------------- Koppelman checks

struct KoppelmanReport {
  int n = 0;
  std::vector<double> res1;  // per q: |dbar_zeta O1_{0,q} + dbar_z O1_{0,q-1}|
  std::vector<double> res2;  // per q: |dbar O01 ... - (O0 - O1)_{0,q}|
  double max1 = 0.0;
  double max2 = 0.0;
  double scale = 0.0;  // max kernel coefficient magnitude at the point
};

template <class M0, class M1>
KoppelmanReport koppelman_check(int n, const M0& m0, const M1& m1, const double* xz,
                                const double* xzeta, DiffMode mode = DiffMode::Dual,
                                double h = 1e-5, double floor_value = kCfFloor) {
  auto build1 = [&](const auto* zz, const auto* tt) {
    using SS = std::remove_cvref_t<decltype(*zz)>;
    auto mj = map_jet<SS>(m1, n, zz, tt);
    std::array<complex_of_t<SS>, kMaxN> w{};
    w_vector(n, zz, tt, w.data());
    return cf_omega(mj, w.data(), floor_value);
  };
  auto build01 = [&](const auto* zz, const auto* tt) {
    using SS = std::remove_cvref_t<decltype(*zz)>;
    auto mj0 = map_jet<SS>(m0, n, zz, tt);
    auto mj1 = map_jet<SS>(m1, n, zz, tt);
    std::array<complex_of_t<SS>, kMaxN> w{};
    w_vector(n, zz, tt, w.data());
    return cf_omega01(mj0, mj1, w.data(), floor_value);
  };

  Form<cdouble> r1 = dbar_apply(n, build1, xz, xzeta, true, mode, h);
  r1 += dbar_apply(n, build1, xz, xzeta, false, mode, h);

  Form<cdouble> r2 = dbar_apply(n, build01, xz, xzeta, true, mode, h);
  r2 += dbar_apply(n, build01, xz, xzeta, false, mode, h);
  auto mj0 = map_jet<double>(m0, n, xz, xzeta);
  auto mj1 = map_jet<double>(m1, n, xz, xzeta);
  std::array<cdouble, kMaxN> w{};
  w_vector(n, xz, xzeta, w.data());
  Form<cdouble> rhs = cf_omega(mj0, w.data(), floor_value);
  rhs -= cf_omega(mj1, w.data(), floor_value);
  r2 -= rhs;

  KoppelmanReport rep;
  rep.n = n;
  rep.res1.resize(n);
  rep.res2.resize(n);
  for (int q = 0; q < n; ++q) {
    rep.res1[q] = r1.part_0q(q).max_abs();
    rep.res2[q] = r2.part_0q(q).max_abs();
    rep.max1 = std::max(rep.max1, rep.res1[q]);
    rep.max2 = std::max(rep.max2, rep.res2[q]);
  }
  rep.scale = std::max(rhs.max_abs(), 1.0);
  return rep;
}

// ------------------------------------------------------------------- signs

// sign picked up when d_z passes under an integral over a dim_M-manifold
inline int signed_pullback_rule(int dim_M) { return (dim_M % 2 == 0) ? 1 : -1; }

}  // namespace dbarlab

#endif
