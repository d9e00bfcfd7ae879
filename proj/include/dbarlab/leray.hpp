#ifndef DBARLAB_LERAY_HPP
#define DBARLAB_LERAY_HPP

/* Leray maps W(z, zeta) feeding the Cauchy-Fantappie kernels:

     bm              W = conj(zeta) - conj(z)        Phi = |zeta - z|^2
     ball            W = conj(zeta)                  (unit ball, rho0 gradient)
     convex          W = d rho0 / d zeta             (strictly convex rho0)
     levi            W_j = 2 d rho0/d zeta_j - sum_i a_ij (zeta_i - z_i),
                     a_ij = d^2 rho0 / d zeta_i d zeta_j    (local map; the
                     quadratic sign and the factor 2 are fixed by requiring
                     Re Phi >= rho0(zeta) - rho0(z) + |zeta-z|^2 / C)
     whitney-convex  W = d rho_reg / d zeta for the regularized defining
                     function (analytic inside, Whitney-extended outside);
                     used for the derivative-growth checks

   All maps evaluate over real interleaved coordinates with any dual tower,
   so kernel assembly can differentiate through them exactly. */

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dbarlab/dual.hpp"
#include "dbarlab/geometry.hpp"

namespace dbarlab {

enum class LerayKind { BM, Ball, Convex, Levi, WhitneyConvex };

std::string leray_kind_name(LerayKind k);
LerayKind leray_kind_from_name(const std::string& s);

struct LerayMap {
  LerayKind kind = LerayKind::BM;
  DomainSpec spec;
  bool holomorphic_in_z = false;
  double shell_delta = 0.0;  // validity: zeta within this collar width
  std::shared_ptr<const DefiningFunction> rho_reg;  // WhitneyConvex only

  template <class S>
  void eval_g(const S* xz, const S* xzeta, complex_of_t<S>* g) const {
    using C = complex_of_t<S>;
    const int n = spec.n;
    switch (kind) {
      case LerayKind::BM:
        for (int j = 0; j < n; ++j)
          g[j] = complexify(xzeta[2 * j] - xz[2 * j], xz[2 * j + 1] - xzeta[2 * j + 1]);
        return;
      case LerayKind::Ball:
      case LerayKind::Convex: {
        std::array<C, kMaxN> zc{};
        lift_complex(n, xzeta, zc.data());
        rho0_grad(spec, zc.data(), g);
        return;
      }
      case LerayKind::Levi: {
        std::array<C, kMaxN> zc{}, zz{};
        lift_complex(n, xzeta, zc.data());
        lift_complex(n, xz, zz.data());
        std::array<C, kMaxN> gr{};
        rho0_grad(spec, zc.data(), gr.data());
        std::array<C, kMaxN * kMaxN> A{};
        rho0_hess_holo(spec, zc.data(), A.data());
        for (int j = 0; j < n; ++j) {
          C acc = 2.0 * gr[j];
          for (int i = 0; i < n; ++i) acc = acc - A[i * n + j] * (zc[i] - zz[i]);
          g[j] = acc;
        }
        return;
      }
      case LerayKind::WhitneyConvex: {
        std::array<Dual<S>, 2 * kMaxN> X{};
        for (int i = 0; i < 2 * n; ++i) X[i] = Dual<S>(xzeta[i]);
        for (int j = 0; j < n; ++j) {
          X[2 * j].d = S(1.0);
          S fx = rho_reg->eval_real(X.data()).d;
          X[2 * j].d = S(0.0);
          X[2 * j + 1].d = S(1.0);
          S fy = rho_reg->eval_real(X.data()).d;
          X[2 * j + 1].d = S(0.0);
          g[j] = 0.5 * complexify(fx, -fy);  // d/d zeta_j = (d_x - i d_y)/2
        }
        return;
      }
    }
    throw std::logic_error("LerayMap::eval_g: bad kind");
  }

  // Phi(z, zeta) = W . (zeta - z)
  template <class S>
  complex_of_t<S> phi(const S* xz, const S* xzeta) const {
    using C = complex_of_t<S>;
    std::array<C, kMaxN> g{};
    eval_g(xz, xzeta, g.data());
    C acc = C(0.0);
    for (int j = 0; j < spec.n; ++j)
      acc = acc + g[j] * complexify(xzeta[2 * j] - xz[2 * j], xzeta[2 * j + 1] - xz[2 * j + 1]);
    return acc;
  }
};

// min eigenvalue of the real Hessian of rho0 over collar samples
double convexity_floor(const DomainSpec& spec, int samples, std::uint64_t seed);

// factory; kind in {bm, ball, convex, levi, whitney-convex}; convex checks
// the Hessian floor and rejects non-convex rho0
LerayMap make_leray_map(const std::string& kind, const DomainSpec& spec,
                        double shell_delta = 0.0);
LerayMap make_whitney_convex_map(const DomainSpec& spec, const RegularizeOptions& opt = {});

// plain-complex Phi closure (for the chart lower-bound reports)
PhiFn leray_phi_fn(const LerayMap& map);

// holomorphy audit: max |dbar_z W| over random (z, zeta) pairs
double max_dbar_z(const LerayMap& map, int samples, std::uint64_t seed);

struct PhiMinReport {
  double min_abs_phi = 0.0;
  std::size_t pairs = 0;
  std::array<double, kMaxDim> worst_z{};
  std::array<double, kMaxDim> worst_zeta{};
};
// min |Phi| over z inside D and zeta in the shell
PhiMinReport min_phi_report(const LerayMap& map, int z_samples, int zeta_samples,
                            std::uint64_t seed);

// conservative curvature-radius floor of the boundary (closed-form estimate)
double curvature_floor(const DomainSpec& spec);

struct LeviBoundReport {
  double c_measured = 0.0;    // 1 / min margin; the constant C in the bound
  double min_margin = 0.0;    // min (Re F - drho) / |zeta-z|^2
  std::size_t pairs = 0;
  int violations = 0;         // margins <= 0
  double eps_pair = 0.0;      // max |zeta - z| used
  std::array<double, kMaxDim> worst_z{};
  std::array<double, kMaxDim> worst_zeta{};
};
// random near-diagonal pairs: zeta in the collar, |zeta - z| < eps
LeviBoundReport levi_lower_bound_sweep(const DomainSpec& spec, int pairs, double eps_pair,
                                       std::uint64_t seed);
// radial pairs z = (1-d) zeta0, zeta = (1+s) zeta0 through boundary points
LeviBoundReport levi_radial_sweep(const DomainSpec& spec, int rays, std::uint64_t seed);

struct LerayGrowthRow {
  double dist = 0.0;
  double sup1 = 0.0, sup2 = 0.0, sup3 = 0.0;  // sup |d^i_zeta W| at this dist
};
struct LerayGrowthReport {
  std::vector<LerayGrowthRow> rows;
  double slope1 = 0.0, slope2 = 0.0, slope3 = 0.0;  // log-log fits vs dist
};
// derivative growth of W on the shell: points at distance d outside the
// boundary, sup over samples and random directions; slopes fit sup_i ~ d^m
LerayGrowthReport check_regularized_growth(const LerayMap& map,
                                           const std::vector<double>& dists,
                                           int base_samples, int dir_probes,
                                           std::uint64_t seed,
                                           const std::vector<std::array<double, kMaxDim>>& z_list = {});

}  // namespace dbarlab

#endif
