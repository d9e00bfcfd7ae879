#ifndef DBARLAB_EXTENSION_HPP
#define DBARLAB_EXTENSION_HPP

/* Extension machinery: lattice jet fields, Whitney cube decompositions and the
   Whitney extension E_r, the Stein extension E with its moment kernel, the
   cutoff chi with supp chi inside the certified collar, and the commutator
   [dbar, chi E] evaluated coefficientwise.

   Two currencies coexist:
     - lattice data (JetField / ExtensionField) for persisted grid fields and
       the grid-level contracts (sandwich ratios, overlap counts, FD checks);
     - closed-form coefficients (CoeffForm over ExprPtr) whose extensions stay
       evaluable on dual-number towers, so dbar of an extended coefficient is
       an exact derivative rather than a finite difference.  A finite-difference
       commutator mode is kept for Richardson cross-checks. */

#include <array>
#include <bit>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbarlab/dual.hpp"
#include "dbarlab/expr.hpp"
#include "dbarlab/geometry.hpp"
#include "dbarlab/stein.hpp"
#include "dbarlab/whitney.hpp"

namespace dbarlab {

constexpr int kMaxT = 4;  // real deformation parameters t1..tm

// ------------------------------------------------------------------ lattices

struct Lattice {
  int dim = 0;
  std::array<double, kMaxDim> origin{};
  double h = 0.0;
  std::array<int, kMaxDim> shape{};  // grid points per axis

  std::size_t size() const {
    std::size_t s = 1;
    for (int i = 0; i < dim; ++i) s *= std::size_t(shape[i]);
    return s;
  }
  // axis 0 fastest
  std::size_t flat(const int* idx) const {
    std::size_t f = 0;
    for (int i = dim - 1; i >= 0; --i) f = f * std::size_t(shape[i]) + std::size_t(idx[i]);
    return f;
  }
  void unflat(std::size_t f, int* idx) const {
    for (int i = 0; i < dim; ++i) {
      idx[i] = int(f % std::size_t(shape[i]));
      f /= std::size_t(shape[i]);
    }
  }
  void point(std::size_t f, double* x) const {
    std::array<int, kMaxDim> idx{};
    unflat(f, idx.data());
    for (int i = 0; i < dim; ++i) x[i] = origin[i] + h * idx[i];
  }
  // nearest lattice index; false if x is off-lattice (> 1e-9 h) or out of range
  bool snap(const double* x, int* idx) const;
};

Lattice make_lattice(int dim, const double* lo, const double* hi, double h);

std::vector<std::uint8_t> lattice_mask(const Lattice& lat,
                                       const std::function<bool(const double*)>& inside);

// ------------------------------------------- scalar fields from expressions

/* Real-valued function of 2n real coordinates given by an expression in the
   complex variables z_j = x_{2j} + i x_{2j+1}; evaluable on dual towers. */
struct RealExprField {
  int n = 0;  // complex dimension; ambient real dimension is 2n
  ExprPtr f;

  template <class S>
  S eval(const S* x) const {
    std::array<typename complex_of<S>::type, kMaxN> z{};
    lift_complex(n, x, z.data());
    return real_of(eval_expr<typename complex_of<S>::type>(*f, z.data(), nullptr));
  }
  double operator()(const double* x) const { return eval<double>(x); }

  RealJet2 jet2(const double* x, int order = 2) const;  // exact jets via duals
};

// ---------------------------------------------------------------- jet fields

std::vector<std::array<int, kMaxDim>> multi_indices_upto(int dim, int r);

struct JetField {
  Lattice lat;
  std::vector<std::uint8_t> mask;  // 1 = lattice point belongs to F = closure(D)
  int order = 2;
  std::vector<std::array<int, kMaxDim>> alphas;  // |alpha| <= order, graded order
  std::vector<std::vector<double>> samples;      // samples[a][flat], 0 off-mask
  double whitney_A = 0.0;                        // measured remainder constant
};

JetField jets_from_function(const Lattice& lat, const std::vector<std::uint8_t>& mask,
                            const RealExprField& f, int order = 2);

// finite-difference jet synthesis from order-0 samples (one-sided near the
// mask edge); *warnings counts stencils that had to degrade
JetField jets_from_samples(const Lattice& lat, const std::vector<std::uint8_t>& mask,
                           const std::vector<double>& f0, int order = 2,
                           std::size_t* warnings = nullptr);

// max |FD derivative of f^(0) - f^(alpha)| over interior points, |alpha| = 1
double jet_compat_error(const JetField& jf);

struct WhitneyAReport {
  double A = 0.0;
  std::array<double, kMaxDim> worst_x{}, worst_p{};
  std::array<int, kMaxDim> worst_alpha{};
};
WhitneyAReport measure_whitney_A(const JetField& jf, std::size_t pair_budget,
                                 std::uint64_t seed);

// jet stored at the masked lattice point nearest-equal to p (throws if p is
// not a masked lattice point)
RealJet2 jet_at_lattice_point(const JetField& jf, const double* p);

// ------------------------------------------------------- cube decompositions

struct WhitneyCubeSet {
  int dim = 0;
  std::shared_ptr<const WhitneyField> field;  // oracle + lazy cube machinery
  std::vector<WhitneyCube> cubes;             // enumerated decomposition
  std::vector<std::array<double, kMaxDim>> feet;  // base points p_k

  // certified bounds on dist(Q,F)/diam Q over all cubes:
  //   lower bound uses dist(center) - diam/2, upper uses dist(center) + diam/2
  double min_dist_ratio = 0.0;
  double max_dist_ratio = 0.0;
  int n0 = 0;               // max #cubes whose expanded support covers a point
  double partition_dev = 0.0;  // max |sum phi_k - 1| over covered points
  std::array<double, 3> cutoff_deriv_bounds{};  // sup |d^a phi_k| side^|a|, |a|=0,1,2
};

/* Decompose the exterior of the masked set, certifying coverage of every
   unmasked lattice point with oracle-distance <= collar.  Throws if the
   lattice is too coarse to cover such a point. */
WhitneyCubeSet whitney_decompose(const Lattice& lat, const std::vector<std::uint8_t>& mask,
                                 double collar, std::size_t max_cubes = 2000000);

// ---------------------------------------------------------------- extensions

enum class ExtensionProvenance { WhitneyEr, SteinE };

struct ExtensionField {
  Lattice lat;
  std::vector<double> values;
  std::vector<std::uint8_t> support;  // 1 where the field is defined
  ExtensionProvenance provenance = ExtensionProvenance::WhitneyEr;
};

/* E_r over a cube set with jets read off a lattice JetField.  Cubes with
   dist(Q,F) >= far_cutoff contribute to the partition of unity but not to the
   extension sum, so E_r f falls off smoothly away from F. */
struct WhitneyExtension {
  std::shared_ptr<const JetField> jets;
  std::shared_ptr<const WhitneyField> field;
  std::vector<WhitneyCube> cubes;  // kept for reports
  double far_cutoff = 1.0;

  template <class S>
  S eval(const S* x) const {
    const int d = field->dim();
    std::array<double, kMaxDim> xg{};
    for (int i = 0; i < d; ++i) xg[i] = ground_real(x[i]);
    if (field->distance(xg.data()) <= 0.0)
      return jet_at_lattice_point(*jets, xg.data()).taylor(xg.data(), x);
    auto active = field->active_cubes(xg.data());
    S num = S(0.0), den = S(0.0);
    for (const auto& c : active) {
      double reach = 0.625 * c.side;
      S eta = S(1.0);
      bool dead = false;
      for (int i = 0; i < d; ++i) {
        S u = (x[i] - c.center[i]) / reach;
        double ug = ground_real(u);
        if (ug * ug >= 1.0) { dead = true; break; }
        eta = eta * bump1d(u);
      }
      if (dead) continue;
      den = den + eta;
      double diam = c.side * std::sqrt(double(d));
      if (field->distance(c.center.data()) - 0.5 * diam >= far_cutoff) continue;
      RealJet2 jet = jet_at_lattice_point(*jets, c.foot.data());
      num = num + eta * jet.taylor(c.foot.data(), x);
    }
    if (ground_real(den) <= 0.0)
      throw std::runtime_error("whitney extension: point not covered");
    return num / den;
  }
  double operator()(const double* x) const { return eval<double>(x); }
};

/* Build the evaluator; if a_tol is finite, measures the jet remainder
   constant first and throws (with the worst pair) when it exceeds a_tol. */
WhitneyExtension whitney_extension(JetField jets, const WhitneyCubeSet& cubes,
                                   double far_cutoff = 1.0,
                                   double a_tol = std::numeric_limits<double>::infinity());

// sample E_r f onto the lattice: exact copy of f^(0) on the mask, evaluator
// values on unmasked points with oracle-distance <= collar
ExtensionField whitney_extend(const WhitneyExtension& ext, double collar);

struct GrowthPoint {
  double d = 0.0;          // distance from the base point
  double deriv_max = 0.0;  // max |k-th directional derivative| over probes
};
struct GrowthReport {
  int k = 0;
  double slope = 0.0;  // fitted slope of log(max deriv at d) vs log d
  std::vector<GrowthPoint> points;
};

/* |d^k E_r f| along base + d * dir for each base/dir pair, probing dir_probes
   random unit directions per point with k-level dual towers; k <= 4. */
GrowthReport whitney_growth_sweep(const WhitneyExtension& ext, int k,
                                  const std::vector<std::array<double, kMaxDim>>& bases,
                                  const std::vector<std::array<double, kMaxDim>>& dirs,
                                  const std::vector<double>& dists, int dir_probes,
                                  std::uint64_t seed);

struct RemainderReport {
  double c_ratio = 0.0;      // worst |f - P_k| / (|x-p|^k  sup_modulus)
  double raw_ratio = 0.0;    // worst |f - P_k| / |x-p|^k
  double sup_modulus = 0.0;  // max |d^alpha f|, |alpha| = k, over the mask
  std::array<double, kMaxDim> worst_x{};
};
// Taylor remainder of f about p at order k (k = 1 or 2) over masked points
RemainderReport taylor_remainder_bound(const RealExprField& f, const Lattice& lat,
                                       const std::vector<std::uint8_t>& mask,
                                       const double* p, int k);

// sample the Stein extension onto the lattice (exact copy on the mask; filled
// on unmasked points with signed distance <= min(collar, certified depth))
ExtensionField stein_extend_lattice(const SteinPath& sp, const MomentKernel& mk,
                                    const Lattice& lat, const std::vector<std::uint8_t>& mask,
                                    const RealExprField& f, double collar);

// ------------------------------------------------------------------- cutoff

/* chi = 1 on {rho0 <= l0} (a neighborhood of closure(D)), 0 on {rho0 >= l1},
   C-infinity in between; a function of rho0 only, so it stays cheap on dual
   towers.  Calibrated so that supp chi lies inside {signed distance < delta}. */
struct ChiCutoff {
  DomainSpec spec;
  double l0 = 0.0, l1 = 0.0;
  double delta_support = 0.0;  // audited: max signed distance on {rho0 = l1}

  template <class S>
  S eval(const S* x) const {
    S u = (rho0_eval_real(spec, x) - l0) * (1.0 / (l1 - l0));
    double ug = ground_real(u);
    if (ug <= 0.0) return S(1.0);
    if (ug >= 1.0) return S(0.0);
    S ha = exp_s(S(-1.0) / u);
    S hb = exp_s(S(-1.0) / (S(1.0) - u));
    return hb / (ha + hb);
  }
  double operator()(const double* x) const { return eval<double>(x); }
};

ChiCutoff build_chi(const Domain& dom, double delta, int samples = 256,
                    std::uint64_t seed = 90901);

// ------------------------------------------------- coefficient functions

/* Sum of terms s * f or s * dbar_j f, f a closed-form expression; this is the
   common currency for form coefficients and their dbar-derivatives. */
struct CoeffItem {
  double sign = 1.0;
  int j = -1;  // -1: the expression itself; >= 0: dbar_j of it
  ExprPtr f;
};

/* Wirtinger derivative of an expression at a complex-tower point, via two
   real-direction dual passes (seeds 1 and i); bar = true gives dbar_j. */
template <class C>
C expr_wirtinger(const Expr& e, int n, int m, int j, bool bar, const C* z, const C* t) {
  std::array<Dual<C>, kMaxN> zd{};
  for (int k = 0; k < n; ++k) zd[k] = Dual<C>(z[k]);
  std::array<Dual<C>, kMaxT> td{};
  for (int k = 0; k < m; ++k) td[k] = Dual<C>(t[k]);
  zd[j].d = C(1.0);
  C dx = eval_expr<Dual<C>>(e, zd.data(), td.data()).d;
  zd[j].d = scalar_one_i<C>();
  C dy = eval_expr<Dual<C>>(e, zd.data(), td.data()).d;
  C ii = scalar_one_i<C>();
  return bar ? C(0.5) * (dx + ii * dy) : C(0.5) * (dx - ii * dy);
}

struct CoeffFn {
  int n = 0, m = 0;
  std::vector<CoeffItem> items;

  bool empty() const { return items.empty(); }

  template <class S>
  typename complex_of<S>::type eval(const S* x, const S* t = nullptr) const {
    using C = typename complex_of<S>::type;
    if (m > 0 && t == nullptr)
      throw std::invalid_argument("coefficient references t parameters but none given");
    std::array<C, kMaxN> z{};
    lift_complex(n, x, z.data());
    std::array<C, kMaxT> tc{};
    for (int k = 0; k < m; ++k) tc[k] = complexify(t[k], S(0.0));
    C r = C(0.0);
    for (const auto& it : items) {
      C v = it.j < 0 ? eval_expr<C>(*it.f, z.data(), tc.data())
                     : expr_wirtinger<C>(*it.f, n, m, it.j, true, z.data(), tc.data());
      r = r + C(it.sign) * v;
    }
    return r;
  }
};

// sign of inserting j into the ascending index set maskI (which excludes j)
inline double mask_sign(std::uint32_t maskI, int j) {
  return (std::popcount(maskI & ((1u << unsigned(j)) - 1u)) % 2 == 0) ? 1.0 : -1.0;
}

std::vector<std::uint32_t> masks_of_degree(int n, int q);

/* (0,q)-form with expression coefficients: phi = sum_J phi_J dzbar_J over
   ascending index sets J (bitmask over {0..n-1}). */
struct CoeffForm {
  int n = 0, m = 0, q = 0;
  std::vector<std::pair<std::uint32_t, ExprPtr>> terms;

  void add(std::uint32_t mask, ExprPtr f);
  void add(std::uint32_t mask, const std::string& text) { add(mask, parse_expr(text)); }
  const ExprPtr* find(std::uint32_t mask) const;

  CoeffFn coeff(std::uint32_t mask) const;        // phi_J (empty if absent)
  CoeffFn dbar_coeff(std::uint32_t maskM) const;  // (dbar phi)_M, |M| = q+1
};

// --------------------------------------------------- Stein extension operator

/* The pieces of Etilde = chi * E: domain, certified Stein path, moment kernel
   and cutoff; extension of coefficient functions stays dual-evaluable. */
class ExtensionOp {
 public:
  explicit ExtensionOp(const DomainSpec& spec, double safety = 2.0, int chi_samples = 256,
                       std::uint64_t seed = 90901);

  const Domain& domain() const { return dom_; }
  const SteinPath& path() const { return path_; }
  const MomentKernel& kernel() const { return kernel_; }
  const ChiCutoff& chi() const { return chi_; }
  double delta_used() const { return path_.delta_used(); }

  template <class S>
  typename complex_of<S>::type extend(const CoeffFn& f, const S* x, const S* t = nullptr) const {
    auto fn = [&](const S* y) { return f.eval(y, t); };
    return stein_extend_eval(path_, kernel_, fn, x);
  }
  template <class S>
  typename complex_of<S>::type extend_chi(const CoeffFn& f, const S* x,
                                          const S* t = nullptr) const {
    using C = typename complex_of<S>::type;
    S cx = chi_.eval(x);
    if (ground_real(cx) == 0.0) return C(0.0);
    return complexify(cx, S(0.0)) * extend(f, x, t);
  }

 private:
  Domain dom_;
  MomentKernel kernel_;  // before path_: the path is calibrated against it
  SteinPath path_;
  ChiCutoff chi_;
};

// ---------------------------------------------------------------- commutator

/* Coefficient J (|J| = q+1) of [dbar, chi E] phi at the real point x:
     sum_{j in J} sign(J\j, j) dbar_j( chi E phi_{J\j} )  -  chi E[(dbar phi)_J]
   dbar_j of the extended coefficient is taken with an outer dual level, so the
   result is exact up to quadrature of the lambda integral.  Vanishes
   identically on closure(D) (both branches reduce to the same expression) and
   outside supp chi. */
template <class S>
typename complex_of<S>::type commutator_coeff(const ExtensionOp& E, const CoeffForm& phi,
                                              std::uint32_t maskJ, const S* x,
                                              const S* t = nullptr) {
  using C = typename complex_of<S>::type;
  const int n = phi.n;
  if (phi.m > 0 && t == nullptr)
    throw std::invalid_argument("form references t parameters but none given");
  std::array<Dual<S>, 2 * kMaxN> X{};
  for (int k = 0; k < 2 * n; ++k) X[k] = Dual<S>(x[k]);
  std::array<Dual<S>, kMaxT> T{};
  for (int k = 0; k < phi.m; ++k) T[k] = Dual<S>(t[k]);
  const C ii = scalar_one_i<C>();
  C termA = C(0.0);
  for (int j = 0; j < n; ++j) {
    if (!((maskJ >> unsigned(j)) & 1u)) continue;
    std::uint32_t maskI = maskJ & ~(1u << unsigned(j));
    CoeffFn fI = phi.coeff(maskI);
    if (fI.empty()) continue;
    double sgn = mask_sign(maskI, j);
    X[2 * j].d = S(1.0);
    Dual<C> gx = E.extend_chi(fI, X.data(), T.data());
    X[2 * j].d = S(0.0);
    X[2 * j + 1].d = S(1.0);
    Dual<C> gy = E.extend_chi(fI, X.data(), T.data());
    X[2 * j + 1].d = S(0.0);
    termA = termA + C(sgn) * (C(0.5) * (gx.d + ii * gy.d));
  }
  CoeffFn fJ = phi.dbar_coeff(maskJ);
  C termB = E.extend_chi(fJ, x, t);
  return termA - termB;
}

// finite-difference mode (central differences, step h) for Richardson checks
cdouble commutator_coeff_fd(const ExtensionOp& E, const CoeffForm& phi, std::uint32_t maskJ,
                            const double* x, const double* t, double h);

}  // namespace dbarlab

#endif
