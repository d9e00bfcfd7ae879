#ifndef DBARLAB_DCOMPLEX_HPP
#define DBARLAB_DCOMPLEX_HPP

/* The mixed complex D = dbar_z + d_t on D x S, with S a star-shaped box in
   R^m.  Mixed (0,k)-forms split by zbar-degree into components [phi]_i; the
   two solution operators combine the z-side homotopy operators H_i with the
   t-side Poincare primitive R_q:

     T  phi = R_q H_0 [phi]_0 + sum_{i>=1} H_i [phi]_i
     T~ phi = H_q [phi]_q(.,0) + sum_{i<q} R_{q-i} [phi]_i

   For D-closed phi both give D u = phi.  The residual of D(T phi) - phi is
   evaluated pointwise: t-derivatives by central differences (S is flat),
   z-derivatives by dual seeds through the kernels and the theta-integrands,
   never by differencing u. */

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dbarlab/expr.hpp"
#include "dbarlab/homotopy.hpp"

namespace dbarlab {

// t-domain: an axis-aligned box in R^m (the Poincare operator requires it to
// be star-shaped about the origin, i.e. to contain 0)
struct TBox {
  int m = 0;
  std::array<double, kMaxT> lo{};
  std::array<double, kMaxT> hi{};

  TBox() = default;
  TBox(int m_, double half);  // [-half, half]^m
  bool star_shaped_about_origin() const;
  bool contains(const double* t) const;
};

/* Mixed form phi = sum a_IJ dzbar^I ^ dt^J with |I| + |J| = k; coefficients
   are closed-form expressions in (z, t).  Terms are canonicalized to
   ascending index masks (dzbar factors before dt factors).  The smoothness
   tags (rz, rt) for phi and rz of dbar phi gate the two solver variants. */
struct MixedTerm {
  std::uint32_t zbar = 0;  // index mask over 0..n-1
  std::uint32_t t = 0;     // index mask over 0..m-1
  ExprPtr a;
};

struct MixedForm {
  int n = 0, m = 0, k = 0;
  double rz = 2.0, rt = 2.0;      // smoothness tags of phi in z and t
  double dbar_rz = 1.0;           // smoothness tag of dbar phi in z
  std::vector<MixedTerm> terms;   // sorted by (zbar, t), unique

  MixedForm() = default;
  MixedForm(int n_, int m_, int k_);

  // indices in any order; repeated indices drop the term; 0-based
  void add(const std::vector<int>& zidx, const std::vector<int>& tidx, ExprPtr f);
  void add(const std::vector<int>& zidx, const std::vector<int>& tidx,
           const std::string& text);
  void add_mask(std::uint32_t zb, std::uint32_t tm, ExprPtr f);

  const ExprPtr* find(std::uint32_t zb, std::uint32_t tm) const;
  bool zero() const { return terms.empty(); }

  // [phi]_i: the part with zbar-degree i
  MixedForm component(int i) const;
  // all components 0..min(k,n); their sum reassembles phi exactly
  std::vector<MixedForm> split() const;

  // coefficient value at (x, t), 0 for absent masks
  cdouble coeff(std::uint32_t zb, std::uint32_t tm, const double* x, const double* t) const;
};

// sum of components (inverse of split); shapes must agree
MixedForm mixed_reassemble(const std::vector<MixedForm>& parts);

// the (0,i) z-form slice of phi at t-mask J with t bound numerically:
// sum over |I| = i of a_{I,J}(z, t) dzbar^I
ZForm mixed_slice_zform(const MixedForm& phi, int i, std::uint32_t tmask, const double* t);

// expression tree with VarT nodes replaced by constants
ExprPtr expr_subst_t(const ExprPtr& e, const double* t, int m);

// ---------------------------------------------------------------- Poincare

/* R_q phi at t for a pure-t form phi of degree q >= 1 on S:
     (R_q phi)_K = sum_{a} sign(K, a) t_a int_0^1 theta^{q-1} a_{K+a}(theta t) dtheta,
   the theta-integral by Gauss-Legendre (exact for polynomial data of degree
   <= 2*gl_nodes - q).  Output coefficients over masks_of_degree(m, q-1).
   Throws if S is not star-shaped about the origin or phi has zbar factors. */
std::vector<cdouble> poincare_Rq(const MixedForm& phi, const TBox& S, const double* t,
                                 int gl_nodes = 6);

// max residual of d0 R_q phi + R_{q+1} d0 phi - phi at t (d0 by dual seeds)
double poincare_residual(const MixedForm& phi, const TBox& S, const double* t,
                         int gl_nodes = 6);

// ---------------------------------------------------------------- solver

enum class DVariant { T, Ttilde };
std::string dvariant_name(DVariant v);

struct DComplexOptions {
  HomotopyOptions hopt;
  int gl_nodes = 6;
  double t_step = 1e-3;  // central-difference step for d_t
};

struct DComplexReport {
  std::string variant;
  int n = 0, m = 0, q = 0;
  std::vector<std::uint32_t> out_zb, out_tm;  // residual component masks, |zb|+|tm| = q
  std::vector<std::array<double, kMaxDim>> zpts;
  std::vector<std::array<double, kMaxT>> tpts;
  // per (z,t) pair, row-major over [zpt][tpt]: max residual component
  std::vector<double> residual;
  double max = 0.0;
  double l2 = 0.0;
  std::string notes;
};

/* u = (variant) phi evaluated at (z, t): coefficients over the (zb, tm) masks
   of total degree q-1, ordered as all (|zb| = i, tm) pairs ascending in i,
   then mask order.  out_zb/out_tm describe the layout. */
struct DValue {
  std::vector<std::uint32_t> zb, tm;
  std::vector<cdouble> v;
};

DValue dcomplex_u(const ExtensionOp& E, const LerayMap& map, const MixedForm& phi,
                  DVariant variant, const TBox& S, const double* z, const double* t,
                  const DComplexOptions& opt = {});

/* residual of D u - phi over the (z, t) grid; rejects inputs whose smoothness
   tags fall below the variant's precondition (T: phi C^{1,1} and dbar phi
   C^{1,.}; T~: phi C^1) or whose t-domain is not star-shaped. */
DComplexReport solve_D_complex(const ExtensionOp& E, const LerayMap& map, const MixedForm& phi,
                               DVariant variant, const TBox& S,
                               const std::vector<std::array<double, kMaxDim>>& zpts,
                               const std::vector<std::array<double, kMaxT>>& tpts,
                               const DComplexOptions& opt = {});

}  // namespace dbarlab

#endif  // DBARLAB_DCOMPLEX_HPP
