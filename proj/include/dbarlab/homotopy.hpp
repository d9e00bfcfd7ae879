#ifndef DBARLAB_HOMOTOPY_HPP
#define DBARLAB_HOMOTOPY_HPP

/* Solution operators for dbar on the model domains.

   H_q phi = int_U Omega^0_{0,q-1} ^ E phi + int_{U\D} Omega^{01}_{0,q-1} ^ [dbar,E] phi
   H_0 f   = int_{U\D} Omega^1_{0,0} ^ [dbar,E] f
           = int_{dD} Omega^1_{0,0} f - int_{U\D} Omega^1_{0,0} ^ E dbar f
   T_q phi = -int_{dD} Omega^{01}_{0,q-1} ^ phi + int_D Omega^0_{0,q-1} ^ phi
   top     = int_U Omega^0_{0,n-1} ^ E phi          (q = n; the shell kernel
                                                     vanishes by zeta-degree)

   with Omega^0 built from the Bochner-Martinelli map, Omega^1 from a Leray
   map valid on the shell, and E a compactly supported extension (cutoff chi
   times either the Stein operator or the coefficient's own ambient formula).

   dbar of an operator output is never taken by differencing u:
     - volume terms are convolutions against a compactly supported density,
       so d/dzbar_j passes onto the density coefficients (dual towers through
       the extension / cutoff), integrated against the same kernel;
     - shell and boundary terms have smooth integrands for z inside D, so an
       outer dual seed on z differentiates the kernel assembly exactly.

   Every target gets the graded interior mesh centered at it; shell and
   boundary meshes are shared across targets and their density columns are
   cached per node. */

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dbarlab/extension.hpp"
#include "dbarlab/forms.hpp"
#include "dbarlab/geometry.hpp"
#include "dbarlab/kernels.hpp"
#include "dbarlab/leray.hpp"
#include "dbarlab/quadrature.hpp"

namespace dbarlab {

// ------------------------------------------------------------------- forms

/* (0,q)-form phi = sum_I phi_I dzbar^I on D-bar with expression coefficients
   (evaluable on all of C^n, which is what makes the "native" extension choice
   available) and a smoothness tag r for the norm-estimation layer. */
struct ZForm {
  int n = 0;
  int q = 0;
  double r_tag = 2.0;
  CoeffForm cf;  // canonical storage over ascending index masks

  ZForm() = default;
  ZForm(int n_, int q_, double r = 2.0);

  /* Adds f dzbar_{idx[0]} ^ ... ^ dzbar_{idx[q-1]} with indices in any order;
     the term is canonicalized by the permutation sign, and a repeated index
     makes it vanish (dropped).  Indices are 0-based. */
  void add(const std::vector<int>& idx, ExprPtr f);
  void add(const std::vector<int>& idx, const std::string& text);
  void add_mask(std::uint32_t mask, ExprPtr f);
  void add_mask(std::uint32_t mask, const std::string& text);

  bool zero() const { return cf.terms.empty(); }
};

// scalar (q = 0) data
ZForm zform_scalar(int n, const std::string& text, double r_tag = 2.0);

/* Evaluable density: coefficients and exact dbar-coefficients as CoeffFns.
   dbar_of() represents psi = dbar phi, whose own dbar vanishes identically;
   keeping that as an empty list (rather than re-deriving it numerically) is
   what lets the commutator of psi stay exact. */
struct ZFormEval {
  int n = 0, q = 0;
  std::vector<std::pair<std::uint32_t, CoeffFn>> co;   // |I| = q
  std::vector<std::pair<std::uint32_t, CoeffFn>> dco;  // |M| = q+1

  const CoeffFn* find(std::uint32_t mask) const;
  const CoeffFn* find_d(std::uint32_t mask) const;
};

ZFormEval eval_of(const ZForm& phi);
ZFormEval dbar_of(const ZForm& phi);

// coefficients of f at x, ordered like masks_of_degree(n, f.q)
std::vector<cdouble> zform_values(const ZFormEval& f, const double* x);

// ------------------------------------------------------------------ options

enum class EChoice { Native, Stein };
std::string echoice_name(EChoice c);
EChoice echoice_from_name(const std::string& s);

struct HomotopyOptions {
  double h = 0.2;     // base pitch; effective pitch h * 2^-level
  int level = 2;      // radial refinement level
  double ang_floor = 0.2;  // angular pitch cap (see MeshOptions::ang_floor)
  int radial_per_band = 4;
  double jitter = 1e-3;
  std::uint64_t seed = 7;
  EChoice extension = EChoice::Native;
  double tol = 1e-2;            // per-point refinement tolerance -> flagged
  bool refine_estimate = true;  // integrate once more at level-1 per point
  double kernel_floor = kCfFloor;
  int threads = 0;  // parallel map over targets; 0 = hardware concurrency

  MeshOptions mesh_options() const;
};

using TargetList = std::vector<std::array<double, kMaxDim>>;

// deterministic interior sample points with distance >= min_dist from dD
TargetList interior_targets(const Domain& dom, int count, double min_dist,
                            std::uint64_t seed);

// ------------------------------------------------------------------ reports

struct SolveReport {
  std::string op;   // Hq | H0 | H0-boundary | Tq | leray | top
  std::string map;  // leray kind feeding Omega^1 / Omega^{01} ("bm" none)
  std::string extension;
  int n = 0;
  int q_in = 0, q_out = 0;
  double h = 0.0;
  int level = 0;
  std::uint64_t seed = 0;
  double delta = 0.0;  // shell width used (0 when no shell term)
  double tol = 1e-2;

  std::vector<std::uint32_t> out_masks;  // ascending dzbar masks, |I| = q_out
  TargetList points;
  std::vector<double> dist;        // distance to the boundary per point
  std::vector<cdouble> samples;    // points x out_masks, row-major
  std::vector<double> refine_est;  // per point, max over components
  std::vector<std::uint8_t> flagged;

  // dbar-residual statistics when the operator pins them (points with
  // d(z) >= 2 h_eff only)
  double res_max = std::numeric_limits<double>::quiet_NaN();
  double res_l2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t res_points = 0;
  std::string notes;

  std::size_t mask_index(std::uint32_t mask) const;  // throws if absent
  cdouble sample(std::size_t pt, std::size_t mi) const {
    return samples.at(pt * out_masks.size() + mi);
  }
};

struct ResidualStats {
  double max = 0.0;
  double l2 = 0.0;  // rms of the per-point maxima
  std::size_t points = 0;
  std::vector<double> per_point;
  // observed order when a coarser level was also run (NaN otherwise)
  double order = std::numeric_limits<double>::quiet_NaN();
  double coarse_max = std::numeric_limits<double>::quiet_NaN();
};

// ---------------------------------------------------------------- operators

/* H_q phi, q >= 1.  E supplies the domain, cutoff and (for EChoice::Stein)
   the certified path; map is the Leray map for the shell kernel. */
SolveReport solve_Hq(const ExtensionOp& E, const LerayMap& map, const ZForm& phi,
                     const TargetList& targets, const HomotopyOptions& opt = {});

/* H_0 f by the shell-commutator expression; the report's residual fields
   carry |dbar H_0 f| (holomorphy deficit) at the targets. */
SolveReport solve_H0(const ExtensionOp& E, const LerayMap& map, const ZForm& f,
                     const TargetList& targets, const HomotopyOptions& opt = {});

/* H_0 f by the equivalent Stokes expression
     int_{dD} Omega^1 f - int_{U\D} Omega^1 ^ E dbar f;
   for holomorphic f the second term vanishes and this is the Leray
   reproduction integral. */
SolveReport solve_H0_boundary(const ExtensionOp& E, const LerayMap& map, const ZForm& f,
                              const TargetList& targets, const HomotopyOptions& opt = {});

// classical Leray-Koppelman solution operator (no extension machinery)
SolveReport solve_Tq_classical(const Domain& dom, const LerayMap& map, const ZForm& phi,
                               const TargetList& targets, const HomotopyOptions& opt = {});

// q = 0 reproduction: int_{dD} Omega^1_{0,0} f at the targets
SolveReport leray_reproduce(const Domain& dom, const LerayMap& map, const ZForm& f,
                            const TargetList& targets, const HomotopyOptions& opt = {});

/* Top degree q = n: extend the single coefficient into the collar and apply
   the Bochner-Martinelli volume operator; dbar u = phi with the shell kernel
   absent by degree. */
SolveReport solve_top_degree(const ExtensionOp& E, const ZForm& phi,
                             const TargetList& targets, const HomotopyOptions& opt = {});

// -------------------------------------------------------------- verification

/* Residual of phi = dbar H_q phi + H_{q+1} dbar phi at the targets (q >= 1).
   When opt.refine_estimate is set the residual is also measured one level
   coarser and the observed order recorded.  Optional outputs receive the H_q
   solution and the companion H_{q+1} dbar phi reports. */
ResidualStats verify_homotopy(const ExtensionOp& E, const LerayMap& map, const ZForm& phi,
                              const TargetList& targets, const HomotopyOptions& opt = {},
                              SolveReport* u_out = nullptr, SolveReport* comp_out = nullptr);

/* Report-level variant: recomputes dbar H_q phi on the mesh family recorded
   in u_rep and takes the companion term from comp_rep; throws when the two
   reports disagree on mesh family or targets. */
ResidualStats verify_homotopy(const ExtensionOp& E, const LerayMap& map, const ZForm& phi,
                              const SolveReport& u_rep, const SolveReport& comp_rep);

// residual of phi = dbar T_q phi + T_{q+1} dbar phi (classical operator)
ResidualStats verify_classical(const Domain& dom, const LerayMap& map, const ZForm& phi,
                               const TargetList& targets, const HomotopyOptions& opt = {});

// reproduction residual max_z |f(z) - H_0 f(z) - H_1 dbar f(z)|
ResidualStats verify_reproduction(const ExtensionOp& E, const LerayMap& map, const ZForm& f,
                                  const TargetList& targets,
                                  const HomotopyOptions& opt = {});

/* Component values of dbar(H_q phi) at the targets over masks_of_degree(n, q),
   row-major points x masks, by kernel z-differentiation (volume terms through
   the dbar-density, shell kernel by dual seeds).  Single level, no refinement
   pass; q >= 1. */
std::vector<cdouble> dbar_Hq_values(const ExtensionOp& E, const LerayMap& map, const ZForm& phi,
                                    const TargetList& targets,
                                    const HomotopyOptions& opt = {});

/* Component values of dbar(H_0 f) -- the holomorphy deficit -- over
   masks_of_degree(n, 1), row-major points x masks. */
std::vector<cdouble> dbar_H0_values(const ExtensionOp& E, const LerayMap& map, const ZForm& f,
                                    const TargetList& targets,
                                    const HomotopyOptions& opt = {});

}  // namespace dbarlab

#endif
