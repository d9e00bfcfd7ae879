#ifndef DBARLAB_NORMLAB_HPP
#define DBARLAB_NORMLAB_HPP

/* Empirical smoothness measurement: sampled Holder / Zygmund norm estimates,
   dyadic (Littlewood-Paley style) decompositions on a 1-D grid, and log-log
   exponent fits for boundary blow-up rates.

   All estimates are lower bounds by construction (sampled suprema).  Pair
   sampling is sharded: shard s draws from its own generator seeded by
   mix(seed, s), and a larger budget extends the sample stream prefix-wise,
   so estimates are deterministic, reproducible, and monotone non-decreasing
   in the budget.  Both samplers share the same dyadic offset floor
   2^-14 * diam, which is also the finite-difference step; matched floors
   keep the two estimates comparable (within a fixed factor) even on data
   whose seminorm diverges, where each estimate saturates at its floor. */

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dbarlab {

using FieldFn = std::function<double(const double*)>;

struct SampleBox {
  int dim = 1;
  std::array<double, 8> lo{};
  std::array<double, 8> hi{};

  SampleBox() = default;
  SampleBox(int dim_, double half);  // [-half, half]^dim
  double diam() const;               // Euclidean diameter
};

struct NormEstimate {
  double r = 0.0;
  double value = 0.0;  // sum of the parts below
  std::string method;  // "divided-diff C^r" | "second-diff Lambda_r" | "dyadic"
  std::size_t pairs = 0;
  std::uint64_t seed = 0;
  // sup-norm of each derivative order 0..[r], then the pair-ratio seminorm
  std::vector<double> parts;
};

/* C^r estimate: sum over i <= [r] of sup |d^i f| plus the sampled seminorm
   sup |d^[r] f(x) - d^[r] f(y)| / |x-y|^(r-[r]); derivatives by central
   differences at step 2^-14 * diam.  Supports 0 < r < 3.  budget >= 64. */
NormEstimate holder_norm(const FieldFn& f, const SampleBox& box, double r,
                         std::size_t budget = 100000, std::uint64_t seed = 1);

/* Zygmund-type seminorm sup |f(x+y) - 2 f(x) + f(x-y)| / |y|^r over sampled
   (x, y) with x +- y in the box; 0 < r < 2.  For non-integer r this is
   comparable to the holder_norm estimate (equivalence of the two scales). */
NormEstimate lipschitz_seminorm(const FieldFn& f, const SampleBox& box, double r,
                                std::size_t budget = 100000, std::uint64_t seed = 1);

/* Dyadic decomposition of a 1-D grid field on [a, b]: f_k is the difference
   of mollifications at widths 2^-k and 2^-(k-1) (fixed bump mollifier,
   discretized on the grid; widths below the spacing act as the identity),
   and the last piece carries the remainder so the sum telescopes to f
   exactly.  A is the measured scaling constant
     max_k max_i  sup |d^i f_k| / 2^(k (i - r)),   i = 0..[r]+1,
   finite iff f has a finite Lambda_r seminorm (A grows with k_max past the
   actual smoothness).  Throws if the reassembly drifts by more than 1e-6. */
struct DyadicDecomposition {
  double r = 0.0;
  int k_max = 0;
  double a = 0.0, b = 0.0;                       // grid interval
  std::vector<std::vector<double>> pieces;       // k_max + 1 rows on the grid
  std::vector<std::vector<double>> piece_norms;  // per piece: sup |d^i|, i = 0..[r]+1
  double A = 0.0;
  double reassembly_drift = 0.0;
};

DyadicDecomposition dyadic_decompose(const std::vector<double>& f, double a, double b,
                                     double r, int k_max);

/* Least-squares line through (log d, log v): slope certifies blow-up or
   decay rates.  Nonpositive values are skipped; requires points on at least
   4 distinct dyadic scales spanning a factor >= 16, else throws. */
struct ExponentFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // RMS residual of the fit in log space
  double scale_lo = 0.0, scale_hi = 0.0;
  std::size_t points = 0;
};

ExponentFit boundary_exponent_fit(const std::vector<double>& dist,
                                  const std::vector<double>& value);

}  // namespace dbarlab

#endif  // DBARLAB_NORMLAB_HPP
