#ifndef DBARLAB_WHITNEY_HPP
#define DBARLAB_WHITNEY_HPP

/* Whitney cube decomposition of the complement of a closed set F in R^d and
   the Whitney extension E_r built on it.

   Cubes are maximal dyadic cubes Q (within a fixed root box) satisfying
       dist(center Q, F) >= 1.5 * diam Q ,
   a predicate that is monotone along descending chains, so the selected cubes
   tile F^c and satisfy  diam Q <= dist(Q,F) <= 4.2 diam Q  (inside the
   contract's 1/2 .. 5 sandwich).  Selection is lazy: evaluating E_r f at x
   touches only the O(1) cubes whose expanded support contains x, so the
   decomposition never needs to be enumerated globally.  Cutoffs are products
   of C-infinity bumps on the 1.25-expanded cubes, normalized to a partition
   of unity.  All evaluation is templated on the scalar, so dual towers give
   exact derivatives of E_r f. */

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "dbarlab/dual.hpp"

namespace dbarlab {

constexpr int kMaxDim = 8;

struct RealJet2 {
  int dim = 0;
  int order = 2;  // 0, 1, or 2
  double f = 0.0;
  std::array<double, kMaxDim> g{};            // gradient
  std::array<double, kMaxDim * kMaxDim> H{};  // hessian, row-major

  template <class S>
  S taylor(const double* p, const S* x) const {
    S r = S(f);
    if (order >= 1) {
      for (int i = 0; i < dim; ++i) r = r + g[i] * (x[i] - p[i]);
    }
    if (order >= 2) {
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
          r = r + (0.5 * H[i * dim + j]) * ((x[i] - p[i]) * (x[j] - p[j]));
    }
    return r;
  }
};

struct DistanceOracle {
  int dim = 0;
  std::function<double(const double*)> dist;        // distance to F, 0 on F
  std::function<void(const double*, double*)> foot; // a nearest point of F
};

struct JetSource {
  int order = 2;
  std::function<RealJet2(const double*)> jet;  // order-r jet at a point of F
};

struct WhitneyParams {
  int dim = 0;
  std::array<double, kMaxDim> lo{}, hi{};  // root box (F inside, queries inside)
  int max_level = 40;
  double min_side = 1e-9;
};

struct WhitneyCube {
  int level = 0;
  std::array<std::int32_t, kMaxDim> idx{};
  std::array<double, kMaxDim> center{};
  double side = 0.0;
};

struct ActiveCube {
  std::array<double, kMaxDim> center{};
  double side = 0.0;
  std::array<double, kMaxDim> foot{};
  RealJet2 jet;
};

// C-infinity bump, b(0)=1, supported on |u|<1, all derivatives vanish at +-1
template <class S>
S bump1d(const S& u) {
  double ug = ground_real(u);
  if (ug * ug >= 1.0) return S(0.0);
  return exp_s(1.0 - 1.0 / (1.0 - u * u));
}

class WhitneyField {
 public:
  WhitneyField(WhitneyParams params, DistanceOracle dist, JetSource jets);

  int dim() const { return par_.dim; }
  const WhitneyParams& params() const { return par_; }
  double distance(const double* x) const { return dist_.dist(x); }

  // cubes whose expanded support contains x (x strictly exterior to F)
  std::vector<ActiveCube> active_cubes(const double* x) const;

  // E_r f; x may be anywhere in the root box (on F returns the jet value)
  template <class S>
  S eval(const S* x) const {
    const int d = par_.dim;
    std::array<double, kMaxDim> xg{};
    for (int i = 0; i < d; ++i) xg[i] = ground_real(x[i]);
    double dst = dist_.dist(xg.data());
    if (dst <= 0.0) return S(jets_.jet(xg.data()).f);
    auto cubes = active_cubes(xg.data());
    S num = S(0.0), den = S(0.0);
    for (const auto& c : cubes) {
      double reach = 0.625 * c.side;
      S eta = S(1.0);
      bool dead = false;
      for (int i = 0; i < d; ++i) {
        S u = (x[i] - c.center[i]) / reach;
        double ugr = ground_real(u);
        if (ugr * ugr >= 1.0) { dead = true; break; }
        eta = eta * bump1d(u);
      }
      if (dead) continue;
      num = num + eta * c.jet.taylor(c.foot.data(), x);
      den = den + eta;
    }
    if (ground_real(den) <= 0.0)
      throw std::runtime_error("whitney: point not covered by cutoff supports");
    return num / den;
  }

  double operator()(const double* x) const { return eval<double>(x); }

  // explicit enumeration down to min_side (tests/diagnostics); cubes with
  // side < min_side that would still need splitting are counted, not emitted
  std::vector<WhitneyCube> enumerate(double min_side, std::size_t max_cubes,
                                     std::size_t* unresolved = nullptr) const;

  double cube_center_dist(const WhitneyCube& q) const;

 private:
  struct CubeKey {
    std::int32_t level;
    std::array<std::int32_t, kMaxDim> idx;
    bool operator==(const CubeKey&) const = default;
  };
  struct CubeKeyHash {
    std::size_t operator()(const CubeKey& k) const {
      std::size_t h = std::hash<std::int32_t>()(k.level);
      for (auto v : k.idx) h = h * 1000003u + std::hash<std::int32_t>()(v);
      return h;
    }
  };

  double root_side() const { return root_side_; }
  void cube_geometry(const CubeKey& k, double* center, double& side) const;
  bool selected(const CubeKey& k) const;     // predicate + parent failure
  bool predicate(const CubeKey& k) const;    // dist(center) >= 1.5 diam
  const ActiveCube& cube_data(const CubeKey& k) const;

  WhitneyParams par_;
  DistanceOracle dist_;
  JetSource jets_;
  double root_side_ = 0.0;
  std::array<double, kMaxDim> root_lo_{};
  mutable std::unordered_map<CubeKey, bool, CubeKeyHash> pred_memo_;
  mutable std::unordered_map<CubeKey, ActiveCube, CubeKeyHash> data_memo_;
};

// lattice mask -> distance oracle (exact nearest masked point, brute force
// over the mask boundary; intended for small test lattices)
DistanceOracle mask_distance_oracle(int dim, const std::array<double, kMaxDim>& origin,
                                    double h, const std::vector<std::array<std::int32_t, kMaxDim>>& points);

}  // namespace dbarlab

#endif
