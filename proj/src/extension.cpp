#include "dbarlab/extension.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "dbarlab/fit.hpp"

namespace dbarlab {

namespace {

std::string point_str(const double* x, int d) {
  std::string s = "(";
  char buf[32];
  for (int i = 0; i < d; ++i) {
    std::snprintf(buf, sizeof buf, "%.6g", x[i]);
    s += buf;
    if (i + 1 < d) s += ", ";
  }
  return s + ")";
}

double factorial(int k) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

int alpha_norm(const std::array<int, kMaxDim>& a, int dim) {
  int s = 0;
  for (int i = 0; i < dim; ++i) s += a[i];
  return s;
}

int alpha_index(const JetField& jf, const std::array<int, kMaxDim>& a) {
  for (std::size_t k = 0; k < jf.alphas.size(); ++k)
    if (jf.alphas[k] == a) return int(k);
  return -1;
}

}  // namespace

// ------------------------------------------------------------------ lattices

bool Lattice::snap(const double* x, int* idx) const {
  for (int i = 0; i < dim; ++i) {
    double u = (x[i] - origin[i]) / h;
    long r = std::lround(u);
    if (std::abs(u - double(r)) > 1e-9 * std::max(1.0, std::abs(u))) return false;
    if (r < 0 || r >= shape[i]) return false;
    idx[i] = int(r);
  }
  return true;
}

Lattice make_lattice(int dim, const double* lo, const double* hi, double h) {
  if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("lattice dim out of range");
  if (h <= 0.0) throw std::invalid_argument("lattice spacing must be positive");
  Lattice lat;
  lat.dim = dim;
  lat.h = h;
  for (int i = 0; i < dim; ++i) {
    lat.origin[i] = lo[i];
    lat.shape[i] = int(std::floor((hi[i] - lo[i]) / h + 1e-9)) + 1;
    if (lat.shape[i] < 2) throw std::invalid_argument("lattice axis has fewer than 2 points");
  }
  return lat;
}

std::vector<std::uint8_t> lattice_mask(const Lattice& lat,
                                       const std::function<bool(const double*)>& inside) {
  std::vector<std::uint8_t> mask(lat.size(), 0);
  std::array<double, kMaxDim> x{};
  for (std::size_t f = 0; f < mask.size(); ++f) {
    lat.point(f, x.data());
    mask[f] = inside(x.data()) ? 1 : 0;
  }
  return mask;
}

// ------------------------------------------- scalar fields from expressions

RealJet2 RealExprField::jet2(const double* x, int order) const {
  const int d = 2 * n;
  RealJet2 jet;
  jet.dim = d;
  jet.order = order;
  jet.f = eval<double>(x);
  using D1 = Dual<double>;
  using D2 = Dual<D1>;
  if (order >= 1) {
    std::array<D1, kMaxDim> X{};
    for (int i = 0; i < d; ++i) X[i] = D1(x[i]);
    for (int i = 0; i < d; ++i) {
      X[i].d = 1.0;
      jet.g[i] = eval<D1>(X.data()).d;
      X[i].d = 0.0;
    }
  }
  if (order >= 2) {
    std::array<D2, kMaxDim> X{};
    for (int i = 0; i < d; ++i) X[i] = D2(D1(x[i]));
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        X[i].v.d = 1.0;
        X[j].d = D1(1.0);
        double hij = eval<D2>(X.data()).d.d;
        jet.H[i * d + j] = jet.H[j * d + i] = hij;
        X[i].v.d = 0.0;
        X[j].d = D1(0.0);
      }
  }
  return jet;
}

// ---------------------------------------------------------------- jet fields

std::vector<std::array<int, kMaxDim>> multi_indices_upto(int dim, int r) {
  std::vector<std::array<int, kMaxDim>> out;
  std::array<int, kMaxDim> a{};
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == dim - 1) {
      a[i] = left;
      out.push_back(a);
      a[i] = 0;
      return;
    }
    for (int v = left; v >= 0; --v) {
      a[i] = v;
      rec(i + 1, left - v);
    }
    a[i] = 0;
  };
  for (int deg = 0; deg <= r; ++deg) rec(0, deg);
  return out;
}

JetField jets_from_function(const Lattice& lat, const std::vector<std::uint8_t>& mask,
                            const RealExprField& f, int order) {
  if (order < 0 || order > 2) throw std::invalid_argument("jet order must be 0, 1 or 2");
  if (2 * f.n != lat.dim) throw std::invalid_argument("field dimension mismatch");
  if (mask.size() != lat.size()) throw std::invalid_argument("mask size mismatch");
  JetField jf;
  jf.lat = lat;
  jf.mask = mask;
  jf.order = order;
  jf.alphas = multi_indices_upto(lat.dim, order);
  jf.samples.assign(jf.alphas.size(), std::vector<double>(lat.size(), 0.0));
  std::array<double, kMaxDim> x{};
  for (std::size_t fl = 0; fl < mask.size(); ++fl) {
    if (!mask[fl]) continue;
    lat.point(fl, x.data());
    RealJet2 jet = f.jet2(x.data(), order);
    for (std::size_t a = 0; a < jf.alphas.size(); ++a) {
      const auto& al = jf.alphas[a];
      int nm = alpha_norm(al, lat.dim);
      double v = 0.0;
      if (nm == 0) {
        v = jet.f;
      } else if (nm == 1) {
        for (int i = 0; i < lat.dim; ++i)
          if (al[i] == 1) v = jet.g[i];
      } else {  // nm == 2
        int i0 = -1, j0 = -1;
        for (int i = 0; i < lat.dim; ++i) {
          if (al[i] == 2) { i0 = j0 = i; }
          if (al[i] == 1) { (i0 < 0 ? i0 : j0) = i; }
        }
        v = jet.H[i0 * lat.dim + j0];
      }
      jf.samples[a][fl] = v;
    }
  }
  return jf;
}

JetField jets_from_samples(const Lattice& lat, const std::vector<std::uint8_t>& mask,
                           const std::vector<double>& f0, int order, std::size_t* warnings) {
  if (order < 0 || order > 2) throw std::invalid_argument("jet order must be 0, 1 or 2");
  if (mask.size() != lat.size() || f0.size() != lat.size())
    throw std::invalid_argument("sample array size mismatch");
  JetField jf;
  jf.lat = lat;
  jf.mask = mask;
  jf.order = order;
  jf.alphas = multi_indices_upto(lat.dim, order);
  jf.samples.assign(jf.alphas.size(), std::vector<double>(lat.size(), 0.0));
  std::size_t warn = 0;
  const int d = lat.dim;
  const double h = lat.h;
  std::array<int, kMaxDim> idx{};

  auto masked_at = [&](std::array<int, kMaxDim> q) -> bool {
    for (int i = 0; i < d; ++i)
      if (q[i] < 0 || q[i] >= lat.shape[i]) return false;
    return mask[lat.flat(q.data())] != 0;
  };
  auto value_at = [&](std::array<int, kMaxDim> q) -> double { return f0[lat.flat(q.data())]; };
  auto shifted = [&](std::array<int, kMaxDim> q, int axis, int by) {
    q[axis] += by;
    return q;
  };

  for (std::size_t fl = 0; fl < mask.size(); ++fl) {
    if (!mask[fl]) continue;
    lat.unflat(fl, idx.data());
    jf.samples[0][fl] = f0[fl];
    if (order < 1) continue;
    for (std::size_t a = 0; a < jf.alphas.size(); ++a) {
      const auto& al = jf.alphas[a];
      int nm = alpha_norm(al, d);
      if (nm == 0) continue;
      double v = 0.0;
      if (nm == 1) {
        int ax = 0;
        for (int i = 0; i < d; ++i)
          if (al[i] == 1) ax = i;
        auto p1 = shifted(idx, ax, 1), m1 = shifted(idx, ax, -1);
        auto p2 = shifted(idx, ax, 2), m2 = shifted(idx, ax, -2);
        if (masked_at(p1) && masked_at(m1)) {
          v = (value_at(p1) - value_at(m1)) / (2 * h);
        } else if (masked_at(p1) && masked_at(p2)) {
          v = (-3 * f0[fl] + 4 * value_at(p1) - value_at(p2)) / (2 * h);
        } else if (masked_at(m1) && masked_at(m2)) {
          v = (3 * f0[fl] - 4 * value_at(m1) + value_at(m2)) / (2 * h);
        } else if (masked_at(p1)) {
          v = (value_at(p1) - f0[fl]) / h;
          ++warn;
        } else if (masked_at(m1)) {
          v = (f0[fl] - value_at(m1)) / h;
          ++warn;
        } else {
          ++warn;
        }
      } else if (nm == 2) {
        int i0 = -1, j0 = -1;
        for (int i = 0; i < d; ++i) {
          if (al[i] == 2) { i0 = j0 = i; }
          if (al[i] == 1) { (i0 < 0 ? i0 : j0) = i; }
        }
        if (i0 == j0) {
          auto p1 = shifted(idx, i0, 1), m1 = shifted(idx, i0, -1);
          auto p2 = shifted(idx, i0, 2), m2 = shifted(idx, i0, -2);
          if (masked_at(p1) && masked_at(m1)) {
            v = (value_at(p1) - 2 * f0[fl] + value_at(m1)) / (h * h);
          } else if (masked_at(p1) && masked_at(p2)) {
            v = (f0[fl] - 2 * value_at(p1) + value_at(p2)) / (h * h);
            ++warn;
          } else if (masked_at(m1) && masked_at(m2)) {
            v = (f0[fl] - 2 * value_at(m1) + value_at(m2)) / (h * h);
            ++warn;
          } else {
            ++warn;
          }
        } else {
          auto pp = shifted(shifted(idx, i0, 1), j0, 1);
          auto pm = shifted(shifted(idx, i0, 1), j0, -1);
          auto mp = shifted(shifted(idx, i0, -1), j0, 1);
          auto mm = shifted(shifted(idx, i0, -1), j0, -1);
          if (masked_at(pp) && masked_at(pm) && masked_at(mp) && masked_at(mm)) {
            v = (value_at(pp) - value_at(pm) - value_at(mp) + value_at(mm)) / (4 * h * h);
          } else {
            ++warn;
          }
        }
      }
      jf.samples[a][fl] = v;
    }
  }
  if (warnings) *warnings = warn;
  return jf;
}

double jet_compat_error(const JetField& jf) {
  const int d = jf.lat.dim;
  const double h = jf.lat.h;
  double worst = 0.0;
  std::array<int, kMaxDim> idx{};
  for (std::size_t fl = 0; fl < jf.mask.size(); ++fl) {
    if (!jf.mask[fl]) continue;
    jf.lat.unflat(fl, idx.data());
    for (int ax = 0; ax < d; ++ax) {
      auto q = idx;
      q[ax] += 1;
      if (q[ax] >= jf.lat.shape[ax]) continue;
      std::size_t fp = jf.lat.flat(q.data());
      q[ax] -= 2;
      if (q[ax] < 0) continue;
      std::size_t fm = jf.lat.flat(q.data());
      if (!jf.mask[fp] || !jf.mask[fm]) continue;
      std::array<int, kMaxDim> ea{};
      ea[ax] = 1;
      int a = alpha_index(jf, ea);
      if (a < 0) continue;
      double fd = (jf.samples[0][fp] - jf.samples[0][fm]) / (2 * h);
      worst = std::max(worst, std::abs(fd - jf.samples[std::size_t(a)][fl]));
    }
  }
  return worst;
}

WhitneyAReport measure_whitney_A(const JetField& jf, std::size_t pair_budget,
                                 std::uint64_t seed) {
  const int d = jf.lat.dim;
  const int r = jf.order;
  std::vector<std::size_t> masked;
  for (std::size_t fl = 0; fl < jf.mask.size(); ++fl)
    if (jf.mask[fl]) masked.push_back(fl);
  WhitneyAReport rep;
  if (masked.size() < 2) return rep;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, masked.size() - 1);
  std::array<double, kMaxDim> x{}, p{};
  for (std::size_t trial = 0; trial < pair_budget; ++trial) {
    std::size_t fx = masked[pick(rng)], fp = masked[pick(rng)];
    if (fx == fp) continue;
    jf.lat.point(fx, x.data());
    jf.lat.point(fp, p.data());
    double dist = 0.0;
    for (int i = 0; i < d; ++i) dist += (x[i] - p[i]) * (x[i] - p[i]);
    dist = std::sqrt(dist);
    for (std::size_t a = 0; a < jf.alphas.size(); ++a) {
      const auto& al = jf.alphas[a];
      int na = alpha_norm(al, d);
      // R_alpha(x,p) = f^(alpha)(x) - sum_{|alpha+beta|<=r} f^(alpha+beta)(p) (x-p)^beta / beta!
      double taylor = 0.0;
      for (std::size_t b = 0; b < jf.alphas.size(); ++b) {
        const auto& be = jf.alphas[b];
        std::array<int, kMaxDim> ab{};
        int nab = 0;
        for (int i = 0; i < d; ++i) {
          ab[i] = al[i] + be[i];
          nab += ab[i];
        }
        if (nab > r) continue;
        int k = alpha_index(jf, ab);
        if (k < 0) continue;
        double term = jf.samples[std::size_t(k)][fp];
        for (int i = 0; i < d; ++i) {
          for (int rep2 = 0; rep2 < be[i]; ++rep2) term *= (x[i] - p[i]);
          term /= factorial(be[i]);
        }
        taylor += term;
      }
      double rem = std::abs(jf.samples[a][fx] - taylor);
      double ratio = rem / std::pow(dist, double(r - na));
      if (ratio > rep.A) {
        rep.A = ratio;
        for (int i = 0; i < d; ++i) {
          rep.worst_x[i] = x[i];
          rep.worst_p[i] = p[i];
          rep.worst_alpha[i] = al[i];
        }
      }
    }
  }
  return rep;
}

RealJet2 jet_at_lattice_point(const JetField& jf, const double* p) {
  std::array<int, kMaxDim> idx{};
  if (!jf.lat.snap(p, idx.data()))
    throw std::runtime_error("jet lookup: point is not a lattice point");
  std::size_t fl = jf.lat.flat(idx.data());
  if (!jf.mask[fl]) throw std::runtime_error("jet lookup: lattice point is outside the mask");
  const int d = jf.lat.dim;
  RealJet2 jet;
  jet.dim = d;
  jet.order = jf.order;
  jet.f = jf.samples[0][fl];
  std::array<int, kMaxDim> a{};
  if (jf.order >= 1) {
    for (int i = 0; i < d; ++i) {
      a.fill(0);
      a[i] = 1;
      int k = alpha_index(jf, a);
      jet.g[i] = jf.samples[std::size_t(k)][fl];
    }
  }
  if (jf.order >= 2) {
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        a.fill(0);
        a[i] += 1;
        a[j] += 1;
        int k = alpha_index(jf, a);
        jet.H[i * d + j] = jet.H[j * d + i] = jf.samples[std::size_t(k)][fl];
      }
  }
  return jet;
}

// ------------------------------------------------------- cube decompositions

namespace {

// phi_k = eta_k / sum eta over the active cubes at x; templated for towers
template <class S>
S cutoff_phi(const std::vector<ActiveCube>& active, std::size_t k, int d, const S* x) {
  S num = S(0.0), den = S(0.0);
  for (std::size_t c = 0; c < active.size(); ++c) {
    double reach = 0.625 * active[c].side;
    S eta = S(1.0);
    bool dead = false;
    for (int i = 0; i < d; ++i) {
      S u = (x[i] - active[c].center[i]) / reach;
      double ug = ground_real(u);
      if (ug * ug >= 1.0) { dead = true; break; }
      eta = eta * bump1d(u);
    }
    if (dead) continue;
    den = den + eta;
    if (c == k) num = eta;
  }
  return num / den;
}

}  // namespace

WhitneyCubeSet whitney_decompose(const Lattice& lat, const std::vector<std::uint8_t>& mask,
                                 double collar, std::size_t max_cubes) {
  if (mask.size() != lat.size()) throw std::invalid_argument("mask size mismatch");
  const int d = lat.dim;
  std::vector<std::array<std::int32_t, kMaxDim>> pts;
  {
    std::array<int, kMaxDim> idx{};
    for (std::size_t fl = 0; fl < mask.size(); ++fl) {
      if (!mask[fl]) continue;
      lat.unflat(fl, idx.data());
      std::array<std::int32_t, kMaxDim> q{};
      for (int i = 0; i < d; ++i) q[i] = idx[i];
      pts.push_back(q);
    }
  }
  if (pts.empty()) throw std::invalid_argument("whitney_decompose: empty mask");
  DistanceOracle oracle = mask_distance_oracle(d, lat.origin, lat.h, pts);

  WhitneyParams par;
  par.dim = d;
  double margin = collar + 2 * lat.h;
  for (int i = 0; i < d; ++i) {
    par.lo[i] = lat.origin[i] - margin;
    par.hi[i] = lat.origin[i] + lat.h * (lat.shape[i] - 1) + margin;
  }
  par.max_level = 48;
  par.min_side = lat.h / 16.0;
  JetSource dummy;
  dummy.order = 0;
  dummy.jet = [d](const double*) {
    RealJet2 j;
    j.dim = d;
    j.order = 0;
    return j;
  };
  auto field = std::make_shared<WhitneyField>(par, oracle, dummy);

  WhitneyCubeSet cs;
  cs.dim = d;
  cs.field = field;
  std::size_t unresolved = 0;
  cs.cubes = field->enumerate(par.min_side, max_cubes, &unresolved);

  cs.min_dist_ratio = std::numeric_limits<double>::infinity();
  cs.max_dist_ratio = 0.0;
  cs.feet.reserve(cs.cubes.size());
  for (const auto& q : cs.cubes) {
    double dc = field->cube_center_dist(q);
    double diam = q.side * std::sqrt(double(d));
    cs.min_dist_ratio = std::min(cs.min_dist_ratio, (dc - 0.5 * diam) / diam);
    cs.max_dist_ratio = std::max(cs.max_dist_ratio, (dc + 0.5 * diam) / diam);
    std::array<double, kMaxDim> foot{};
    oracle.foot(q.center.data(), foot.data());
    cs.feet.push_back(foot);
  }

  // coverage of the collar + overlap + partition diagnostics
  std::array<double, kMaxDim> x{};
  std::size_t uncovered = 0;
  std::array<double, kMaxDim> worst{};
  std::vector<std::size_t> covered;
  for (std::size_t fl = 0; fl < mask.size(); ++fl) {
    if (mask[fl]) continue;
    lat.point(fl, x.data());
    double dst = oracle.dist(x.data());
    if (dst > collar) continue;
    try {
      auto active = field->active_cubes(x.data());
      cs.n0 = std::max(cs.n0, int(active.size()));
      double s = 0.0;
      for (std::size_t k = 0; k < active.size(); ++k)
        s += cutoff_phi<double>(active, k, d, x.data());
      cs.partition_dev = std::max(cs.partition_dev, std::abs(s - 1.0));
      covered.push_back(fl);
    } catch (const std::runtime_error&) {
      ++uncovered;
      worst = x;
    }
  }
  if (uncovered > 0)
    throw std::runtime_error(
        "whitney_decompose: " + std::to_string(uncovered) +
        " exterior lattice points too close to F for certified cubes (e.g. " +
        point_str(worst.data(), d) + "); reduce the lattice spacing h");

  // sampled cutoff derivative bounds (axis partials via nested duals)
  using D1 = Dual<double>;
  using D2 = Dual<D1>;
  std::size_t stride = std::max<std::size_t>(1, covered.size() / 64);
  for (std::size_t s = 0; s < covered.size(); s += stride) {
    lat.point(covered[s], x.data());
    auto active = field->active_cubes(x.data());
    for (std::size_t k = 0; k < active.size(); ++k) {
      double side = active[k].side;
      double p0 = std::abs(cutoff_phi<double>(active, k, d, x.data()));
      cs.cutoff_deriv_bounds[0] = std::max(cs.cutoff_deriv_bounds[0], p0);
      std::array<D1, kMaxDim> X1{};
      for (int i = 0; i < d; ++i) X1[i] = D1(x[i]);
      for (int i = 0; i < d; ++i) {
        X1[i].d = 1.0;
        double p1 = std::abs(cutoff_phi<D1>(active, k, d, X1.data()).d);
        cs.cutoff_deriv_bounds[1] = std::max(cs.cutoff_deriv_bounds[1], p1 * side);
        X1[i].d = 0.0;
      }
      std::array<D2, kMaxDim> X2{};
      for (int i = 0; i < d; ++i) X2[i] = D2(D1(x[i]));
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
          X2[i].v.d = 1.0;
          X2[j].d = D1(1.0);
          double p2 = std::abs(cutoff_phi<D2>(active, k, d, X2.data()).d.d);
          cs.cutoff_deriv_bounds[2] = std::max(cs.cutoff_deriv_bounds[2], p2 * side * side);
          X2[i].v.d = 0.0;
          X2[j].d = D1(0.0);
        }
    }
  }
  return cs;
}

// ---------------------------------------------------------------- extensions

WhitneyExtension whitney_extension(JetField jets, const WhitneyCubeSet& cubes,
                                   double far_cutoff, double a_tol) {
  if (jets.lat.dim != cubes.dim) throw std::invalid_argument("jet/cube dimension mismatch");
  if (std::isfinite(a_tol)) {
    WhitneyAReport rep = measure_whitney_A(jets, 20000, 1297);
    jets.whitney_A = rep.A;
    if (rep.A > a_tol)
      throw std::runtime_error("incompatible jets: remainder constant " +
                               std::to_string(rep.A) + " > " + std::to_string(a_tol) +
                               " at x=" + point_str(rep.worst_x.data(), jets.lat.dim) +
                               ", p=" + point_str(rep.worst_p.data(), jets.lat.dim));
  }
  WhitneyExtension ext;
  ext.jets = std::make_shared<const JetField>(std::move(jets));
  ext.field = cubes.field;
  ext.cubes = cubes.cubes;
  ext.far_cutoff = far_cutoff;
  return ext;
}

ExtensionField whitney_extend(const WhitneyExtension& ext, double collar) {
  const Lattice& lat = ext.jets->lat;
  ExtensionField out;
  out.lat = lat;
  out.provenance = ExtensionProvenance::WhitneyEr;
  out.values.assign(lat.size(), 0.0);
  out.support.assign(lat.size(), 0);
  std::array<double, kMaxDim> x{};
  for (std::size_t fl = 0; fl < lat.size(); ++fl) {
    if (ext.jets->mask[fl]) {
      out.values[fl] = ext.jets->samples[0][fl];  // exact copy on F
      out.support[fl] = 1;
      continue;
    }
    lat.point(fl, x.data());
    if (ext.field->distance(x.data()) > collar) continue;
    out.values[fl] = ext.eval<double>(x.data());
    out.support[fl] = 1;
  }
  return out;
}

namespace {

template <class S>
S eval_along_dir(const WhitneyExtension& E, const double* x, const double* u, int d,
                 const S& s) {
  std::array<S, kMaxDim> X{};
  for (int i = 0; i < d; ++i) X[i] = S(x[i]) + s * u[i];
  return E.eval(X.data());
}

double directional_deriv(const WhitneyExtension& E, const double* x, const double* u, int d,
                         int k) {
  using D1 = Dual<double>;
  using D2 = Dual<D1>;
  using D3 = Dual<D2>;
  using D4 = Dual<D3>;
  switch (k) {
    case 1: {
      D1 s(0.0, 1.0);
      return eval_along_dir(E, x, u, d, s).d;
    }
    case 2: {
      D2 s(D1(0.0, 1.0), D1(1.0));
      return eval_along_dir(E, x, u, d, s).d.d;
    }
    case 3: {
      D3 s(D2(D1(0.0, 1.0), D1(1.0)), D2(D1(1.0)));
      return eval_along_dir(E, x, u, d, s).d.d.d;
    }
    case 4: {
      D4 s(D3(D2(D1(0.0, 1.0), D1(1.0)), D2(D1(1.0))), D3(D2(D1(1.0))));
      return eval_along_dir(E, x, u, d, s).d.d.d.d;
    }
    default:
      throw std::invalid_argument("directional derivative order must be 1..4");
  }
}

}  // namespace

GrowthReport whitney_growth_sweep(const WhitneyExtension& ext, int k,
                                  const std::vector<std::array<double, kMaxDim>>& bases,
                                  const std::vector<std::array<double, kMaxDim>>& dirs,
                                  const std::vector<double>& dists, int dir_probes,
                                  std::uint64_t seed) {
  if (bases.size() != dirs.size()) throw std::invalid_argument("bases/dirs size mismatch");
  const int d = ext.field->dim();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GrowthReport rep;
  rep.k = k;
  std::array<double, kMaxDim> x{}, u{};
  for (double dist : dists) {
    double worst = 0.0;
    for (std::size_t b = 0; b < bases.size(); ++b) {
      for (int i = 0; i < d; ++i) x[i] = bases[b][i] + dist * dirs[b][i];
      for (int pr = 0; pr < dir_probes; ++pr) {
        double nrm = 0.0;
        for (int i = 0; i < d; ++i) {
          u[i] = gauss(rng);
          nrm += u[i] * u[i];
        }
        nrm = std::sqrt(nrm);
        for (int i = 0; i < d; ++i) u[i] /= nrm;
        worst = std::max(worst, std::abs(directional_deriv(ext, x.data(), u.data(), d, k)));
      }
    }
    rep.points.push_back({dist, worst});
  }
  std::vector<double> xs, ys;
  for (const auto& p : rep.points) {
    xs.push_back(p.d);
    ys.push_back(p.deriv_max);
  }
  rep.slope = loglog_slope(xs, ys);
  return rep;
}

RemainderReport taylor_remainder_bound(const RealExprField& f, const Lattice& lat,
                                       const std::vector<std::uint8_t>& mask, const double* p,
                                       int k) {
  if (k < 1 || k > 2) throw std::invalid_argument("remainder order must be 1 or 2");
  if (mask.size() != lat.size()) throw std::invalid_argument("mask size mismatch");
  const int d = lat.dim;
  RealJet2 jp = f.jet2(p, k);
  jp.order = k;
  RemainderReport rep;
  std::array<double, kMaxDim> x{};
  for (std::size_t fl = 0; fl < mask.size(); ++fl) {
    if (!mask[fl]) continue;
    lat.point(fl, x.data());
    double dist = 0.0;
    for (int i = 0; i < d; ++i) dist += (x[i] - p[i]) * (x[i] - p[i]);
    dist = std::sqrt(dist);
    // sup-modulus of the k-th derivatives over the mask
    RealJet2 jx = f.jet2(x.data(), k);
    if (k == 1) {
      for (int i = 0; i < d; ++i) rep.sup_modulus = std::max(rep.sup_modulus, std::abs(jx.g[i]));
    } else {
      for (int i = 0; i < d * d; ++i)
        rep.sup_modulus = std::max(rep.sup_modulus, std::abs(jx.H[i]));
    }
    if (dist == 0.0) continue;
    double rem = std::abs(f(x.data()) - jp.taylor(p, x.data()));
    double ratio = rem / std::pow(dist, double(k));
    if (ratio > rep.raw_ratio) {
      rep.raw_ratio = ratio;
      rep.worst_x = x;
    }
  }
  rep.c_ratio = rep.sup_modulus > 1e-300 ? rep.raw_ratio / rep.sup_modulus : 0.0;
  return rep;
}

ExtensionField stein_extend_lattice(const SteinPath& sp, const MomentKernel& mk,
                                    const Lattice& lat, const std::vector<std::uint8_t>& mask,
                                    const RealExprField& f, double collar) {
  if (mask.size() != lat.size()) throw std::invalid_argument("mask size mismatch");
  Domain dom(sp.spec());
  double depth = std::min(collar, sp.delta_used());
  ExtensionField out;
  out.lat = lat;
  out.provenance = ExtensionProvenance::SteinE;
  out.values.assign(lat.size(), 0.0);
  out.support.assign(lat.size(), 0);
  auto fn = [&](const double* y) { return f.eval<double>(y); };
  std::array<double, kMaxDim> x{};
  for (std::size_t fl = 0; fl < lat.size(); ++fl) {
    lat.point(fl, x.data());
    if (mask[fl]) {
      out.values[fl] = f.eval<double>(x.data());  // branch agrees exactly on F
      out.support[fl] = 1;
      continue;
    }
    if (dom.signed_distance(x.data()) > depth) continue;
    out.values[fl] = stein_extend_eval(sp, mk, fn, x.data());
    out.support[fl] = 1;
  }
  return out;
}

// ------------------------------------------------------------------- cutoff

ChiCutoff build_chi(const Domain& dom, double delta, int samples, std::uint64_t seed) {
  if (delta <= 0.0) throw std::invalid_argument("build_chi: collar depth must be positive");
  const int d = dom.rdim();
  auto bpts = dom.sample_boundary(samples, seed);
  using D1 = Dual<double>;

  auto normal_at = [&](const double* b, double* nu) {
    std::array<D1, kMaxDim> X{};
    for (int i = 0; i < d; ++i) X[i] = D1(b[i]);
    double nrm = 0.0;
    for (int i = 0; i < d; ++i) {
      X[i].d = 1.0;
      nu[i] = rho0_eval_real(dom.spec(), X.data()).d;
      X[i].d = 0.0;
      nrm += nu[i] * nu[i];
    }
    nrm = std::sqrt(nrm);
    for (int i = 0; i < d; ++i) nu[i] /= nrm;
  };

  std::array<double, kMaxDim> nu{}, y{};
  double min_rho = std::numeric_limits<double>::infinity();
  for (const auto& b : bpts) {
    normal_at(b.data(), nu.data());
    // s with signed_distance(b + s nu) = delta (bisection; sd(b+s nu) <= s)
    double shi = delta;
    auto sd_at = [&](double s) {
      for (int i = 0; i < d; ++i) y[i] = b[i] + s * nu[i];
      return dom.signed_distance(y.data());
    };
    int guard = 0;
    while (sd_at(shi) < delta && ++guard < 64) shi *= 1.3;
    if (guard >= 64) throw std::runtime_error("build_chi: could not bracket the collar depth");
    double slo = 0.0;
    for (int it = 0; it < 80; ++it) {
      double smid = 0.5 * (slo + shi);
      (sd_at(smid) < delta ? slo : shi) = smid;
    }
    for (int i = 0; i < d; ++i) y[i] = b[i] + shi * nu[i];
    min_rho = std::min(min_rho, dom.rho0(y.data()));
  }
  if (!(min_rho > 0.0)) throw std::runtime_error("build_chi: degenerate rho0 level");

  ChiCutoff chi;
  chi.spec = dom.spec();
  chi.l1 = 0.6 * min_rho;
  chi.l0 = 0.4 * chi.l1;

  // audit: the level set {rho0 = l1} (outer edge of supp chi) stays strictly
  // inside the certified collar {sd < delta}
  double worst_sd = 0.0;
  for (const auto& b : bpts) {
    normal_at(b.data(), nu.data());
    double r = dom.ray_rho0_crossing(b.data(), nu.data(), chi.l1, 0.25 * delta);
    for (int i = 0; i < d; ++i) y[i] = b[i] + r * nu[i];
    worst_sd = std::max(worst_sd, dom.signed_distance(y.data()));
  }
  if (worst_sd >= delta * (1.0 - 1e-9))
    throw std::runtime_error("build_chi: cutoff support leaks past the certified collar");
  chi.delta_support = worst_sd;
  return chi;
}

// ------------------------------------------------- coefficient functions

std::vector<std::uint32_t> masks_of_degree(int n, int q) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t m = 0; m < (1u << unsigned(n)); ++m)
    if (std::popcount(m) == q) out.push_back(m);
  return out;
}

void CoeffForm::add(std::uint32_t mask, ExprPtr f) {
  if (!f) throw std::invalid_argument("null coefficient");
  if (mask >= (1u << unsigned(n))) throw std::invalid_argument("index set out of range");
  if (std::popcount(mask) != q) throw std::invalid_argument("index set degree mismatch");
  int mz = 0, mt = 0;
  expr_var_extent(f, mz, mt);
  if (mz > n || mt > m) throw std::invalid_argument("coefficient references unknown variables");
  for (auto& tpair : terms)
    if (tpair.first == mask) {
      tpair.second = std::move(f);
      return;
    }
  terms.emplace_back(mask, std::move(f));
}

const ExprPtr* CoeffForm::find(std::uint32_t mask) const {
  for (const auto& t : terms)
    if (t.first == mask) return &t.second;
  return nullptr;
}

CoeffFn CoeffForm::coeff(std::uint32_t mask) const {
  CoeffFn fn;
  fn.n = n;
  fn.m = m;
  if (const ExprPtr* f = find(mask)) fn.items.push_back({1.0, -1, *f});
  return fn;
}

CoeffFn CoeffForm::dbar_coeff(std::uint32_t maskM) const {
  if (std::popcount(maskM) != q + 1)
    throw std::invalid_argument("dbar coefficient degree mismatch");
  CoeffFn fn;
  fn.n = n;
  fn.m = m;
  for (int j = 0; j < n; ++j) {
    if (!((maskM >> unsigned(j)) & 1u)) continue;
    std::uint32_t maskI = maskM & ~(1u << unsigned(j));
    if (const ExprPtr* f = find(maskI)) fn.items.push_back({mask_sign(maskI, j), j, *f});
  }
  return fn;
}

// --------------------------------------------------- Stein extension operator

ExtensionOp::ExtensionOp(const DomainSpec& spec, double safety, int chi_samples,
                         std::uint64_t seed)
    : dom_(spec),
      kernel_(build_moment_kernel()),
      path_(spec, kernel_, safety),
      chi_(build_chi(dom_, path_.delta_used(), chi_samples, seed)) {}

// ---------------------------------------------------------------- commutator

cdouble commutator_coeff_fd(const ExtensionOp& E, const CoeffForm& phi, std::uint32_t maskJ,
                            const double* x, const double* t, double h) {
  const int n = phi.n;
  const cdouble ii(0.0, 1.0);
  std::array<double, 2 * kMaxN> y{};
  for (int k = 0; k < 2 * n; ++k) y[k] = x[k];
  cdouble termA = 0.0;
  for (int j = 0; j < n; ++j) {
    if (!((maskJ >> unsigned(j)) & 1u)) continue;
    std::uint32_t maskI = maskJ & ~(1u << unsigned(j));
    CoeffFn fI = phi.coeff(maskI);
    if (fI.empty()) continue;
    double sgn = mask_sign(maskI, j);
    y[2 * j] = x[2 * j] + h;
    cdouble fxp = E.extend_chi(fI, y.data(), t);
    y[2 * j] = x[2 * j] - h;
    cdouble fxm = E.extend_chi(fI, y.data(), t);
    y[2 * j] = x[2 * j];
    y[2 * j + 1] = x[2 * j + 1] + h;
    cdouble fyp = E.extend_chi(fI, y.data(), t);
    y[2 * j + 1] = x[2 * j + 1] - h;
    cdouble fym = E.extend_chi(fI, y.data(), t);
    y[2 * j + 1] = x[2 * j + 1];
    termA += sgn * 0.5 * ((fxp - fxm) / (2 * h) + ii * (fyp - fym) / (2 * h));
  }
  CoeffFn fJ = phi.dbar_coeff(maskJ);
  return termA - E.extend_chi(fJ, x, t);
}

}  // namespace dbarlab
