#include "dbarlab/normlab.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dbarlab {

namespace {

constexpr int kScaleFloorLog2 = 14;  // dyadic offset floor and FD step: diam * 2^-14
constexpr std::size_t kShard = 4096;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t shard) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (shard + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

struct Pt {
  std::array<double, 8> x{};
};

// reflect a coordinate into [lo, hi] (billiard fold)
double fold(double v, double lo, double hi) {
  const double w = hi - lo;
  if (w <= 0.0) return lo;
  double s = std::fmod(v - lo, 2.0 * w);
  if (s < 0.0) s += 2.0 * w;
  return s <= w ? lo + s : hi - (s - w);
}

void unit_dir(std::mt19937_64& rng, int dim, double* d) {
  std::normal_distribution<double> g(0.0, 1.0);
  double nn = 0.0;
  do {
    nn = 0.0;
    for (int i = 0; i < dim; ++i) {
      d[i] = g(rng);
      nn += d[i] * d[i];
    }
  } while (nn < 1e-12);
  nn = std::sqrt(nn);
  for (int i = 0; i < dim; ++i) d[i] /= nn;
}

void uniform_in(std::mt19937_64& rng, const SampleBox& box, double margin, double* x) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < box.dim; ++i) {
    const double lo = box.lo[i] + margin, hi = box.hi[i] - margin;
    x[i] = hi > lo ? lo + (hi - lo) * u(rng) : 0.5 * (box.lo[i] + box.hi[i]);
  }
}

int dyadic_level(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> j(1, kScaleFloorLog2);
  return j(rng);
}

/* divided differences of f at x: order 0 = value, order 1 = gradient
   components, order 2 = upper-triangle Hessian entries; central stencils at
   step eta.  out must hold n_deriv_comps(dim, order) values. */
int n_deriv_comps(int dim, int order) {
  if (order == 0) return 1;
  if (order == 1) return dim;
  return dim * (dim + 1) / 2;
}

void fd_derivs(const FieldFn& f, int dim, const double* x, int order, double eta,
               double* out) {
  std::array<double, 8> p{};
  std::copy(x, x + dim, p.begin());
  if (order == 0) {
    out[0] = f(p.data());
    return;
  }
  if (order == 1) {
    for (int i = 0; i < dim; ++i) {
      const double xi = p[i];
      p[i] = xi + eta;
      const double fp = f(p.data());
      p[i] = xi - eta;
      const double fm = f(p.data());
      p[i] = xi;
      out[i] = (fp - fm) / (2.0 * eta);
    }
    return;
  }
  const double f0 = f(p.data());
  int c = 0;
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) {
      const double xi = p[i], xj = p[j];
      if (i == j) {
        p[i] = xi + eta;
        const double fp = f(p.data());
        p[i] = xi - eta;
        const double fm = f(p.data());
        p[i] = xi;
        out[c++] = (fp - 2.0 * f0 + fm) / (eta * eta);
      } else {
        p[i] = xi + eta;
        p[j] = xj + eta;
        const double fpp = f(p.data());
        p[j] = xj - eta;
        const double fpm = f(p.data());
        p[i] = xi - eta;
        const double fmm = f(p.data());
        p[j] = xj + eta;
        const double fmp = f(p.data());
        p[i] = xi;
        p[j] = xj;
        out[c++] = (fpp - fpm - fmp + fmm) / (4.0 * eta * eta);
      }
    }
}

void check_common(const SampleBox& box, std::size_t budget) {
  if (box.dim < 1 || box.dim > 8) throw std::invalid_argument("normlab: bad dimension");
  for (int i = 0; i < box.dim; ++i)
    if (!(box.hi[i] > box.lo[i])) throw std::invalid_argument("normlab: empty box");
  if (budget < 64)
    throw std::invalid_argument("normlab: budget too small for the pair-separation floor");
}

}  // namespace

SampleBox::SampleBox(int dim_, double half) : dim(dim_) {
  if (dim_ < 1 || dim_ > 8) throw std::invalid_argument("SampleBox: bad dimension");
  if (half <= 0.0) throw std::invalid_argument("SampleBox: bad half width");
  for (int i = 0; i < dim_; ++i) {
    lo[i] = -half;
    hi[i] = half;
  }
}

double SampleBox::diam() const {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) s += (hi[i] - lo[i]) * (hi[i] - lo[i]);
  return std::sqrt(s);
}

NormEstimate holder_norm(const FieldFn& f, const SampleBox& box, double r, std::size_t budget,
                         std::uint64_t seed) {
  check_common(box, budget);
  if (!(r > 0.0) || r >= 3.0) throw std::invalid_argument("holder_norm: r must be in (0, 3)");
  const int k = int(std::floor(r));
  const double frac = r - k;
  const int dim = box.dim;
  const double diam = box.diam();
  const double eta = diam * std::ldexp(1.0, -kScaleFloorLog2);
  const double margin = 2.0 * eta;  // keep FD stencils inside the box
  const int nc = n_deriv_comps(dim, k);

  NormEstimate est;
  est.r = r;
  est.method = "divided-diff C^r";
  est.pairs = budget;
  est.seed = seed;
  est.parts.assign(std::size_t(k) + 2, 0.0);

  std::array<double, 8> cen{};
  for (int i = 0; i < dim; ++i) cen[i] = 0.5 * (box.lo[i] + box.hi[i]);

  std::vector<double> da(nc), db(nc), low(k + 1);
  const std::size_t shards = (budget + kShard - 1) / kShard;
  for (std::size_t s = 0; s < shards; ++s) {
    std::mt19937_64 rng(mix_seed(seed, s));
    const std::size_t hi_p = std::min(budget, (s + 1) * kShard);
    for (std::size_t p = s * kShard; p < hi_p; ++p) {
      Pt x, y;
      std::array<double, 8> dir{};
      const int mode = int(p % 3);
      if (mode == 0) {
        uniform_in(rng, box, margin, x.x.data());
        unit_dir(rng, dim, dir.data());
        const double off = diam * std::ldexp(1.0, -dyadic_level(rng));
        for (int i = 0; i < dim; ++i)
          y.x[i] = fold(x.x[i] + off * dir[i], box.lo[i] + margin, box.hi[i] - margin);
      } else if (mode == 1) {
        unit_dir(rng, dim, dir.data());
        const double off = diam * std::ldexp(1.0, -dyadic_level(rng));
        for (int i = 0; i < dim; ++i) {
          x.x[i] = fold(cen[i] + off * dir[i], box.lo[i] + margin, box.hi[i] - margin);
          y.x[i] = fold(cen[i] - off * dir[i], box.lo[i] + margin, box.hi[i] - margin);
        }
      } else {
        uniform_in(rng, box, margin, x.x.data());
        uniform_in(rng, box, margin, y.x.data());
      }
      // lower-order sup-norms at x
      for (int i = 0; i <= k; ++i) {
        fd_derivs(f, dim, x.x.data(), i, eta, low.data());
        for (int c = 0; c < n_deriv_comps(dim, i); ++c)
          est.parts[std::size_t(i)] = std::max(est.parts[std::size_t(i)], std::abs(low[c]));
      }
      double dist2 = 0.0;
      for (int i = 0; i < dim; ++i)
        dist2 += (x.x[i] - y.x[i]) * (x.x[i] - y.x[i]);
      const double dist = std::sqrt(dist2);
      if (dist < 1e-300) continue;
      fd_derivs(f, dim, x.x.data(), k, eta, da.data());
      fd_derivs(f, dim, y.x.data(), k, eta, db.data());
      double dmax = 0.0;
      for (int c = 0; c < nc; ++c) dmax = std::max(dmax, std::abs(da[c] - db[c]));
      const double ratio = frac > 0.0 ? dmax / std::pow(dist, frac) : dmax;
      est.parts.back() = std::max(est.parts.back(), ratio);
    }
  }
  for (double part : est.parts) est.value += part;
  return est;
}

NormEstimate lipschitz_seminorm(const FieldFn& f, const SampleBox& box, double r,
                                std::size_t budget, std::uint64_t seed) {
  check_common(box, budget);
  if (!(r > 0.0) || r >= 2.0)
    throw std::invalid_argument("lipschitz_seminorm: r must be in (0, 2)");
  const int dim = box.dim;
  const double diam = box.diam();

  NormEstimate est;
  est.r = r;
  est.method = "second-diff Lambda_r";
  est.pairs = budget;
  est.seed = seed;
  est.parts.assign(1, 0.0);

  std::array<double, 8> cen{};
  for (int i = 0; i < dim; ++i) cen[i] = 0.5 * (box.lo[i] + box.hi[i]);

  std::array<double, 8> xp{}, xm{};
  const std::size_t shards = (budget + kShard - 1) / kShard;
  for (std::size_t s = 0; s < shards; ++s) {
    std::mt19937_64 rng(mix_seed(seed, s));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const std::size_t hi_p = std::min(budget, (s + 1) * kShard);
    for (std::size_t p = s * kShard; p < hi_p; ++p) {
      Pt x;
      std::array<double, 8> ydir{};
      double ylen = 0.0;
      const int mode = int(p % 3);
      unit_dir(rng, dim, ydir.data());
      if (mode == 0) {
        uniform_in(rng, box, 0.0, x.x.data());
        ylen = diam * std::ldexp(1.0, -dyadic_level(rng));
      } else if (mode == 1) {
        std::array<double, 8> adir{};
        unit_dir(rng, dim, adir.data());
        const double aoff = diam * std::ldexp(1.0, -dyadic_level(rng));
        for (int i = 0; i < dim; ++i) x.x[i] = fold(cen[i] + aoff * adir[i], box.lo[i], box.hi[i]);
        ylen = diam * std::ldexp(1.0, -dyadic_level(rng));
      } else {
        uniform_in(rng, box, 0.0, x.x.data());
        ylen = 0.5 * diam * u01(rng);
      }
      // shrink y until x +- y both stay inside the box
      double lam = 1.0;
      for (int i = 0; i < dim; ++i) {
        const double yi = ylen * ydir[i];
        if (yi > 0.0) {
          lam = std::min(lam, (box.hi[i] - x.x[i]) / yi);
          lam = std::min(lam, (x.x[i] - box.lo[i]) / yi);
        } else if (yi < 0.0) {
          lam = std::min(lam, (box.lo[i] - x.x[i]) / yi);
          lam = std::min(lam, (x.x[i] - box.hi[i]) / yi);
        }
      }
      if (lam <= 0.0) continue;
      ylen *= 0.999 * lam;
      if (ylen < 1e-300) continue;
      for (int i = 0; i < dim; ++i) {
        xp[i] = x.x[i] + ylen * ydir[i];
        xm[i] = x.x[i] - ylen * ydir[i];
      }
      const double dd = f(xp.data()) - 2.0 * f(x.x.data()) + f(xm.data());
      est.parts[0] = std::max(est.parts[0], std::abs(dd) / std::pow(ylen, r));
    }
  }
  est.value = est.parts[0];
  return est;
}

// ------------------------------------------------------------------ dyadic

namespace {

// C-infinity bump on (-1, 1)
double bump(double s) {
  const double t = 1.0 - s * s;
  return t > 0.0 ? std::exp(-1.0 / t) : 0.0;
}

// discrete mollification at width w (grid spacing h), even reflection at ends
std::vector<double> mollify(const std::vector<double>& f, double h, double w) {
  const int n = int(f.size());
  const int rad = int(std::floor(w / h));
  if (rad < 1) return f;  // width below the grid scale: identity
  std::vector<double> wt(2 * rad + 1);
  double sum = 0.0;
  for (int j = -rad; j <= rad; ++j) sum += (wt[std::size_t(j + rad)] = bump(j * h / w));
  for (double& v : wt) v /= sum;
  std::vector<double> out(f.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = -rad; j <= rad; ++j) {
      int idx = i + j;
      while (idx < 0 || idx >= n) idx = idx < 0 ? -idx : 2 * (n - 1) - idx;
      acc += wt[std::size_t(j + rad)] * f[std::size_t(idx)];
    }
    out[std::size_t(i)] = acc;
  }
  return out;
}

double grid_deriv_sup(const std::vector<double>& f, double h, int order) {
  const int n = int(f.size());
  double sup = 0.0;
  auto at = [&](int i) { return f[std::size_t(i)]; };
  if (order == 0) {
    for (int i = 0; i < n; ++i) sup = std::max(sup, std::abs(at(i)));
  } else if (order == 1) {
    for (int i = 1; i + 1 < n; ++i)
      sup = std::max(sup, std::abs((at(i + 1) - at(i - 1)) / (2.0 * h)));
  } else if (order == 2) {
    for (int i = 1; i + 1 < n; ++i)
      sup = std::max(sup, std::abs((at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h)));
  } else {
    for (int i = 2; i + 2 < n; ++i)
      sup = std::max(sup, std::abs((at(i + 2) - 2.0 * at(i + 1) + 2.0 * at(i - 1) - at(i - 2)) /
                                   (2.0 * h * h * h)));
  }
  return sup;
}

}  // namespace

DyadicDecomposition dyadic_decompose(const std::vector<double>& f, double a, double b, double r,
                                     int k_max) {
  if (f.size() < 8) throw std::invalid_argument("dyadic_decompose: grid too small");
  if (!(b > a)) throw std::invalid_argument("dyadic_decompose: empty interval");
  if (!(r > 0.0) || r >= 3.0) throw std::invalid_argument("dyadic_decompose: r must be in (0, 3)");
  if (k_max < 1 || k_max > 40) throw std::invalid_argument("dyadic_decompose: bad k_max");
  const double h = (b - a) / double(f.size() - 1);
  const int top_order = std::min(3, int(std::floor(r)) + 1);

  DyadicDecomposition d;
  d.r = r;
  d.k_max = k_max;
  d.a = a;
  d.b = b;

  std::vector<double> prev = mollify(f, h, 1.0);  // width 2^0
  d.pieces.push_back(prev);
  for (int k = 1; k < k_max; ++k) {
    std::vector<double> cur = mollify(f, h, std::ldexp(1.0, -k));
    std::vector<double> piece(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) piece[i] = cur[i] - prev[i];
    d.pieces.push_back(std::move(piece));
    prev = std::move(cur);
  }
  {  // remainder piece: the sum telescopes to f exactly
    std::vector<double> piece(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) piece[i] = f[i] - prev[i];
    d.pieces.push_back(std::move(piece));
  }

  for (int k = 0; k <= k_max; ++k) {
    std::vector<double> norms;
    double ak = 0.0;
    for (int i = 0; i <= top_order; ++i) {
      const double sup = grid_deriv_sup(d.pieces[std::size_t(k)], h, i);
      norms.push_back(sup);
      ak = std::max(ak, sup / std::ldexp(1.0, k * i) * std::pow(2.0, k * r));
    }
    d.piece_norms.push_back(std::move(norms));
    d.A = std::max(d.A, ak);
  }

  double drift = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    double s = 0.0;
    for (const auto& piece : d.pieces) s += piece[i];
    drift = std::max(drift, std::abs(s - f[i]));
  }
  d.reassembly_drift = drift;
  if (!(drift <= 1e-6))
    throw std::runtime_error("dyadic_decompose: reassembly drift exceeds 1e-6");
  return d;
}

ExponentFit boundary_exponent_fit(const std::vector<double>& dist,
                                  const std::vector<double>& value) {
  if (dist.size() != value.size())
    throw std::invalid_argument("boundary_exponent_fit: length mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (!(dist[i] > 0.0) || !(value[i] > 0.0)) continue;
    lx.push_back(std::log(dist[i]));
    ly.push_back(std::log(value[i]));
  }
  const std::size_t n = lx.size();
  if (n < 4) throw std::invalid_argument("boundary_exponent_fit: needs >= 4 usable points");
  double lo = lx[0], hi = lx[0];
  std::vector<int> octaves;
  for (double v : lx) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    const int oct = int(std::floor(v / std::log(2.0) + 0.5));
    if (std::find(octaves.begin(), octaves.end(), oct) == octaves.end()) octaves.push_back(oct);
  }
  if (octaves.size() < 4 || (hi - lo) < 4.0 * std::log(2.0) * 0.999)
    throw std::invalid_argument(
        "boundary_exponent_fit: window must span >= 4 dyadic scales");

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double det = double(n) * sxx - sx * sx;
  ExponentFit fit;
  fit.slope = (double(n) * sxy - sx * sy) / det;
  fit.intercept = (sy * sxx - sx * sxy) / det;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = ly[i] - (fit.intercept + fit.slope * lx[i]);
    rss += e * e;
  }
  fit.residual = std::sqrt(rss / double(n));
  fit.scale_lo = std::exp(lo);
  fit.scale_hi = std::exp(hi);
  fit.points = n;
  return fit;
}

}  // namespace dbarlab
