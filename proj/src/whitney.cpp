#include "dbarlab/whitney.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace dbarlab {

WhitneyField::WhitneyField(WhitneyParams params, DistanceOracle dist, JetSource jets)
    : par_(params), dist_(std::move(dist)), jets_(std::move(jets)) {
  if (par_.dim <= 0 || par_.dim > kMaxDim) throw std::invalid_argument("whitney: bad dim");
  if (dist_.dim != par_.dim) throw std::invalid_argument("whitney: oracle dim mismatch");
  root_side_ = 0.0;
  for (int i = 0; i < par_.dim; ++i) {
    if (!(par_.hi[i] > par_.lo[i])) throw std::invalid_argument("whitney: empty root box");
    root_side_ = std::max(root_side_, par_.hi[i] - par_.lo[i]);
  }
  root_lo_ = par_.lo;
}

void WhitneyField::cube_geometry(const CubeKey& k, double* center, double& side) const {
  side = root_side_ / double(std::int64_t(1) << k.level);
  for (int i = 0; i < par_.dim; ++i)
    center[i] = root_lo_[i] + (double(k.idx[i]) + 0.5) * side;
}

bool WhitneyField::predicate(const CubeKey& k) const {
  auto it = pred_memo_.find(k);
  if (it != pred_memo_.end()) return it->second;
  std::array<double, kMaxDim> c{};
  double side;
  cube_geometry(k, c.data(), side);
  double diam = side * std::sqrt(double(par_.dim));
  bool ok = dist_.dist(c.data()) >= 1.5 * diam;
  pred_memo_.emplace(k, ok);
  return ok;
}

bool WhitneyField::selected(const CubeKey& k) const {
  if (!predicate(k)) return false;
  if (k.level == 0) return true;
  CubeKey p;
  p.level = k.level - 1;
  p.idx = {};
  for (int i = 0; i < par_.dim; ++i) p.idx[i] = k.idx[i] >> 1;
  return !predicate(p);
}

const ActiveCube& WhitneyField::cube_data(const CubeKey& k) const {
  auto it = data_memo_.find(k);
  if (it != data_memo_.end()) return it->second;
  ActiveCube c;
  cube_geometry(k, c.center.data(), c.side);
  dist_.foot(c.center.data(), c.foot.data());
  c.jet = jets_.jet(c.foot.data());
  return data_memo_.emplace(k, std::move(c)).first->second;
}

std::vector<ActiveCube> WhitneyField::active_cubes(const double* x) const {
  const int d = par_.dim;
  // level of the selected cube covering x
  int lstar = -1;
  CubeKey k;
  k.idx = {};
  for (int lvl = 0; lvl <= par_.max_level; ++lvl) {
    k.level = lvl;
    double side = root_side_ / double(std::int64_t(1) << lvl);
    if (side < par_.min_side)
      throw std::runtime_error("whitney: point too close to F for configured min_side");
    bool in_box = true;
    for (int i = 0; i < d; ++i) {
      double u = (x[i] - root_lo_[i]) / side;
      auto ix = std::int32_t(std::floor(u));
      if (ix < 0 || double(ix) * side > root_side_) in_box = false;
      k.idx[i] = ix;
    }
    if (!in_box) throw std::runtime_error("whitney: query outside root box");
    if (predicate(k)) { lstar = lvl; break; }
  }
  if (lstar < 0) throw std::runtime_error("whitney: max_level exhausted");

  std::vector<ActiveCube> out;
  for (int lvl = std::max(0, lstar - 3); lvl <= std::min(par_.max_level, lstar + 3); ++lvl) {
    double side = root_side_ / double(std::int64_t(1) << lvl);
    double reach = 0.625 * side;
    std::array<std::int32_t, kMaxDim> lo_i{}, hi_i{};
    for (int i = 0; i < d; ++i) {
      lo_i[i] = std::int32_t(std::floor((x[i] - root_lo_[i] - reach) / side));
      hi_i[i] = std::int32_t(std::floor((x[i] - root_lo_[i] + reach) / side));
      lo_i[i] = std::max(lo_i[i], std::int32_t(0));
      hi_i[i] = std::min(hi_i[i], std::int32_t((std::int64_t(1) << lvl) - 1));
    }
    CubeKey cand;
    cand.level = lvl;
    cand.idx = {};
    std::array<std::int32_t, kMaxDim> cur = lo_i;
    while (true) {
      for (int i = 0; i < d; ++i) cand.idx[i] = cur[i];
      if (selected(cand)) {
        const ActiveCube& c = cube_data(cand);
        bool inside = true;
        for (int i = 0; i < d; ++i)
          if (std::abs(x[i] - c.center[i]) >= 0.625 * c.side) { inside = false; break; }
        if (inside) out.push_back(c);
      }
      int axis = 0;
      while (axis < d && cur[axis] == hi_i[axis]) { cur[axis] = lo_i[axis]; ++axis; }
      if (axis == d) break;
      ++cur[axis];
    }
  }
  return out;
}

std::vector<WhitneyCube> WhitneyField::enumerate(double min_side, std::size_t max_cubes,
                                                 std::size_t* unresolved) const {
  const int d = par_.dim;
  std::vector<WhitneyCube> out;
  std::size_t pending = 0;
  std::deque<CubeKey> queue;
  CubeKey root;
  root.level = 0;
  root.idx = {};
  queue.push_back(root);
  double sqd = std::sqrt(double(d));
  while (!queue.empty()) {
    CubeKey k = queue.front();
    queue.pop_front();
    if (predicate(k) && k.level > 0) {
      WhitneyCube q;
      q.level = k.level;
      for (int i = 0; i < d; ++i) q.idx[i] = k.idx[i];
      cube_geometry(k, q.center.data(), q.side);
      out.push_back(q);
      if (out.size() > max_cubes) throw std::runtime_error("whitney: enumerate budget exceeded");
      continue;
    }
    std::array<double, kMaxDim> c{};
    double side;
    cube_geometry(k, c.data(), side);
    // prune cubes that can never contain a selectable descendant
    if (dist_.dist(c.data()) + 0.5 * side * sqd < 1.5 * min_side * sqd) continue;
    if (side * 0.5 < min_side) { ++pending; continue; }
    CubeKey ch;
    ch.level = k.level + 1;
    for (std::uint32_t m = 0; m < (1u << d); ++m) {
      ch.idx = {};
      for (int i = 0; i < d; ++i) ch.idx[i] = 2 * k.idx[i] + ((m >> i) & 1);
      queue.push_back(ch);
    }
  }
  if (unresolved) *unresolved = pending;
  return out;
}

double WhitneyField::cube_center_dist(const WhitneyCube& q) const {
  return dist_.dist(q.center.data());
}

DistanceOracle mask_distance_oracle(int dim, const std::array<double, kMaxDim>& origin,
                                    double h, const std::vector<std::array<std::int32_t, kMaxDim>>& points) {
  auto pts = std::make_shared<std::vector<std::array<double, kMaxDim>>>();
  pts->reserve(points.size());
  for (const auto& ip : points) {
    std::array<double, kMaxDim> p{};
    for (int i = 0; i < dim; ++i) p[i] = origin[i] + h * double(ip[i]);
    pts->push_back(p);
  }
  DistanceOracle o;
  o.dim = dim;
  // F is the solid union of the closed h-cells centered at the masked points,
  // so gaps between interior lattice points belong to F; the foot is the cell
  // owner (a lattice point), which is where jets live
  const double half = 0.5 * h;
  auto nearest = [pts, dim, half](const double* x) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < pts->size(); ++k) {
      double s = 0.0;
      for (int i = 0; i < dim; ++i) {
        double t = std::max(0.0, std::abs(x[i] - (*pts)[k][i]) - half);
        s += t * t;
      }
      if (s < best) { best = s; arg = k; }
    }
    return std::pair<double, std::size_t>(std::sqrt(best), arg);
  };
  o.dist = [nearest](const double* x) { return nearest(x).first; };
  o.foot = [nearest, pts, dim](const double* x, double* f) {
    auto [d, k] = nearest(x);
    (void)d;
    for (int i = 0; i < dim; ++i) f[i] = (*pts)[k][i];
  };
  return o;
}

}  // namespace dbarlab
