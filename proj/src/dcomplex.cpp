#include "dbarlab/dcomplex.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>
#include <utility>

#include "dbarlab/gauss.hpp"

namespace dbarlab {

namespace {

std::uint32_t bit_of(int j) { return 1u << unsigned(j); }

double pm_sign(int k) { return (k % 2 == 0) ? 1.0 : -1.0; }

std::size_t mask_pos(const std::vector<std::uint32_t>& list, std::uint32_t mask) {
  for (std::size_t i = 0; i < list.size(); ++i)
    if (list[i] == mask) return i;
  throw std::out_of_range("dcomplex: unknown component mask");
}

// (zb, tm) pairs of total degree k, z-degree ascending, masks ascending
struct MaskPair {
  std::uint32_t zb = 0, tm = 0;
};

std::vector<MaskPair> pairs_of_degree(int n, int m, int k) {
  std::vector<MaskPair> out;
  for (int i = 0; i <= std::min(k, n); ++i)
    for (std::uint32_t zb : masks_of_degree(n, i))
      for (std::uint32_t tm : masks_of_degree(m, k - i)) out.push_back({zb, tm});
  return out;
}

// d/dt_b of an expression at the real parameter point u (z not referenced)
cdouble expr_dt_at(const Expr& e, int m, int b, const double* u) {
  using D = Dual<cdouble>;
  std::array<D, kMaxT> td{};
  for (int k = 0; k < m; ++k) td[k] = D(cdouble(u[k], 0.0));
  td[b].d = cdouble(1.0, 0.0);
  std::array<D, kMaxN> zd{};
  return eval_expr<D>(e, zd.data(), td.data()).d;
}

}  // namespace

// --------------------------------------------------------------------- TBox

TBox::TBox(int m_, double half) : m(m_) {
  if (m_ < 0 || m_ > kMaxT) throw std::invalid_argument("TBox: bad parameter count");
  if (half <= 0.0) throw std::invalid_argument("TBox: bad half width");
  for (int i = 0; i < m_; ++i) {
    lo[i] = -half;
    hi[i] = half;
  }
}

bool TBox::star_shaped_about_origin() const {
  // a box is convex, so containing the origin is exactly star-shapedness
  for (int i = 0; i < m; ++i)
    if (lo[i] > 0.0 || hi[i] < 0.0) return false;
  return true;
}

bool TBox::contains(const double* t) const {
  for (int i = 0; i < m; ++i)
    if (t[i] < lo[i] || t[i] > hi[i]) return false;
  return true;
}

// ---------------------------------------------------------------- MixedForm

MixedForm::MixedForm(int n_, int m_, int k_) : n(n_), m(m_), k(k_) {
  if (n_ < 1 || n_ > kMaxN) throw std::invalid_argument("MixedForm: bad dimension");
  if (m_ < 0 || m_ > kMaxT) throw std::invalid_argument("MixedForm: bad parameter count");
  if (k_ < 0 || k_ > n_ + m_) throw std::invalid_argument("MixedForm: bad degree");
}

void MixedForm::add_mask(std::uint32_t zb, std::uint32_t tm, ExprPtr f) {
  if (!f) throw std::invalid_argument("MixedForm: null coefficient");
  if (zb >= (1u << unsigned(n)) || tm >= (1u << unsigned(m)))
    throw std::invalid_argument("MixedForm: index set out of range");
  if (std::popcount(zb) + std::popcount(tm) != k)
    throw std::invalid_argument("MixedForm: index set degree mismatch");
  int mz = 0, mt = 0;
  expr_var_extent(f, mz, mt);
  if (mz > n || mt > m)
    throw std::invalid_argument("MixedForm: coefficient references unknown variables");
  for (auto& term : terms)
    if (term.zbar == zb && term.t == tm) {
      term.a = std::move(f);
      return;
    }
  terms.push_back({zb, tm, std::move(f)});
  std::sort(terms.begin(), terms.end(), [](const MixedTerm& a, const MixedTerm& b) {
    return std::tie(a.zbar, a.t) < std::tie(b.zbar, b.t);
  });
}

void MixedForm::add(const std::vector<int>& zidx, const std::vector<int>& tidx, ExprPtr f) {
  if (int(zidx.size() + tidx.size()) != k)
    throw std::invalid_argument("MixedForm: index count mismatch");
  // canonicalize each factor group; no cross-group sign (dzbar's stay left)
  std::uint32_t zb = 0, tm = 0;
  int inversions = 0;
  for (std::size_t a = 0; a < zidx.size(); ++a) {
    int j = zidx[a];
    if (j < 0 || j >= n) throw std::invalid_argument("MixedForm: z index out of range");
    if (zb & bit_of(j)) return;  // repeated index: the term vanishes
    for (std::size_t b = 0; b < a; ++b)
      if (zidx[b] > j) ++inversions;
    zb |= bit_of(j);
  }
  for (std::size_t a = 0; a < tidx.size(); ++a) {
    int j = tidx[a];
    if (j < 0 || j >= m) throw std::invalid_argument("MixedForm: t index out of range");
    if (tm & bit_of(j)) return;
    for (std::size_t b = 0; b < a; ++b)
      if (tidx[b] > j) ++inversions;
    tm |= bit_of(j);
  }
  if (inversions % 2 == 1) {
    Expr neg;
    neg.kind = Expr::Kind::Neg;
    neg.a = std::move(f);
    f = std::make_shared<Expr>(std::move(neg));
  }
  add_mask(zb, tm, std::move(f));
}

void MixedForm::add(const std::vector<int>& zidx, const std::vector<int>& tidx,
                    const std::string& text) {
  add(zidx, tidx, parse_expr(text));
}

const ExprPtr* MixedForm::find(std::uint32_t zb, std::uint32_t tm) const {
  for (const auto& term : terms)
    if (term.zbar == zb && term.t == tm) return &term.a;
  return nullptr;
}

MixedForm MixedForm::component(int i) const {
  MixedForm c(n, m, k);
  c.rz = rz;
  c.rt = rt;
  c.dbar_rz = dbar_rz;
  for (const auto& term : terms)
    if (std::popcount(term.zbar) == i) c.terms.push_back(term);
  return c;
}

std::vector<MixedForm> MixedForm::split() const {
  std::vector<MixedForm> out;
  for (int i = 0; i <= std::min(k, n); ++i) out.push_back(component(i));
  return out;
}

cdouble MixedForm::coeff(std::uint32_t zb, std::uint32_t tm, const double* x,
                         const double* t) const {
  const ExprPtr* f = find(zb, tm);
  if (!f) return {0.0, 0.0};
  std::array<cdouble, kMaxN> zc{};
  lift_complex(n, x, zc.data());
  std::array<cdouble, kMaxT> tc{};
  for (int b = 0; b < m; ++b) tc[b] = cdouble(t[b], 0.0);
  return eval_expr<cdouble>(**f, zc.data(), tc.data());
}

MixedForm mixed_reassemble(const std::vector<MixedForm>& parts) {
  if (parts.empty()) throw std::invalid_argument("mixed_reassemble: no parts");
  MixedForm out(parts[0].n, parts[0].m, parts[0].k);
  out.rz = parts[0].rz;
  out.rt = parts[0].rt;
  out.dbar_rz = parts[0].dbar_rz;
  for (const MixedForm& p : parts) {
    if (p.n != out.n || p.m != out.m || p.k != out.k)
      throw std::invalid_argument("mixed_reassemble: mismatched shapes");
    for (const auto& term : p.terms) out.add_mask(term.zbar, term.t, term.a);
  }
  return out;
}

ExprPtr expr_subst_t(const ExprPtr& e, const double* t, int m) {
  if (!e) return e;
  using K = Expr::Kind;
  switch (e->kind) {
    case K::Const:
    case K::VarZ:
      return e;
    case K::VarT:
      if (e->index < 0 || e->index >= m)
        throw std::invalid_argument("expr_subst_t: t index out of range");
      return expr_const(cdouble(t[e->index], 0.0));
    default: {
      Expr c = *e;
      c.a = expr_subst_t(e->a, t, m);
      c.b = expr_subst_t(e->b, t, m);
      return std::make_shared<Expr>(std::move(c));
    }
  }
}

ZForm mixed_slice_zform(const MixedForm& phi, int i, std::uint32_t tmask, const double* t) {
  if (i < 0 || i > phi.n || i > phi.k)
    throw std::invalid_argument("mixed_slice_zform: bad zbar degree");
  ZForm f(phi.n, i, phi.rz);
  for (const auto& term : phi.terms)
    if (std::popcount(term.zbar) == i && term.t == tmask) {
      ExprPtr bound = expr_subst_t(term.a, t, phi.m);
      if (bound->kind == Expr::Kind::Const && bound->cval == cdouble(0.0, 0.0)) continue;
      f.add_mask(term.zbar, std::move(bound));
    }
  return f;
}

// ---------------------------------------------------------------- Poincare

namespace {

void check_pure_t(const MixedForm& phi, const char* who) {
  for (const auto& term : phi.terms) {
    if (term.zbar) throw std::invalid_argument(std::string(who) + ": pure t-form required");
    int mz = 0, mt = 0;
    expr_var_extent(term.a, mz, mt);
    if (mz > 0)
      throw std::invalid_argument(std::string(who) + ": coefficients must not reference z");
  }
}

// [R_q phi]_{Kp}(t) with dual-valued t slots (exact t-derivatives on demand)
template <class D>
D r_coeff_t(const MixedForm& phi, std::uint32_t Kp, const D* td, const GaussRule& gl) {
  const int qt = phi.k;
  std::array<D, kMaxN> zd{};
  D acc{};
  for (int a = 0; a < phi.m; ++a) {
    if ((Kp >> unsigned(a)) & 1u) continue;
    const ExprPtr* f = phi.find(0, Kp | bit_of(a));
    if (!f) continue;
    D integ{};
    for (std::size_t g = 0; g < gl.x.size(); ++g) {
      const double th = gl.x[g];
      std::array<D, kMaxT> ts{};
      for (int b = 0; b < phi.m; ++b) ts[b] = th * td[b];
      integ += (gl.w[g] * std::pow(th, qt - 1)) * eval_expr<D>(**f, zd.data(), ts.data());
    }
    acc += mask_sign(Kp, a) * (td[a] * integ);
  }
  return acc;
}

void check_poincare_input(const MixedForm& phi, const TBox& S, const char* who) {
  if (phi.m != S.m)
    throw std::invalid_argument(std::string(who) + ": parameter count mismatch");
  if (phi.k < 1) throw std::invalid_argument(std::string(who) + ": needs degree >= 1");
  check_pure_t(phi, who);
  if (!S.star_shaped_about_origin())
    throw std::invalid_argument(std::string(who) + ": t-domain is not star-shaped about 0");
}

}  // namespace

std::vector<cdouble> poincare_Rq(const MixedForm& phi, const TBox& S, const double* t,
                                 int gl_nodes) {
  check_poincare_input(phi, S, "poincare_Rq");
  GaussRule gl = gauss_legendre(std::max(2, gl_nodes), 0.0, 1.0);
  std::array<cdouble, kMaxT> td{};
  for (int b = 0; b < phi.m; ++b) td[b] = cdouble(t[b], 0.0);
  std::vector<std::uint32_t> out_masks = masks_of_degree(phi.m, phi.k - 1);
  std::vector<cdouble> out(out_masks.size(), cdouble(0.0, 0.0));
  for (std::size_t k = 0; k < out_masks.size(); ++k)
    out[k] = r_coeff_t<cdouble>(phi, out_masks[k], td.data(), gl);
  return out;
}

double poincare_residual(const MixedForm& phi, const TBox& S, const double* t, int gl_nodes) {
  check_poincare_input(phi, S, "poincare_residual");
  const int m = phi.m, q = phi.k;
  GaussRule gl = gauss_legendre(std::max(2, gl_nodes), 0.0, 1.0);
  using D = Dual<cdouble>;
  double worst = 0.0;
  for (std::uint32_t K : masks_of_degree(m, q)) {
    // d0 R_q phi: exact t-derivatives through the theta closure by dual seeds
    cdouble dR(0.0, 0.0);
    for (int b = 0; b < m; ++b) {
      if (!((K >> unsigned(b)) & 1u)) continue;
      std::array<D, kMaxT> td{};
      for (int c = 0; c < m; ++c) td[c] = D(cdouble(t[c], 0.0));
      td[b].d = cdouble(1.0, 0.0);
      dR += mask_sign(K & ~bit_of(b), b) * r_coeff_t<D>(phi, K & ~bit_of(b), td.data(), gl).d;
    }
    // R_{q+1} d0 phi: theta integral of the exact coefficient derivatives
    cdouble Rd(0.0, 0.0);
    if (q < m) {
      for (int a = 0; a < m; ++a) {
        if ((K >> unsigned(a)) & 1u) continue;
        const std::uint32_t Kc = K | bit_of(a);
        cdouble integ(0.0, 0.0);
        for (std::size_t g = 0; g < gl.x.size(); ++g) {
          const double th = gl.x[g];
          std::array<double, kMaxT> ts{};
          for (int c = 0; c < m; ++c) ts[c] = th * t[c];
          cdouble dphi(0.0, 0.0);
          for (int c = 0; c < m; ++c) {
            if (!((Kc >> unsigned(c)) & 1u)) continue;
            const ExprPtr* f = phi.find(0, Kc & ~bit_of(c));
            if (!f) continue;
            dphi += mask_sign(Kc & ~bit_of(c), c) * expr_dt_at(**f, m, c, ts.data());
          }
          integ += gl.w[g] * std::pow(th, q) * dphi;
        }
        Rd += mask_sign(K, a) * t[a] * integ;
      }
    }
    const ExprPtr* f = phi.find(0, K);
    cdouble val(0.0, 0.0);
    if (f) {
      std::array<cdouble, kMaxN> zc{};
      std::array<cdouble, kMaxT> tc{};
      for (int c = 0; c < m; ++c) tc[c] = cdouble(t[c], 0.0);
      val = eval_expr<cdouble>(**f, zc.data(), tc.data());
    }
    worst = std::max(worst, std::abs(dR + Rd - val));
  }
  return worst;
}

// ------------------------------------------------------------------- solver

std::string dvariant_name(DVariant v) { return v == DVariant::T ? "T" : "T-tilde"; }

namespace {

/* Shared evaluation state for one solve_D_complex run: the z-grid, the theta
   rule, and memoized homotopy solves keyed by the bound slice (t enters the
   key through the printed Const nodes, so t-independent slices collapse to a
   single solve and their central differences cancel exactly). */
struct Engine {
  const ExtensionOp& E;
  const LerayMap& map;
  const MixedForm& phi;
  const TargetList& zpts;
  DComplexOptions opt;
  int n, m, q;
  GaussRule gl;
  HomotopyOptions hs;  // inner-solve options (no refinement pass)

  std::vector<std::array<cdouble, kMaxN>> zc;          // lifted z per grid point
  std::vector<std::vector<std::uint32_t>> zmasks;      // masks_of_degree(n, d) per d
  std::map<std::string, std::vector<cdouble>> c_h0, c_hq, c_dh0, c_dhq;

  Engine(const ExtensionOp& E_, const LerayMap& map_, const MixedForm& phi_,
         const TargetList& zpts_, const DComplexOptions& opt_)
      : E(E_), map(map_), phi(phi_), zpts(zpts_), opt(opt_), n(phi_.n), m(phi_.m), q(phi_.k),
        gl(gauss_legendre(std::max(2, opt_.gl_nodes), 0.0, 1.0)), hs(opt_.hopt) {
    hs.refine_estimate = false;
    zc.resize(zpts.size());
    for (std::size_t i = 0; i < zpts.size(); ++i)
      lift_complex(n, zpts[i].data(), zc[i].data());
    for (int d = 0; d <= n; ++d) zmasks.push_back(masks_of_degree(n, d));
  }

  ZForm slice(int i, std::uint32_t tm, const double* t) const {
    return mixed_slice_zform(phi, i, tm, t);
  }

  static std::string key_of(const ZForm& f) {
    std::string key = std::to_string(f.q);
    for (const auto& [mask, e] : f.cf.terms)
      key += "|" + std::to_string(mask) + ":" + print_expr(e);
    return key;
  }

  const std::vector<cdouble>& h0_vals(const ZForm& f) {
    auto [it, fresh] = c_h0.try_emplace(key_of(f));
    if (fresh) it->second = solve_H0(E, map, f, zpts, hs).samples;
    return it->second;
  }
  const std::vector<cdouble>& hq_vals(const ZForm& f) {
    auto [it, fresh] = c_hq.try_emplace(key_of(f));
    if (fresh) it->second = solve_Hq(E, map, f, zpts, hs).samples;
    return it->second;
  }
  const std::vector<cdouble>& dh0_vals(const ZForm& f) {
    auto [it, fresh] = c_dh0.try_emplace(key_of(f));
    if (fresh) it->second = dbar_H0_values(E, map, f, zpts, hs);
    return it->second;
  }
  const std::vector<cdouble>& dhq_vals(const ZForm& f) {
    auto [it, fresh] = c_dhq.try_emplace(key_of(f));
    if (fresh) it->second = dbar_Hq_values(E, map, f, zpts, hs);
    return it->second;
  }

  /* [R_{q-i} [phi]_i]_{zbI, Kp}(z_zi, t): the Poincare primitive on the t
     factor with the dzbar block passive; the (-1)^i from moving dt_a across
     dzbar^I is included here. */
  cdouble r_value(int i, std::uint32_t zbI, std::uint32_t Kp, std::size_t zi,
                  const double* t) const {
    const int qt = q - i;
    if (qt < 1) return {0.0, 0.0};
    cdouble acc(0.0, 0.0);
    for (int a = 0; a < m; ++a) {
      if ((Kp >> unsigned(a)) & 1u) continue;
      const ExprPtr* f = phi.find(zbI, Kp | bit_of(a));
      if (!f) continue;
      cdouble integ(0.0, 0.0);
      for (std::size_t g = 0; g < gl.x.size(); ++g) {
        const double th = gl.x[g];
        std::array<cdouble, kMaxT> ts{};
        for (int b = 0; b < m; ++b) ts[b] = cdouble(th * t[b], 0.0);
        integ += gl.w[g] * std::pow(th, qt - 1) *
                 eval_expr<cdouble>(**f, zc[zi].data(), ts.data());
      }
      acc += mask_sign(Kp, a) * t[a] * integ;
    }
    return pm_sign(i) * acc;
  }

  // dbar_l of the above (z-derivative passes through the theta integral)
  cdouble r_dbar(int i, int l, std::uint32_t zbI, std::uint32_t Kp, std::size_t zi,
                 const double* t) const {
    const int qt = q - i;
    if (qt < 1) return {0.0, 0.0};
    cdouble acc(0.0, 0.0);
    for (int a = 0; a < m; ++a) {
      if ((Kp >> unsigned(a)) & 1u) continue;
      const ExprPtr* f = phi.find(zbI, Kp | bit_of(a));
      if (!f) continue;
      cdouble integ(0.0, 0.0);
      for (std::size_t g = 0; g < gl.x.size(); ++g) {
        const double th = gl.x[g];
        std::array<cdouble, kMaxT> ts{};
        for (int b = 0; b < m; ++b) ts[b] = cdouble(th * t[b], 0.0);
        integ += gl.w[g] * std::pow(th, qt - 1) *
                 expr_wirtinger<cdouble>(**f, n, m, l, true, zc[zi].data(), ts.data());
      }
      acc += mask_sign(Kp, a) * t[a] * integ;
    }
    return pm_sign(i) * acc;
  }

  /* [R_q H_0 [phi]_0]_{0, Kp}(., t) over the z-grid (variant T head term);
     each theta node binds the scaled parameter into the coefficient and goes
     through the memoized H_0 solve. */
  std::vector<cdouble> rh0_value(std::uint32_t Kp, const double* t) {
    std::vector<cdouble> out(zpts.size(), cdouble(0.0, 0.0));
    for (int a = 0; a < m; ++a) {
      if ((Kp >> unsigned(a)) & 1u) continue;
      const std::uint32_t K = Kp | bit_of(a);
      if (!phi.find(0, K)) continue;
      const double sgn = mask_sign(Kp, a);
      for (std::size_t g = 0; g < gl.x.size(); ++g) {
        const double th = gl.x[g];
        std::array<double, kMaxT> ts{};
        for (int b = 0; b < m; ++b) ts[b] = th * t[b];
        ZForm s = slice(0, K, ts.data());
        if (s.zero()) continue;
        const std::vector<cdouble>& hv = h0_vals(s);
        const double wgt = gl.w[g] * std::pow(th, q - 1);
        for (std::size_t zi = 0; zi < out.size(); ++zi) out[zi] += sgn * t[a] * wgt * hv[zi];
      }
    }
    return out;
  }

  // dbar_l of the variant-T head term (holomorphy deficit through the rule)
  std::vector<cdouble> rh0_dbar(int l, std::uint32_t Kp, const double* t) {
    std::vector<cdouble> out(zpts.size(), cdouble(0.0, 0.0));
    for (int a = 0; a < m; ++a) {
      if ((Kp >> unsigned(a)) & 1u) continue;
      const std::uint32_t K = Kp | bit_of(a);
      if (!phi.find(0, K)) continue;
      const double sgn = mask_sign(Kp, a);
      for (std::size_t g = 0; g < gl.x.size(); ++g) {
        const double th = gl.x[g];
        std::array<double, kMaxT> ts{};
        for (int b = 0; b < m; ++b) ts[b] = th * t[b];
        ZForm s = slice(0, K, ts.data());
        if (s.zero()) continue;
        const std::vector<cdouble>& dv = dh0_vals(s);
        const double wgt = gl.w[g] * std::pow(th, q - 1);
        for (std::size_t zi = 0; zi < out.size(); ++zi)
          out[zi] += sgn * t[a] * wgt * dv[zi * std::size_t(n) + std::size_t(l)];
      }
    }
    return out;
  }

  // values of the [u]_i component (zbI, tmJ) over the z-grid at parameter t
  std::vector<cdouble> u_component(DVariant v, int i, std::uint32_t zbI, std::uint32_t tmJ,
                                   const double* t) {
    std::vector<cdouble> out(zpts.size(), cdouble(0.0, 0.0));
    if (i < 0 || i > q - 1 || i > n) return out;
    if (v == DVariant::Ttilde) {
      for (std::size_t zi = 0; zi < out.size(); ++zi) out[zi] = r_value(i, zbI, tmJ, zi, t);
      if (i == q - 1 && tmJ == 0 && q <= n) {
        std::array<double, kMaxT> t0{};
        ZForm sq = slice(q, 0, t0.data());
        if (!sq.zero()) {
          const std::vector<cdouble>& hv = hq_vals(sq);
          const std::size_t nm = zmasks[std::size_t(q - 1)].size();
          const std::size_t mi = mask_pos(zmasks[std::size_t(q - 1)], zbI);
          for (std::size_t zi = 0; zi < out.size(); ++zi) out[zi] += hv[zi * nm + mi];
        }
      }
      return out;
    }
    // variant T
    if (i == 0) {
      out = rh0_value(tmJ, t);
      ZForm s1 = slice(1, tmJ, t);
      if (!s1.zero()) {
        const std::vector<cdouble>& hv = hq_vals(s1);
        for (std::size_t zi = 0; zi < out.size(); ++zi) out[zi] += hv[zi];
      }
      return out;
    }
    if (i + 1 <= n) {
      ZForm s = slice(i + 1, tmJ, t);
      if (!s.zero()) {
        const std::vector<cdouble>& hv = hq_vals(s);
        const std::size_t nm = zmasks[std::size_t(i)].size();
        const std::size_t mi = mask_pos(zmasks[std::size_t(i)], zbI);
        for (std::size_t zi = 0; zi < out.size(); ++zi) out[zi] += hv[zi * nm + mi];
      }
    }
    return out;
  }
};

void check_variant_input(const ExtensionOp& E, const LerayMap& map, const MixedForm& phi,
                         DVariant variant, const TBox& S) {
  if (phi.n != E.domain().spec().n)
    throw std::invalid_argument("solve_D_complex: form dimension mismatch");
  if (map.spec.n != phi.n)
    throw std::invalid_argument("solve_D_complex: Leray map dimension mismatch");
  if (S.m != phi.m) throw std::invalid_argument("solve_D_complex: parameter count mismatch");
  if (phi.k < 1) throw std::invalid_argument("solve_D_complex: needs total degree >= 1");
  if (!S.star_shaped_about_origin())
    throw std::invalid_argument("solve_D_complex: t-domain is not star-shaped about 0");
  if (variant == DVariant::T) {
    if (phi.rz < 1.0 || phi.rt < 1.0 || phi.dbar_rz < 1.0)
      throw std::invalid_argument(
          "solve_D_complex: variant T needs C^{1,1} data with dbar phi in C^{1,0} "
          "(smoothness tags below 1)");
  } else {
    if (std::min(phi.rz, phi.rt) < 1.0 || phi.dbar_rz < 1.0)
      throw std::invalid_argument(
          "solve_D_complex: variant T-tilde needs C^1 data with dbar [phi]_q(.,0) in C^1 "
          "(smoothness tags below 1)");
  }
}

}  // namespace

DValue dcomplex_u(const ExtensionOp& E, const LerayMap& map, const MixedForm& phi,
                  DVariant variant, const TBox& S, const double* z, const double* t,
                  const DComplexOptions& opt) {
  check_variant_input(E, map, phi, variant, S);
  TargetList zp(1);
  std::copy(z, z + 2 * phi.n, zp[0].begin());
  Engine eng(E, map, phi, zp, opt);
  DValue val;
  for (int i = 0; i <= std::min(phi.k - 1, phi.n); ++i)
    for (std::uint32_t zb : masks_of_degree(phi.n, i))
      for (std::uint32_t tm : masks_of_degree(phi.m, phi.k - 1 - i)) {
        val.zb.push_back(zb);
        val.tm.push_back(tm);
        val.v.push_back(eng.u_component(variant, i, zb, tm, t)[0]);
      }
  return val;
}

DComplexReport solve_D_complex(const ExtensionOp& E, const LerayMap& map, const MixedForm& phi,
                               DVariant variant, const TBox& S,
                               const std::vector<std::array<double, kMaxDim>>& zpts,
                               const std::vector<std::array<double, kMaxT>>& tpts,
                               const DComplexOptions& opt) {
  check_variant_input(E, map, phi, variant, S);
  for (const auto& t : tpts)
    if (!S.contains(t.data()))
      throw std::invalid_argument("solve_D_complex: t grid point outside S");

  const int n = phi.n, m = phi.m, q = phi.k;
  Engine eng(E, map, phi, zpts, opt);
  const std::vector<MaskPair> pairs = pairs_of_degree(n, m, q);

  DComplexReport rep;
  rep.variant = dvariant_name(variant);
  rep.n = n;
  rep.m = m;
  rep.q = q;
  for (const MaskPair& p : pairs) {
    rep.out_zb.push_back(p.zb);
    rep.out_tm.push_back(p.tm);
  }
  rep.zpts = zpts;
  rep.tpts = tpts;
  rep.residual.assign(zpts.size() * tpts.size(), 0.0);

  const double dstep = opt.t_step;
  double s2 = 0.0;
  for (std::size_t tp = 0; tp < tpts.size(); ++tp) {
    const double* t = tpts[tp].data();
    std::vector<std::vector<cdouble>> res(pairs.size(),
                                          std::vector<cdouble>(zpts.size(), cdouble(0.0, 0.0)));
    for (std::size_t pc = 0; pc < pairs.size(); ++pc) {
      const std::uint32_t M = pairs[pc].zb, J = pairs[pc].tm;
      const int dM = std::popcount(M);
      // dbar u: assembled kernel derivatives for the H parts, exact Wirtinger
      // derivatives through the theta closure for the R parts
      if (dM >= 1) {
        if (variant == DVariant::Ttilde) {
          if (dM == q && q <= n) {
            std::array<double, kMaxT> t0{};
            ZForm sq = eng.slice(q, 0, t0.data());
            if (!sq.zero()) {
              const std::vector<cdouble>& dv = eng.dhq_vals(sq);
              const std::size_t nm = eng.zmasks[std::size_t(q)].size();
              const std::size_t mi = mask_pos(eng.zmasks[std::size_t(q)], M);
              for (std::size_t zi = 0; zi < zpts.size(); ++zi)
                res[pc][zi] += dv[zi * nm + mi];
            }
          }
          for (int l = 0; l < n; ++l) {
            if (!((M >> unsigned(l)) & 1u)) continue;
            const std::uint32_t Ml = M & ~bit_of(l);
            const double sgn = mask_sign(Ml, l);
            for (std::size_t zi = 0; zi < zpts.size(); ++zi)
              res[pc][zi] += sgn * eng.r_dbar(dM - 1, l, Ml, J, zi, t);
          }
        } else {
          if (dM <= n) {
            ZForm sj = eng.slice(dM, J, t);
            if (!sj.zero()) {
              const std::vector<cdouble>& dv = eng.dhq_vals(sj);
              const std::size_t nm = eng.zmasks[std::size_t(dM)].size();
              const std::size_t mi = mask_pos(eng.zmasks[std::size_t(dM)], M);
              for (std::size_t zi = 0; zi < zpts.size(); ++zi)
                res[pc][zi] += dv[zi * nm + mi];
            }
          }
          if (dM == 1) {
            const int l = std::countr_zero(M);
            std::vector<cdouble> rd = eng.rh0_dbar(l, J, t);
            for (std::size_t zi = 0; zi < zpts.size(); ++zi) res[pc][zi] += rd[zi];
          }
        }
      }
      // d_t u by central differences of the component values
      if (J != 0) {
        const double sM = pm_sign(dM);
        for (int b = 0; b < m; ++b) {
          if (!((J >> unsigned(b)) & 1u)) continue;
          const std::uint32_t Jb = J & ~bit_of(b);
          const double sgn = mask_sign(Jb, b);
          std::array<double, kMaxT> tpl = tpts[tp], tmi = tpts[tp];
          tpl[b] += dstep;
          tmi[b] -= dstep;
          std::vector<cdouble> up = eng.u_component(variant, dM, M, Jb, tpl.data());
          std::vector<cdouble> um = eng.u_component(variant, dM, M, Jb, tmi.data());
          for (std::size_t zi = 0; zi < zpts.size(); ++zi)
            res[pc][zi] += sM * sgn * (up[zi] - um[zi]) / (2.0 * dstep);
        }
      }
      for (std::size_t zi = 0; zi < zpts.size(); ++zi)
        res[pc][zi] -= phi.coeff(M, J, zpts[zi].data(), t);
    }
    for (std::size_t zi = 0; zi < zpts.size(); ++zi) {
      double mx = 0.0;
      for (std::size_t pc = 0; pc < pairs.size(); ++pc)
        mx = std::max(mx, std::abs(res[pc][zi]));
      rep.residual[zi * tpts.size() + tp] = mx;
      rep.max = std::max(rep.max, mx);
      s2 += mx * mx;
    }
  }
  if (!rep.residual.empty()) rep.l2 = std::sqrt(s2 / double(rep.residual.size()));
  rep.notes = "residual of D u - phi; d_t by central differences (step " +
              std::to_string(dstep) + "), dbar by kernel differentiation, theta rule " +
              std::to_string(eng.gl.x.size()) + " nodes";
  return rep;
}

}  // namespace dbarlab
