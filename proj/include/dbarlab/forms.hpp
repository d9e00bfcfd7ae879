#ifndef DBARLAB_FORMS_HPP
#define DBARLAB_FORMS_HPP

/* Sparse exterior algebra on the generators
     dz_1..dz_n, dzbar_1..dzbar_n, dzeta_1..dzeta_n, dzetabar_1..dzetabar_n
   packed into one bitmask (n <= 4, so 4n <= 16 bits).  A Form is a sorted
   term list mask -> coefficient; coefficients are any scalar supporting the
   ring operations (complex double or dual towers). */

#include <algorithm>
#include <bit>
#include <cstdint>
#include <vector>

#include "dbarlab/dual.hpp"

namespace dbarlab {

using Mask = std::uint32_t;

inline Mask gen_dz(int j) { return Mask(1) << j; }
inline Mask gen_dzbar(int n, int j) { return Mask(1) << (n + j); }
inline Mask gen_dzeta(int n, int j) { return Mask(1) << (2 * n + j); }
inline Mask gen_dzetabar(int n, int j) { return Mask(1) << (3 * n + j); }

inline Mask group_dz(int n) { return ((Mask(1) << n) - 1); }
inline Mask group_dzbar(int n) { return group_dz(n) << n; }
inline Mask group_dzeta(int n) { return group_dz(n) << (2 * n); }
inline Mask group_dzetabar(int n) { return group_dz(n) << (3 * n); }

inline int deg_dz(Mask m, int n) { return std::popcount(m & group_dz(n)); }
inline int deg_dzbar(Mask m, int n) { return std::popcount(m & group_dzbar(n)); }
inline int deg_dzeta(Mask m, int n) { return std::popcount(m & group_dzeta(n)); }
inline int deg_dzetabar(Mask m, int n) { return std::popcount(m & group_dzetabar(n)); }

// sign of reordering (ascending a) ^ (ascending b) into one ascending monomial;
// 0 if a and b share a generator
inline int wedge_sign(Mask a, Mask b) {
  if (a & b) return 0;
  int inversions = 0;
  Mask bb = b;
  while (bb) {
    int j = std::countr_zero(bb);
    bb &= bb - 1;
    inversions += std::popcount(a >> (j + 1));
  }
  return (inversions & 1) ? -1 : 1;
}

template <class T>
struct Form {
  int n = 0;
  std::vector<std::pair<Mask, T>> terms;  // sorted by mask, no duplicates

  Form() = default;
  explicit Form(int n_) : n(n_) {}

  static Form scalar(int n_, const T& c) {
    Form f(n_);
    f.terms.push_back({Mask(0), c});
    return f;
  }
  static Form monomial(int n_, Mask m, const T& c) {
    Form f(n_);
    f.terms.push_back({m, c});
    return f;
  }

  bool empty() const { return terms.empty(); }

  void add_term(Mask m, const T& c) {
    auto it = std::lower_bound(terms.begin(), terms.end(), m,
                               [](const auto& p, Mask mm) { return p.first < mm; });
    if (it != terms.end() && it->first == m)
      it->second += c;
    else
      terms.insert(it, {m, c});
  }

  const T* coeff(Mask m) const {
    auto it = std::lower_bound(terms.begin(), terms.end(), m,
                               [](const auto& p, Mask mm) { return p.first < mm; });
    if (it != terms.end() && it->first == m) return &it->second;
    return nullptr;
  }

  Form& operator+=(const Form& o) {
    for (const auto& [m, c] : o.terms) add_term(m, c);
    return *this;
  }
  Form& operator-=(const Form& o) {
    for (const auto& [m, c] : o.terms) add_term(m, -c);
    return *this;
  }
  Form& operator*=(const T& s) {
    for (auto& [m, c] : terms) c = c * s;
    return *this;
  }

  Form filtered(auto&& keep) const {
    Form f(n);
    for (const auto& [m, c] : terms)
      if (keep(m)) f.terms.push_back({m, c});
    return f;
  }

  // part of z-type (0,q): no dz factors, exactly q dzbar factors
  Form part_0q(int q) const {
    return filtered([&](Mask m) {
      return deg_dz(m, n) == 0 && deg_dzbar(m, n) == q;
    });
  }

  double max_abs() const {
    double r = 0.0;
    for (const auto& [m, c] : terms) r = std::max(r, std::abs(ground(c)));
    return r;
  }
};

template <class T>
Form<T> operator+(Form<T> a, const Form<T>& b) { a += b; return a; }
template <class T>
Form<T> operator-(Form<T> a, const Form<T>& b) { a -= b; return a; }

template <class T>
Form<T> wedge(const Form<T>& a, const Form<T>& b) {
  Form<T> r(a.n);
  for (const auto& [ma, ca] : a.terms)
    for (const auto& [mb, cb] : b.terms) {
      int s = wedge_sign(ma, mb);
      if (s == 0) continue;
      T c = ca * cb;
      if (s < 0) c = -c;
      r.add_term(ma | mb, c);
    }
  return r;
}

template <class T>
Form<T> wedge_pow(const Form<T>& a, int k) {
  Form<T> r = Form<T>::scalar(a.n, T(1.0));
  for (int i = 0; i < k; ++i) r = wedge(r, a);
  return r;
}

/* Conversion factor between the canonical top monomial
     dzeta_1 ^ .. ^ dzeta_n ^ dzetabar_1 ^ .. ^ dzetabar_n
   and Lebesgue measure dV on C^n ~ R^{2n}:
     monomial = (-1)^{n(n-1)/2} (-2i)^n dV. */
inline cdouble volume_factor(int n) {
  cdouble f = 1.0;
  for (int j = 0; j < n; ++j) f *= cdouble(0.0, -2.0);
  if (((n * (n - 1) / 2) & 1) != 0) f = -f;
  return f;
}

inline Mask full_zeta_mask(int n) { return group_dzeta(n) | group_dzetabar(n); }

}  // namespace dbarlab

#endif
