#ifndef DBARLAB_DUAL_HPP
#define DBARLAB_DUAL_HPP

/* Forward-mode dual scalars.

   Dual<T> carries a value and one directional derivative along a fixed real
   direction of the ambient parameter space.  T may be double, complex, or
   another Dual (nesting gives exact mixed higher derivatives).  Wirtinger
   derivatives are assembled from two real-direction passes:
       d/d(conj z_j) f = (f_x + i f_y)/2 .
   Conjugation is R-linear, so conj({v,d}) = {conj v, conj d} is exact. */

#include <cmath>
#include <complex>
#include <type_traits>

namespace dbarlab {

using cdouble = std::complex<double>;

constexpr int kMaxN = 4;  // complex dimension cap across the library

template <class T>
struct Dual {
  T v{};
  T d{};

  Dual() = default;
  Dual(const T& value) : v(value), d{} {}
  Dual(const T& value, const T& deriv) : v(value), d(deriv) {}

  // lift plain reals into complex-based duals
  template <class U,
            class = std::enable_if_t<std::is_convertible_v<U, T> &&
                                     !std::is_same_v<U, T> &&
                                     !std::is_same_v<U, Dual>>>
  Dual(const U& value) : v(value), d{} {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
};

template <class T> struct is_dual : std::false_type {};
template <class T> struct is_dual<Dual<T>> : std::true_type {};
template <class T> inline constexpr bool is_dual_v = is_dual<T>::value;

template <class T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class T> Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  T q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

// mixed scalar/dual arithmetic (scalar has zero derivative)
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator+(const Dual<T>& a, const U& b) { return {a.v + T(b), a.d}; }
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator+(const U& a, const Dual<T>& b) { return {T(a) + b.v, b.d}; }
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator-(const Dual<T>& a, const U& b) { return {a.v - T(b), a.d}; }
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator-(const U& a, const Dual<T>& b) { return {T(a) - b.v, -b.d}; }
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator*(const Dual<T>& a, const U& b) { return {a.v * T(b), a.d * T(b)}; }
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator*(const U& a, const Dual<T>& b) { return {T(a) * b.v, T(a) * b.d}; }
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator/(const Dual<T>& a, const U& b) { return {a.v / T(b), a.d / T(b)}; }
template <class T, class U, class = std::enable_if_t<std::is_convertible_v<U, T>>>
Dual<T> operator/(const U& a, const Dual<T>& b) {
  T q = T(a) / b.v;
  return {q, (-q * b.d) / b.v};
}

// --- generic scalar functions, defined for plain scalars and duals alike ---

inline double conj_s(double x) { return x; }
inline cdouble conj_s(const cdouble& x) { return std::conj(x); }
template <class T> Dual<T> conj_s(const Dual<T>& x) { return {conj_s(x.v), conj_s(x.d)}; }

// real/imag parts kept in the same scalar family (imag slot zeroed)
inline double re_s(double x) { return x; }
inline cdouble re_s(const cdouble& x) { return {x.real(), 0.0}; }
template <class T> Dual<T> re_s(const Dual<T>& x) { return {re_s(x.v), re_s(x.d)}; }
inline double im_s(double) { return 0.0; }
inline cdouble im_s(const cdouble& x) { return {x.imag(), 0.0}; }
template <class T> Dual<T> im_s(const Dual<T>& x) { return {im_s(x.v), im_s(x.d)}; }

template <class T> auto abs2_s(const T& x) { return x * conj_s(x); }

inline double exp_s(double x) { return std::exp(x); }
inline cdouble exp_s(const cdouble& x) { return std::exp(x); }
template <class T> Dual<T> exp_s(const Dual<T>& x) {
  T e = exp_s(x.v);
  return {e, e * x.d};
}
inline double log_s(double x) { return std::log(x); }
inline cdouble log_s(const cdouble& x) { return std::log(x); }
template <class T> Dual<T> log_s(const Dual<T>& x) { return {log_s(x.v), x.d / x.v}; }
inline double sqrt_s(double x) { return std::sqrt(x); }
inline cdouble sqrt_s(const cdouble& x) { return std::sqrt(x); }
template <class T> Dual<T> sqrt_s(const Dual<T>& x) {
  T r = sqrt_s(x.v);
  return {r, x.d / (2.0 * r)};
}
inline double sin_s(double x) { return std::sin(x); }
inline double cos_s(double x) { return std::cos(x); }
inline cdouble sin_s(const cdouble& x) { return std::sin(x); }
inline cdouble cos_s(const cdouble& x) { return std::cos(x); }
template <class T> Dual<T> sin_s(const Dual<T>& x) { return {sin_s(x.v), cos_s(x.v) * x.d}; }
template <class T> Dual<T> cos_s(const Dual<T>& x) { return {cos_s(x.v), -sin_s(x.v) * x.d}; }

template <class T> T pow_int(const T& x, int k) {
  if (k == 0) return T(1.0);
  if (k < 0) return T(1.0) / pow_int(x, -k);
  T r = x;
  for (int i = 1; i < k; ++i) r = r * x;
  return r;
}

// ground value of a (possibly nested) dual
inline double ground(double x) { return x; }
inline cdouble ground(const cdouble& x) { return x; }
template <class T> auto ground(const Dual<T>& x) { return ground(x.v); }

inline double ground_real(double x) { return x; }
inline double ground_real(const cdouble& x) { return x.real(); }
template <class T> double ground_real(const Dual<T>& x) { return ground_real(x.v); }

// base real scalar of a tower: double for real towers, cdouble for complex ones
template <class T> struct scalar_base { using type = T; };
template <class T> struct scalar_base<Dual<T>> { using type = typename scalar_base<T>::type; };
template <class T> using scalar_base_t = typename scalar_base<T>::type;

// complexification of a tower shape: double -> cdouble, Dual<T> -> Dual<cx(T)>
template <class T> struct complex_of { using type = cdouble; };
template <> struct complex_of<cdouble> { using type = cdouble; };
template <class T> struct complex_of<Dual<T>> { using type = Dual<typename complex_of<T>::type>; };
template <class T> using complex_of_t = typename complex_of<T>::type;

// build a complex tower from two same-shape real towers (re + i im)
inline cdouble complexify(double re, double im) { return {re, im}; }
template <class T>
Dual<complex_of_t<T>> complexify(const Dual<T>& re, const Dual<T>& im) {
  return {complexify(re.v, im.v), complexify(re.d, im.d)};
}

// componentwise real part: complex tower -> real tower (valid for real seeds)
inline double real_of(const cdouble& x) { return x.real(); }
inline double real_of(double x) { return x; }
template <class T> auto real_of(const Dual<T>& x) -> Dual<decltype(real_of(x.v))> {
  return {real_of(x.v), real_of(x.d)};
}
inline double imag_of(const cdouble& x) { return x.imag(); }
template <class T> auto imag_of(const Dual<T>& x) -> Dual<decltype(imag_of(x.v))> {
  return {imag_of(x.v), imag_of(x.d)};
}

// the imaginary unit lifted into a complex-based scalar family
template <class S> S scalar_one_i() { return S(cdouble(0.0, 1.0)); }

}  // namespace dbarlab

#endif
