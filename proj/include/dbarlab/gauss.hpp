#ifndef DBARLAB_GAUSS_HPP
#define DBARLAB_GAUSS_HPP

/* Gauss-Legendre rules via Newton iteration on P_n (standard Golub-free
   construction; nodes to machine precision for n <= a few hundred). */

#include <cmath>
#include <utility>
#include <vector>

namespace dbarlab {

struct GaussRule {
  std::vector<double> x;  // nodes
  std::vector<double> w;  // weights
};

// nodes/weights on [-1, 1]
inline GaussRule gauss_legendre(int n) {
  GaussRule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    // Chebyshev initial guess, Newton on P_n
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    r.x[n - 1 - i] = x;
    r.w[n - 1 - i] = 2.0 / ((1.0 - x * x) * pp * pp);
  }
  return r;
}

// affine map to [a, b]
inline GaussRule gauss_legendre(int n, double a, double b) {
  GaussRule r = gauss_legendre(n);
  for (int i = 0; i < n; ++i) {
    r.x[i] = 0.5 * (a + b) + 0.5 * (b - a) * r.x[i];
    r.w[i] *= 0.5 * (b - a);
  }
  return r;
}

}  // namespace dbarlab

#endif
