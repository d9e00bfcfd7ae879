#ifndef DBARLAB_FIT_HPP
#define DBARLAB_FIT_HPP

/* Least-squares line fits used by growth/scaling diagnostics. */

#include <cmath>
#include <stdexcept>
#include <vector>

namespace dbarlab {

// slope of the least-squares line y = a + b x
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("ls_slope: need >= 2 matching samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
  mx /= double(x.size());
  my /= double(x.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("ls_slope: degenerate abscissae");
  return sxy / sxx;
}

// slope of log y vs log x (drops nonpositive samples; needs >= 2 left)
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  return ls_slope(lx, ly);
}

}  // namespace dbarlab

#endif
