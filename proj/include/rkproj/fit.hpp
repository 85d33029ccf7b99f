#pragma once

#include <cmath>
#include <vector>

namespace rkproj {

struct FitWindow {
  double slope = 0;
  int begin = 0;  // index of the coarsest point used
  int end = 0;    // one past the finest point used
  int count = 0;
};

/// Least-squares slope of log2(err) vs log2(dt) over a trimmed window.
/// Points must be ordered from coarsest to finest dt. The window drops
/// everything from the first sub-floor error onward (reference noise), then
/// trims saturated tail points (pairwise slope < p/2) and preasymptotic head
/// points (pairwise slope < p - 0.5), always keeping at least two points.
inline FitWindow fit_loglog_slope(const std::vector<double>& dts,
                                  const std::vector<double>& errs,
                                  double expected_order, double floor) {
  const int n = int(dts.size());
  std::vector<int> pts;
  for (int i = 0; i < n; ++i) {
    if (!(errs[i] > floor)) break;
    pts.push_back(i);
  }
  auto pslope = [&](int i, int j) {
    return (std::log2(errs[i]) - std::log2(errs[j])) /
           (std::log2(dts[i]) - std::log2(dts[j]));
  };
  while (pts.size() > 2 &&
         pslope(pts[pts.size() - 2], pts.back()) < expected_order / 2)
    pts.pop_back();
  while (pts.size() > 2 && pslope(pts[0], pts[1]) < expected_order - 0.5)
    pts.erase(pts.begin());

  FitWindow w;
  w.count = int(pts.size());
  if (pts.size() < 2) return w;
  w.begin = pts.front();
  w.end = pts.back() + 1;
  double sx = 0, sy = 0;
  for (int i : pts) {
    sx += std::log2(dts[i]);
    sy += std::log2(errs[i]);
  }
  const double mx = sx / w.count, my = sy / w.count;
  double sxx = 0, sxy = 0;
  for (int i : pts) {
    const double dx = std::log2(dts[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log2(errs[i]) - my);
  }
  w.slope = sxy / sxx;
  return w;
}

}  // namespace rkproj
