#pragma once

#include <array>
#include <cmath>

#include "hgpt/common.hpp"

namespace hgpt {

// W = R(theta) * T(c) * E(e1, e2) where
//   R = [[cos t, -sin t], [sin t, cos t]]   (rotation)
//   T = [[1, c], [0, 1]]                    (unit shear)
//   E = [[e1, 0], [0, e2]]                  (per-axis expansion)
// Unique for e1 > 0; requires det(W) != 0.
struct Factorization2x2 {
  double theta = 0.0;
  double c = 0.0;
  double e1 = 1.0;
  double e2 = 1.0;
};

using Mat2 = std::array<double, 4>;  // row-major [[m[0], m[1]], [m[2], m[3]]]

inline Mat2 reconstruct_2x2(const Factorization2x2& f) {
  const double ct = std::cos(f.theta), st = std::sin(f.theta);
  // R * T = [[ct, ct*c - st], [st, st*c + ct]]; then scale columns by e1, e2.
  return {ct * f.e1, (ct * f.c - st) * f.e2,  //
          st * f.e1, (st * f.c + ct) * f.e2};
}

// First column of W fixes theta and e1 (R*T*E keeps column 0 equal to
// e1 * [cos t, sin t]); det fixes e2; the remaining dot product fixes c.
// Computed trig-free so pure rotations recover c = 0, e = 1 exactly.
inline Factorization2x2 factorize_2x2(const Mat2& w) {
  const double det = w[0] * w[3] - w[1] * w[2];
  if (det == 0.0 || !std::isfinite(det)) {
    throw NumericError("factorize_2x2: matrix is singular or non-finite");
  }
  Factorization2x2 f;
  f.e1 = std::hypot(w[0], w[2]);
  if (f.e1 == 0.0) throw NumericError("factorize_2x2: zero first column");
  f.theta = std::atan2(w[2], w[0]);
  f.e2 = det / f.e1;
  f.c = (w[0] * w[1] + w[2] * w[3]) / (f.e1 * f.e2);
  return f;
}

}  // namespace hgpt
