#pragma once

#include <cmath>

#include "s4dkit/common.hpp"

namespace s4dkit::detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// e^z - 1 without cancellation for small |z|.
inline cplx cexpm1(cplx z) {
  const double x = z.real(), y = z.imag();
  const double s = std::sin(0.5 * y);
  return {std::expm1(x) * std::cos(y) - 2.0 * s * s, std::exp(x) * std::sin(y)};
}

// phi1(z) = (e^z - 1)/z; 4-term Taylor branch below |z| = 1e-4.
inline cplx phi1(cplx z) {
  if (std::abs(z) < 1e-4)
    return 1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0)));
  return cexpm1(z) / z;
}

// phi1'(z) = (e^z (z-1) + 1)/z^2 = (expm1(z)(z-1) + z)/z^2.
inline cplx phi1_deriv(cplx z) {
  if (std::abs(z) < 1e-3)
    return 0.5 + z * (1.0 / 3.0 + z * (0.125 + z * (1.0 / 30.0)));
  return (cexpm1(z) * (z - 1.0) + z) / (z * z);
}

}  // namespace s4dkit::detail
