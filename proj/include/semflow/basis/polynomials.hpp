#pragma once

#include <span>

namespace semflow {

/// Polynomial family used for element-local bases and quadrature.  Both are
/// taken in their shifted form on [0, 1].
enum class BasisKind { Chebyshev, Legendre };

/// p_m(x) for the shifted family: Chebyshev T_m(2x-1) or Legendre P_m(2x-1).
/// Requires m >= 0 and x in [0, 1].
double orthopoly_eval(BasisKind kind, int m, double x);

/// Fills out[0..m_max] with p_0(x) .. p_{m_max}(x) via the three-term
/// recurrence (out.size() must be m_max + 1).
void orthopoly_eval_all(BasisKind kind, int m_max, double x, std::span<double> out);

/// Modal element basis of order M on [0, 1]:
///   phi_0(x)     = 1 - x
///   phi_{M-1}(x) = x
///   phi_m(x)     = (x - x^2) * p_{m-1}(x)   for 0 < m < M - 1
/// The two hat functions carry the interface values; the bubbles vanish at
/// both endpoints, which is what makes stitching elements C0 trivial.
double modal_basis_eval(BasisKind kind, int M, int m, double x);

/// All M modal basis values at x (out.size() must be M).
void modal_basis_eval_all(BasisKind kind, int M, double x, std::span<double> out);

}  // namespace semflow
