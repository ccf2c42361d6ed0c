#pragma once

// Internal half-spectrum helpers shared by the 2D and 3D flow solvers.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "semflow/solver/solver.hpp"

namespace semflow::detail {

/// Signed lattice index for position i on an axis of n points: 0..n/2, then
/// negative.  (i == n/2 maps to +n/2; use deriv_mode for odd derivatives.)
inline int signed_mode(int i, int n) { return i <= n / 2 ? i : i - n; }

/// Signed index with the Nyquist row zeroed, as required for first
/// derivatives of real fields.
inline int deriv_mode(int i, int n) {
    if (n % 2 == 0 && i == n / 2) return 0;
    return signed_mode(i, n);
}

/// Multiplicity of a stored half-spectrum entry (last-axis index i of n):
/// interior columns stand for a conjugate pair.
inline double herm_weight(int i, int n) {
    return (i == 0 || (n % 2 == 0 && i == n / 2)) ? 1.0 : 2.0;
}

/// Smooth spectral cutoff exp(-c (|k|/k_N)^p).
inline double smooth_filter(double ratio, double coeff, int order) {
    return std::exp(-coeff * std::pow(ratio, order));
}

// Per-dimension internals (raw half-spectrum coefficients throughout).
void step2d(FlowState& s, double dt, const SolverConfig& cfg);
void step3d(FlowState& s, double dt, const SolverConfig& cfg);

/// 2D: velocity half-spectrum (2 components) from the vorticity state.
std::vector<std::complex<double>> velocity_spec2d(const FlowState& s);

/// Physical velocity samples, component-major, at native resolution.
std::vector<double> velocity_phys(const FlowState& s);

double energy2d(const FlowState& s);
double energy3d(const FlowState& s);
double injection2d(const FlowState& s, const SolverConfig& cfg);
double injection3d(const FlowState& s, const SolverConfig& cfg);

std::vector<std::complex<double>> forcing2d(const FlowState& s, const SolverConfig& cfg);
std::vector<std::complex<double>> forcing3d(const FlowState& s, const SolverConfig& cfg);

}  // namespace semflow::detail
