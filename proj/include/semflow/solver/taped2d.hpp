#pragma once

#include <complex>
#include <vector>

#include "semflow/solver/solver.hpp"
#include "semflow/tensor/ops.hpp"

namespace semflow {

/// Differentiable mirror of the 2D Kolmogorov step, expressed in tensor ops
/// on full-spectrum states [n1, n2, 2] (interleaved, raw forward-FFT
/// convention).  Numerically matches the production stepper to roundoff so
/// gradients flow through exactly the dynamics used for data generation.
class TapedSolver2D {
public:
    explicit TapedSolver2D(const SolverConfig& cfg);

    /// One Strang-split step (half diffusion / RK4 advection / half
    /// diffusion) on the spectral state.
    Tensor step(Tensor w_hat, double dt) const;

    /// Physical vorticity [n1, n2] -> raw spectrum [n1, n2, 2].
    Tensor spectrum(Tensor w_phys) const;

    /// Raw spectrum [n1, n2, 2] -> physical vorticity [n1, n2].
    Tensor physical(Tensor w_hat) const;

    int n1() const { return n1_; }
    int n2() const { return n2_; }

private:
    Tensor tendency(Tensor w_hat) const;
    std::vector<std::complex<double>> cn_factor(double dt) const;

    SolverConfig cfg_;
    int n1_, n2_;
    // Constant full-spectrum multiplier fields.
    std::vector<std::complex<double>> mult_ux_, mult_uy_, mult_dx_, mult_dy_, filter_;
    std::vector<double> forcing_;  // interleaved [n1, n2, 2] raw tendency, or empty
};

}  // namespace semflow
