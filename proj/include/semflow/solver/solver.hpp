#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <vector>

#include "semflow/basis/field.hpp"

namespace semflow {

enum class FlowKind { Kolmogorov2D, Isotropic3D };

/// Physical and numerical parameters of one flow family.  Defaults follow
/// the two reference regimes; the static constructors fill them in.
struct SolverConfig {
    FlowKind kind = FlowKind::Kolmogorov2D;
    std::array<int, 3> res{256, 256, 1};
    std::array<double, 3> length{6.283185307179586, 6.283185307179586, 1.0};
    double nu = 1e-3;

    // 2D Kolmogorov column: tendency += forcing_k * cos(forcing_k * x) on the
    // vorticity and -damping * omega.  forcing_k <= 0 switches forcing off.
    int forcing_k = 4;
    double damping = 0.1;

    // 3D isotropic column: f
    //   = (p_in / E_1) u on 0 < |k| <= 1.  p_in <= 0 switches forcing off.
    double p_in = 1.0;

    double c_max = 1.0;            // CFL number
    double dealias_coeff = 36.0;   // exp(-coeff (|k|/k_N)^order)
    int dealias_order = 36;
    double burn_in = 40.0;         // seconds before recording starts
    double dt_record = 0.125;      // snapshot spacing (also the dt ceiling)

    int dim() const { return kind == FlowKind::Kolmogorov2D ? 2 : 3; }

    static SolverConfig kolmogorov_2d();  // nu 1e-3, k=4, t0=40, dt=0.125
    static SolverConfig isotropic_3d();   // nu 1e-2, P_in=1, t0=20, dt=0.1

    void validate() const;
};

/// Spectral solver state: raw (unnormalized forward-FFT) half-spectrum
/// coefficients, one block per component, each [n1][n2][n3/2+1] for 3D and
/// [n1][n2/2+1] for 2D.  2D carries vorticity (1 component), 3D velocity
/// (3 components).  Physical fields are real, so Hermitian symmetry holds.
struct FlowState {
    int dim = 2;
    int components = 1;
    std::array<int, 3> res{1, 1, 1};
    std::array<double, 3> length{1.0, 1.0, 1.0};
    double time = 0.0;
    std::vector<std::complex<double>> spec;

    std::size_t modes_per_component() const {
        return dim == 2 ? static_cast<std::size_t>(res[0]) * (res[1] / 2 + 1)
                        : static_cast<std::size_t>(res[0]) * res[1] * (res[2] / 2 + 1);
    }
    std::complex<double>* component(int c) { return spec.data() + c * modes_per_component(); }
    const std::complex<double>* component(int c) const {
        return spec.data() + c * modes_per_component();
    }
};

/// Random initial condition: shells 0 < |k| < 16 with random phases and
/// per-shell energy proportional to k^(-5/3) (total kinetic energy 1);
/// modes above the band stay zero; 3D output is divergence-free.
FlowState init_random(const SolverConfig& cfg, std::uint64_t seed);

/// Spectral forcing tendency (3D: low-mode power injection; 2D: Kolmogorov
/// stripe forcing plus linear damping).  Same layout as state.spec.
std::vector<std::complex<double>> forcing(const FlowState& s, const SolverConfig& cfg);

/// CFL-limited step size, clamped to [1e-6, cfg.dt_record].
double cfl_dt(const FlowState& s, const SolverConfig& cfg);

/// One Strang-split step: half Crank-Nicolson diffusion, RK4 on the
/// dealiased advection+forcing tendency, half Crank-Nicolson diffusion.
/// Throws NumericError if kinetic energy grows more than tenfold.
void step(FlowState& s, double dt, const SolverConfig& cfg);

struct Trajectory {
    std::vector<GridField> snapshots;  // at t0 + i*dt_record
    // Per internal step (including the initial point): time, kinetic
    // energy, injection rate, viscous dissipation.  Feed these to the
    // energy-balance check.
    std::vector<double> times, energy, injection, dissipation;
};

/// Advances by T, recording FFT-truncated snapshots every cfg.dt_record
/// (the first snapshot is the initial state).  Sub-steps shrink to land on
/// record times exactly.
Trajectory simulate(FlowState& s, double T, const SolverConfig& cfg,
                    std::array<int, 3> record_res);

// Conversions and scalar diagnostics.
FlowState state_from_grid(const GridField& g, FlowKind kind);
/// Spectral truncation (or zero-padded refinement) to `res`, then inverse
/// transform.  Channels: 2D vorticity, 3D velocity.
GridField state_to_grid(const FlowState& s, std::array<int, 3> res);
/// Physical velocity field at native resolution (2D derives it from the
/// streamfunction; 3D inverse-transforms directly).
GridField velocity_grid(const FlowState& s);

double kinetic_energy(const FlowState& s);
double enstrophy(const FlowState& s);            // 2D only
double max_divergence(const FlowState& s);       // 3D: max_k |k . u_hat| (normalized)
double injection_rate(const FlowState& s, const SolverConfig& cfg);   // <f . u>
double dissipation_rate(const FlowState& s, const SolverConfig& cfg); // 2 nu <|S|^2>

}  // namespace semflow
