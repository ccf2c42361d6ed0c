#pragma once

#include <span>
#include <string>
#include <vector>

#include "semflow/basis/field.hpp"
#include "semflow/solver/solver.hpp"

namespace semflow {

/// Shell-binned kinetic-energy spectrum (unit-width bins by round(|k|)).
struct SpectrumReport {
    std::vector<int> k;        // shell indices, 0..k_max
    std::vector<double> e;     // shell energies
    double total_energy = 0.0; // 0.5 <|u|^2>
    double slope = 0.0;        // least-squares log-log fit on [fit_lo, fit_hi]
};

struct FlowStats {
    double e_k = 0.0;           // kinetic energy (domain mean)
    double dissipation = 0.0;   // 2 nu <|S|^2>
    double u_rms = 0.0;         // sqrt(2 E_k / 3)
    double taylor_lambda = 0.0; // u_rms sqrt(15 nu / eps)
    double kolmogorov_eta = 0.0;// (nu^3 / eps)^(1/4)
    double re_lambda = 0.0;     // u_rms lambda / nu
};

struct ErrorMetrics {
    double rel_l2 = 0.0;
    double correlation = 0.0;
    double vrmse = 0.0;
};

struct S3Report {
    std::vector<double> r;   // physical separations
    std::vector<double> s3;  // longitudinal third-order structure function
};

struct BalanceReport {
    std::vector<double> times;
    std::vector<double> e_kin;  // measured kinetic energy per snapshot
    std::vector<double> e_tot;  // k(0) + trapezoid of (injection - dissipation)
    double defect = 0.0;        // |e_kin.back() - e_tot.back()| / e_kin.front()
};

/// Energy spectrum of a periodic grid field (channels summed), with an
/// inertial-range slope fitted on shells [fit_lo, fit_hi].
SpectrumReport energy_spectrum(const GridField& u, int fit_lo = 4, int fit_hi = 16);

/// Longitudinal third-order structure function at axis-aligned separations
/// of `lags` grid steps, averaged over all points and axes.
S3Report structure_function_s3(const GridField& u, const std::vector<int>& lags);

/// Pointwise q = (|Omega|^2 - |S|^2) / 2 from spectral velocity gradients.
GridField q_criterion(const GridField& u);

/// Same invariant from a raw velocity Jacobian (row-major d x d with
/// entries J[i * d + j] = du_i / dx_j); used to probe analytic fields.
double q_from_gradient(std::span<const double> jac, int dim);

/// rel_l2 = |ref - pred| / |ref|; correlation = <ref, pred> / |ref|^2;
/// VRMSE = sqrt(<|ref - pred|^2> / (Var(ref) + 1e-7)) averaged over
/// channels.  Throws on a zero-norm reference.
ErrorMetrics error_metrics(const GridField& ref, const GridField& pred);

/// Energy budget over recorded snapshots: E_tot(t) = k(0) + trapezoid of
/// (<f . u> - 2 nu <|S|^2>) at the snapshot cadence.
BalanceReport energy_balance(const std::vector<GridField>& snapshots, const SolverConfig& cfg);

/// Turbulence statistics of a velocity field.  Throws when the
/// dissipation vanishes (the derived scales degenerate).
FlowStats flow_stats(const GridField& u, double nu);

/// The scale relations alone, from (nu, dissipation, u_rms).
FlowStats derived_stats(double nu, double dissipation, double u_rms);

// CSV emitters (header row + data rows).
void write_metrics_csv(const std::string& path, const std::vector<double>& times,
                       const std::vector<ErrorMetrics>& rows);
void write_spectrum_csv(const std::string& path, const SpectrumReport& spec);
void write_structure_csv(const std::string& path, const S3Report& s3);

}  // namespace semflow
