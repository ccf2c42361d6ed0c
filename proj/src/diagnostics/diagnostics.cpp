#include "semflow/diagnostics/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "semflow/core/error.hpp"
#include "semflow/core/fft.hpp"

namespace semflow {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
using cplx = std::complex<double>;

int signed_mode(int i, int n) { return i <= n / 2 ? i : i - n; }
int deriv_mode(int i, int n) { return (n % 2 == 0 && i == n / 2) ? 0 : signed_mode(i, n); }

void check_periodic_grid(const GridField& g) {
    ensure(g.dim == 2 || g.dim == 3, "grid fields are 2D or 3D");
    for (int a = 0; a < g.dim; ++a)
        ensure(g.extent[a] >= 2 && g.extent[a] % 2 == 0 && g.length[a] > 0.0,
               "diagnostics expect an even periodic grid");
    ensure(g.channels >= 1, "field must carry at least one channel");
    ensure(g.data.size() == g.points() * g.channels, "field buffer size mismatch");
}

/// One channel extracted to a contiguous scalar array.
std::vector<double> channel_of(const GridField& g, int c) {
    std::vector<double> out(g.points());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.data[i * g.channels + c];
    return out;
}

std::vector<cplx> spectrum_of_channel(const GridField& g, int c) {
    std::vector<double> phys = channel_of(g, c);
    if (g.dim == 2) {
        std::vector<cplx> s(static_cast<std::size_t>(g.extent[0]) * (g.extent[1] / 2 + 1));
        fft::r2c_2d({g.extent[0], g.extent[1]}, phys.data(), s.data());
        return s;
    }
    std::vector<cplx> s(static_cast<std::size_t>(g.extent[0]) * g.extent[1] *
                        (g.extent[2] / 2 + 1));
    fft::r2c_3d({g.extent[0], g.extent[1], g.extent[2]}, phys.data(), s.data());
    return s;
}

/// Applies fn(flat_half_spectrum_index, |k_physical|, hermitian_weight).
template <class F>
void for_half_spectrum(const GridField& g, F&& fn) {
    int n1 = g.extent[0], n2 = g.extent[1], n3 = g.dim == 3 ? g.extent[2] : 1;
    double ku1 = kTwoPi / g.length[0], ku2 = kTwoPi / g.length[1];
    double ku3 = g.dim == 3 ? kTwoPi / g.length[2] : 0.0;
    if (g.dim == 2) {
        int h2 = n2 / 2 + 1;
        for (int i1 = 0; i1 < n1; ++i1) {
            double k1 = ku1 * signed_mode(i1, n1);
            for (int i2 = 0; i2 < h2; ++i2) {
                double k2 = ku2 * i2;
                double w = (i2 == 0 || i2 == n2 / 2) ? 1.0 : 2.0;
                fn(static_cast<std::size_t>(i1) * h2 + i2, std::sqrt(k1 * k1 + k2 * k2), w);
            }
        }
        return;
    }
    int h3 = n3 / 2 + 1;
    for (int i1 = 0; i1 < n1; ++i1) {
        double k1 = ku1 * signed_mode(i1, n1);
        for (int i2 = 0; i2 < n2; ++i2) {
            double k2 = ku2 * signed_mode(i2, n2);
            for (int i3 = 0; i3 < h3; ++i3) {
                double k3 = ku3 * i3;
                double w = (i3 == 0 || i3 == n3 / 2) ? 1.0 : 2.0;
                fn((static_cast<std::size_t>(i1) * n2 + i2) * h3 + i3,
                   std::sqrt(k1 * k1 + k2 * k2 + k3 * k3), w);
            }
        }
    }
}

/// All velocity-gradient components du_c/dx_a as physical arrays [c][a],
/// via spectral differentiation.
std::vector<std::vector<std::vector<double>>> velocity_gradients(const GridField& u) {
    int dim = u.dim;
    std::size_t np = u.points();
    std::vector<std::vector<std::vector<double>>> grad(
        u.channels, std::vector<std::vector<double>>(dim, std::vector<double>(np)));
    int n1 = u.extent[0], n2 = u.extent[1], n3 = dim == 3 ? u.extent[2] : 1;
    double ku[3] = {kTwoPi / u.length[0], kTwoPi / u.length[1],
                    dim == 3 ? kTwoPi / u.length[2] : 0.0};
    for (int c = 0; c < u.channels; ++c) {
        std::vector<cplx> base = spectrum_of_channel(u, c);
        std::vector<cplx> tmp(base.size());
        for (int a = 0; a < dim; ++a) {
            if (dim == 2) {
                int h2 = n2 / 2 + 1;
                for (int i1 = 0; i1 < n1; ++i1) {
                    double m1 = deriv_mode(i1, n1);
                    for (int i2 = 0; i2 < h2; ++i2) {
                        double m2 = deriv_mode(i2, n2);
                        double k = a == 0 ? ku[0] * m1 : ku[1] * m2;
                        tmp[static_cast<std::size_t>(i1) * h2 + i2] =
                            cplx(0.0, k) * base[static_cast<std::size_t>(i1) * h2 + i2];
                    }
                }
                fft::c2r_2d({n1, n2}, tmp.data(), grad[c][a].data());
            } else {
                int h3 = n3 / 2 + 1;
                for (int i1 = 0; i1 < n1; ++i1) {
                    double m1 = deriv_mode(i1, n1);
                    for (int i2 = 0; i2 < n2; ++i2) {
                        double m2 = deriv_mode(i2, n2);
                        for (int i3 = 0; i3 < h3; ++i3) {
                            double m3 = deriv_mode(i3, n3);
                            double k = a == 0 ? ku[0] * m1 : (a == 1 ? ku[1] * m2 : ku[2] * m3);
                            std::size_t id = (static_cast<std::size_t>(i1) * n2 + i2) * h3 + i3;
                            tmp[id] = cplx(0.0, k) * base[id];
                        }
                    }
                }
                fft::c2r_3d({n1, n2, n3}, tmp.data(), grad[c][a].data());
            }
        }
    }
    return grad;
}

double mean_strain_sq(const GridField& u) {
    auto grad = velocity_gradients(u);
    int d = u.dim;
    ensure(u.channels == d, "velocity field must carry one channel per axis");
    std::size_t np = u.points();
    double acc = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double sij = 0.5 * (grad[i][j][p] + grad[j][i][p]);
                acc += sij * sij;
            }
    }
    return acc / double(np);
}

}  // namespace

SpectrumReport energy_spectrum(const GridField& u, int fit_lo, int fit_hi) {
    check_periodic_grid(u);
    ensure(fit_lo >= 1 && fit_hi > fit_lo, "spectrum fit range must satisfy 1 <= lo < hi");
    double total = static_cast<double>(u.points());
    double norm = total * total;

    // Shell accumulation over all channels.
    std::vector<double> shells;
    for (int c = 0; c < u.channels; ++c) {
        std::vector<cplx> s = spectrum_of_channel(u, c);
        for_half_spectrum(u, [&](std::size_t id, double kmag, double w) {
            int bin = static_cast<int>(std::lround(kmag));
            if (bin >= static_cast<int>(shells.size())) shells.resize(bin + 1, 0.0);
            shells[bin] += 0.5 * w * std::norm(s[id]) / norm;
        });
    }

    SpectrumReport rep;
    rep.e = shells;
    rep.k.resize(shells.size());
    for (std::size_t i = 0; i < shells.size(); ++i) rep.k[i] = static_cast<int>(i);
    for (double e : shells) rep.total_energy += e;

    // Log-log least squares on the configured range (positive shells only).
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int count = 0;
    for (int k = fit_lo; k <= fit_hi && k < static_cast<int>(shells.size()); ++k) {
        if (shells[k] <= 0.0) continue;
        double x = std::log(double(k)), y = std::log(shells[k]);
        sx += x; sy += y; sxx += x * x; sxy += x * y;
        ++count;
    }
    rep.slope = count >= 2 ? (count * sxy - sx * sy) / (count * sxx - sx * sx) : 0.0;
    return rep;
}

S3Report structure_function_s3(const GridField& u, const std::vector<int>& lags) {
    check_periodic_grid(u);
    ensure(u.channels == u.dim, "structure function expects a velocity field");
    double dx0 = u.length[0] / u.extent[0];
    for (int a = 1; a < u.dim; ++a)
        ensure(std::abs(u.length[a] / u.extent[a] - dx0) < 1e-12 * dx0,
               "structure function expects equal grid spacing on every axis");

    S3Report rep;
    for (int lag : lags) {
        ensure(lag >= 1 && lag < *std::min_element(u.extent.begin(), u.extent.begin() + u.dim),
               "separation must be at least one and below the grid extent");
        double acc = 0.0;
        std::size_t count = 0;
        int n3 = u.dim == 3 ? u.extent[2] : 1;
        for (int a = 0; a < u.dim; ++a) {
            for (int i1 = 0; i1 < u.extent[0]; ++i1)
                for (int i2 = 0; i2 < u.extent[1]; ++i2)
                    for (int i3 = 0; i3 < n3; ++i3) {
                        std::array<int, 3> p{i1, i2, i3};
                        std::array<int, 3> q = p;
                        q[a] = (q[a] + lag) % u.extent[a];
                        double d = u.at(q, a) - u.at(p, a);
                        acc += d * d * d;
                        ++count;
                    }
        }
        rep.r.push_back(lag * dx0);
        rep.s3.push_back(acc / double(count));
    }
    return rep;
}

double q_from_gradient(std::span<const double> jac, int dim) {
    ensure(dim == 2 || dim == 3, "Jacobian dimension must be 2 or 3");
    ensure(jac.size() == static_cast<std::size_t>(dim) * dim, "Jacobian size mismatch");
    double acc = 0.0;
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) acc += jac[i * dim + j] * jac[j * dim + i];
    return -0.5 * acc;
}

GridField q_criterion(const GridField& u) {
    check_periodic_grid(u);
    ensure(u.channels == u.dim, "q-criterion expects a velocity field");
    auto grad = velocity_gradients(u);
    GridField q = make_grid_field(u.dim, u.extent, u.length, 1);
    q.time = u.time;
    std::size_t np = u.points();
    int d = u.dim;
    for (std::size_t p = 0; p < np; ++p) {
        double acc = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) acc += grad[i][j][p] * grad[j][i][p];
        q.data[p] = -0.5 * acc;
    }
    return q;
}

ErrorMetrics error_metrics(const GridField& ref, const GridField& pred) {
    check_periodic_grid(ref);
    ensure(ref.dim == pred.dim && ref.extent == pred.extent && ref.channels == pred.channels,
           "error metrics expect matching field shapes");

    double num = 0.0, dot = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        double d = ref.data[i] - pred.data[i];
        num += d * d;
        dot += ref.data[i] * pred.data[i];
        den += ref.data[i] * ref.data[i];
    }
    ensure(den > 0.0, "error metrics need a non-zero reference field");

    ErrorMetrics m;
    m.rel_l2 = std::sqrt(num / den);
    m.correlation = dot / den;

    // Channel-wise VRMSE with the variance floor.
    double np = static_cast<double>(ref.points());
    double vrmse_sum = 0.0;
    for (int c = 0; c < ref.channels; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < ref.points(); ++i) mean += ref.data[i * ref.channels + c];
        mean /= np;
        double mse = 0.0, var = 0.0;
        for (std::size_t i = 0; i < ref.points(); ++i) {
            double r = ref.data[i * ref.channels + c];
            double d = r - pred.data[i * ref.channels + c];
            mse += d * d;
            var += (r - mean) * (r - mean);
        }
        vrmse_sum += std::sqrt((mse / np) / (var / np + 1e-7));
    }
    m.vrmse = vrmse_sum / ref.channels;
    return m;
}

BalanceReport energy_balance(const std::vector<GridField>& snapshots, const SolverConfig& cfg) {
    ensure(!snapshots.empty(), "energy balance needs at least one snapshot");
    BalanceReport rep;
    std::vector<double> rates;
    for (const GridField& g : snapshots) {
        FlowState s = state_from_grid(g, cfg.kind);
        rep.times.push_back(g.time);
        rep.e_kin.push_back(kinetic_energy(s));
        rates.push_back(injection_rate(s, cfg) - dissipation_rate(s, cfg));
    }
    rep.e_tot.push_back(rep.e_kin.front());
    for (std::size_t i = 0; i + 1 < snapshots.size(); ++i) {
        double dt = rep.times[i + 1] - rep.times[i];
        ensure(dt > 0.0, "snapshot times must be strictly increasing");
        rep.e_tot.push_back(rep.e_tot.back() + 0.5 * dt * (rates[i] + rates[i + 1]));
    }
    rep.defect = std::abs(rep.e_kin.back() - rep.e_tot.back()) / rep.e_kin.front();
    return rep;
}

FlowStats derived_stats(double nu, double dissipation, double u_rms) {
    ensure_numeric(dissipation > 0.0, "flow statistics degenerate: dissipation vanishes");
    ensure(nu > 0.0, "flow statistics need positive viscosity");
    FlowStats f;
    f.e_k = 1.5 * u_rms * u_rms;
    f.dissipation = dissipation;
    f.u_rms = u_rms;
    f.taylor_lambda = u_rms * std::sqrt(15.0 * nu / dissipation);
    f.kolmogorov_eta = std::pow(nu * nu * nu / dissipation, 0.25);
    f.re_lambda = u_rms * f.taylor_lambda / nu;
    return f;
}

FlowStats flow_stats(const GridField& u, double nu) {
    check_periodic_grid(u);
    ensure(u.channels == u.dim, "flow statistics expect a velocity field");
    double e_k = 0.0;
    for (double v : u.data) e_k += v * v;
    e_k = 0.5 * e_k / static_cast<double>(u.points());
    double eps = 2.0 * nu * mean_strain_sq(u);
    FlowStats f = derived_stats(nu, eps, std::sqrt(2.0 * e_k / 3.0));
    f.e_k = e_k;  // report the measured energy, not the isotropic identity
    return f;
}

namespace {
std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    ensure(out.good(), "cannot open CSV file for writing: " + path);
    out.precision(12);
    return out;
}
}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<double>& times,
                       const std::vector<ErrorMetrics>& rows) {
    ensure(times.size() == rows.size(), "metrics CSV needs one time per row");
    auto out = open_csv(path);
    out << "time,rel_l2,correlation,vrmse\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
        out << times[i] << ',' << rows[i].rel_l2 << ',' << rows[i].correlation << ','
            << rows[i].vrmse << '\n';
}

void write_spectrum_csv(const std::string& path, const SpectrumReport& spec) {
    auto out = open_csv(path);
    out << "k,E_k\n";
    for (std::size_t i = 0; i < spec.k.size(); ++i)
        out << spec.k[i] << ',' << spec.e[i] << '\n';
}

void write_structure_csv(const std::string& path, const S3Report& s3) {
    auto out = open_csv(path);
    out << "r,S_L\n";
    for (std::size_t i = 0; i < s3.r.size(); ++i) out << s3.r[i] << ',' << s3.s3[i] << '\n';
}

}  // namespace semflow
