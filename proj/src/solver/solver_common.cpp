#include <algorithm>
#include <cmath>
#include <numbers>

#include "semflow/core/error.hpp"
#include "semflow/core/fft.hpp"
#include "semflow/core/rng.hpp"
#include "spectral_util.hpp"

namespace semflow {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
using cplx = std::complex<double>;

int active_axes(int dim) { return dim; }

std::size_t half_modes(int dim, const std::array<int, 3>& res) {
    return dim == 2 ? static_cast<std::size_t>(res[0]) * (res[1] / 2 + 1)
                    : static_cast<std::size_t>(res[0]) * res[1] * (res[2] / 2 + 1);
}

void check_resolution(int dim, const std::array<int, 3>& res, int min_res) {
    for (int a = 0; a < active_axes(dim); ++a) {
        ensure(res[a] >= min_res && res[a] % 2 == 0,
               "solver resolution must be even and at least " + std::to_string(min_res) +
                   " points per axis");
    }
    if (dim == 2) ensure(res[2] == 1, "2D states use a trailing extent of 1");
}

}  // namespace

SolverConfig SolverConfig::kolmogorov_2d() {
    SolverConfig c;
    c.kind = FlowKind::Kolmogorov2D;
    c.res = {256, 256, 1};
    c.length = {kTwoPi, kTwoPi, 1.0};
    c.nu = 1e-3;
    c.forcing_k = 4;
    c.damping = 0.1;
    c.p_in = 0.0;
    c.burn_in = 40.0;
    c.dt_record = 0.125;
    return c;
}

SolverConfig SolverConfig::isotropic_3d() {
    SolverConfig c;
    c.kind = FlowKind::Isotropic3D;
    c.res = {96, 96, 96};
    c.length = {kTwoPi, kTwoPi, kTwoPi};
    c.nu = 1e-2;
    c.forcing_k = 0;
    c.damping = 0.0;
    c.p_in = 1.0;
    c.burn_in = 20.0;
    c.dt_record = 0.1;
    return c;
}

void SolverConfig::validate() const {
    check_resolution(dim(), res, 4);
    for (int a = 0; a < dim(); ++a) ensure(length[a] > 0.0, "domain length must be positive");
    ensure(nu >= 0.0, "viscosity must be non-negative");
    ensure(c_max > 0.0, "the CFL number must be positive");
    ensure(dt_record > 0.0, "the record interval must be positive");
    ensure(dealias_coeff > 0.0 && dealias_order >= 2, "invalid dealias filter parameters");
    ensure(burn_in >= 0.0, "burn-in time must be non-negative");
    ensure(damping >= 0.0, "damping must be non-negative");
}

FlowState init_random(const SolverConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int dim = cfg.dim();
    check_resolution(dim, cfg.res, 32);

    const int n1 = cfg.res[0], n2 = cfg.res[1], n3 = dim == 3 ? cfg.res[2] : 1;
    const int nc = dim == 2 ? 1 : 3;
    const std::size_t lattice = static_cast<std::size_t>(n1) * n2 * n3;
    const double ku1 = kTwoPi / cfg.length[0];
    const double ku2 = kTwoPi / cfg.length[1];
    const double ku3 = dim == 3 ? kTwoPi / cfg.length[2] : 1.0;
    constexpr double kBand = 16.0;  // populate 0 < |k| < 16

    auto full_idx = [&](int m1, int m2, int m3) {
        int i1 = (m1 + n1) % n1, i2 = (m2 + n2) % n2, i3 = (m3 + n3) % n3;
        return (static_cast<std::size_t>(i1) * n2 + i2) * n3 + i3;
    };

    std::vector<cplx> full(nc * lattice, cplx(0.0));
    Rng rng(seed);

    for (int i1 = 0; i1 < n1; ++i1) {
        int m1 = detail::signed_mode(i1, n1);
        for (int i2 = 0; i2 < n2; ++i2) {
            int m2 = detail::signed_mode(i2, n2);
            for (int i3 = 0; i3 < n3; ++i3) {
                int m3 = dim == 3 ? detail::signed_mode(i3, n3) : 0;
                double mm = std::sqrt(double(m1) * m1 + double(m2) * m2 + double(m3) * m3);
                if (mm == 0.0 || mm >= kBand) continue;
                bool canonical = m1 > 0 || (m1 == 0 && m2 > 0) || (m1 == 0 && m2 == 0 && m3 > 0);
                if (!canonical) continue;

                std::array<cplx, 3> gvec{};
                for (int c = 0; c < nc; ++c) {
                    double re = rng.normal(), im = rng.normal();
                    gvec[c] = cplx(re, im);
                }
                if (dim == 3) {
                    // Solenoidal projection of the random vector.
                    double k1 = ku1 * m1, k2 = ku2 * m2, k3 = ku3 * m3;
                    double kk = k1 * k1 + k2 * k2 + k3 * k3;
                    cplx kdot = (k1 * gvec[0] + k2 * gvec[1] + k3 * gvec[2]) / kk;
                    gvec[0] -= k1 * kdot;
                    gvec[1] -= k2 * kdot;
                    gvec[2] -= k3 * kdot;
                }
                for (int c = 0; c < nc; ++c) {
                    full[c * lattice + full_idx(m1, m2, m3)] = gvec[c];
                    full[c * lattice + full_idx(-m1, -m2, -m3)] = std::conj(gvec[c]);
                }
            }
        }
    }

    // Normalize shell-by-shell so the kinetic-energy spectrum follows
    // k^(-5/3) exactly, with unit total energy.
    constexpr int kMaxShell = 17;
    std::array<double, kMaxShell> shell_energy{};
    auto mode_energy = [&](int m1, int m2, int m3, std::size_t idx) {
        if (dim == 2) {
            double k1 = ku1 * m1, k2 = ku2 * m2;
            return 0.5 * std::norm(full[idx]) / (k1 * k1 + k2 * k2);
        }
        double e = 0.0;
        for (int c = 0; c < nc; ++c) e += std::norm(full[c * lattice + idx]);
        return 0.5 * e;
    };
    auto for_band = [&](auto&& fn) {
        for (int i1 = 0; i1 < n1; ++i1) {
            int m1 = detail::signed_mode(i1, n1);
            for (int i2 = 0; i2 < n2; ++i2) {
                int m2 = detail::signed_mode(i2, n2);
                for (int i3 = 0; i3 < n3; ++i3) {
                    int m3 = dim == 3 ? detail::signed_mode(i3, n3) : 0;
                    double mm = std::sqrt(double(m1) * m1 + double(m2) * m2 + double(m3) * m3);
                    if (mm == 0.0 || mm >= kBand) continue;
                    std::size_t idx = (static_cast<std::size_t>(i1) * n2 + i2) * n3 + i3;
                    fn(m1, m2, m3, int(std::lround(mm)), idx);
                }
            }
        }
    };
    for_band([&](int m1, int m2, int m3, int s, std::size_t idx) {
        shell_energy[s] += mode_energy(m1, m2, m3, idx);
    });
    double norm_sum = 0.0;
    for (int s = 1; s < kMaxShell; ++s)
        if (shell_energy[s] > 0.0) norm_sum += std::pow(double(s), -5.0 / 3.0);
    std::array<double, kMaxShell> scale{};
    for (int s = 1; s < kMaxShell; ++s) {
        if (shell_energy[s] <= 0.0) continue;
        double target = std::pow(double(s), -5.0 / 3.0) / norm_sum;
        scale[s] = std::sqrt(target / shell_energy[s]);
    }
    for_band([&](int, int, int, int s, std::size_t idx) {
        for (int c = 0; c < nc; ++c) full[c * lattice + idx] *= scale[s];
    });

    FlowState st;
    st.dim = dim;
    st.components = nc;
    st.res = {n1, n2, dim == 3 ? n3 : 1};
    st.length = cfg.length;
    st.time = 0.0;
    st.spec.assign(nc * half_modes(dim, st.res), cplx(0.0));
    const double total = static_cast<double>(n1) * n2 * n3;
    const int hlast = (dim == 3 ? n3 : n2) / 2 + 1;
    for (int c = 0; c < nc; ++c) {
        cplx* out = st.component(c);
        if (dim == 2) {
            for (int i1 = 0; i1 < n1; ++i1)
                for (int i2 = 0; i2 < hlast; ++i2)
                    out[static_cast<std::size_t>(i1) * hlast + i2] =
                        total * full[c * lattice + static_cast<std::size_t>(i1) * n2 + i2];
        } else {
            for (int i1 = 0; i1 < n1; ++i1)
                for (int i2 = 0; i2 < n2; ++i2)
                    for (int i3 = 0; i3 < hlast; ++i3)
                        out[(static_cast<std::size_t>(i1) * n2 + i2) * hlast + i3] =
                            total *
                            full[c * lattice + (static_cast<std::size_t>(i1) * n2 + i2) * n3 + i3];
        }
    }
    return st;
}

namespace detail {

std::vector<double> velocity_phys(const FlowState& s) {
    std::size_t np = static_cast<std::size_t>(s.res[0]) * s.res[1] * s.res[2];
    if (s.dim == 2) {
        std::vector<cplx> u = velocity_spec2d(s);
        std::size_t m = s.modes_per_component();
        std::vector<double> out(2 * np);
        std::array<int, 2> n{s.res[0], s.res[1]};
        fft::c2r_2d(n, u.data(), out.data());
        fft::c2r_2d(n, u.data() + m, out.data() + np);
        return out;
    }
    std::vector<double> out(3 * np);
    std::array<int, 3> n{s.res[0], s.res[1], s.res[2]};
    for (int c = 0; c < 3; ++c) fft::c2r_3d(n, s.component(c), out.data() + c * np);
    return out;
}

}  // namespace detail

std::vector<cplx> forcing(const FlowState& s, const SolverConfig& cfg) {
    ensure(s.dim == cfg.dim(), "state dimensionality does not match the configuration");
    return s.dim == 2 ? detail::forcing2d(s, cfg) : detail::forcing3d(s, cfg);
}

double cfl_dt(const FlowState& s, const SolverConfig& cfg) {
    std::vector<double> vel = detail::velocity_phys(s);
    double vmax = 0.0;
    for (double v : vel) vmax = std::max(vmax, std::abs(v));
    double dx = cfg.length[0] / s.res[0];
    for (int a = 1; a < s.dim; ++a) dx = std::min(dx, cfg.length[a] / s.res[a]);
    double dt = vmax > 0.0 ? cfg.c_max * dx / vmax : cfg.dt_record;
    return std::clamp(dt, 1e-6, cfg.dt_record);
}

void step(FlowState& s, double dt, const SolverConfig& cfg) {
    ensure(s.dim == cfg.dim(), "state dimensionality does not match the configuration");
    ensure(dt != 0.0 && std::isfinite(dt), "step size must be finite and non-zero");
    if (s.dim == 2) {
        detail::step2d(s, dt, cfg);
    } else {
        detail::step3d(s, dt, cfg);
    }
}

Trajectory simulate(FlowState& s, double T, const SolverConfig& cfg,
                    std::array<int, 3> record_res) {
    ensure(T >= 0.0, "simulation horizon must be non-negative");
    Trajectory out;
    auto log_state = [&] {
        out.times.push_back(s.time);
        out.energy.push_back(kinetic_energy(s));
        out.injection.push_back(injection_rate(s, cfg));
        out.dissipation.push_back(dissipation_rate(s, cfg));
    };
    auto march_to = [&](double target) {
        while (s.time < target - 1e-12) {
            double dt = std::min(cfl_dt(s, cfg), target - s.time);
            step(s, dt, cfg);
            log_state();
        }
    };

    double t_start = s.time;
    int n_rec = static_cast<int>(std::floor(T / cfg.dt_record + 1e-9)) + 1;
    log_state();
    out.snapshots.push_back(state_to_grid(s, record_res));
    for (int j = 1; j < n_rec; ++j) {
        march_to(t_start + j * cfg.dt_record);
        s.time = t_start + j * cfg.dt_record;  // absorb roundoff from sub-stepping
        out.snapshots.push_back(state_to_grid(s, record_res));
    }
    march_to(t_start + T);
    return out;
}

FlowState state_from_grid(const GridField& g, FlowKind kind) {
    int dim = kind == FlowKind::Kolmogorov2D ? 2 : 3;
    ensure(g.dim == dim, "grid dimensionality does not match the flow kind");
    int expect = dim == 2 ? 1 : 3;
    ensure(g.channels == expect, "grid channel count does not match the flow kind");
    check_resolution(dim, g.extent, 4);

    FlowState s;
    s.dim = dim;
    s.components = expect;
    s.res = g.extent;
    s.length = g.length;
    s.time = g.time;
    s.spec.assign(expect * half_modes(dim, s.res), cplx(0.0));

    std::size_t np = g.points();
    std::vector<double> scratch(np);
    for (int c = 0; c < expect; ++c) {
        for (std::size_t i = 0; i < np; ++i) scratch[i] = g.data[i * g.channels + c];
        if (dim == 2) {
            fft::r2c_2d({s.res[0], s.res[1]}, scratch.data(), s.component(c));
        } else {
            fft::r2c_3d({s.res[0], s.res[1], s.res[2]}, scratch.data(), s.component(c));
        }
    }
    return s;
}

GridField state_to_grid(const FlowState& s, std::array<int, 3> res) {
    if (s.dim == 2) res[2] = 1;
    check_resolution(s.dim, res, 4);

    const int n_last_in = s.dim == 2 ? s.res[1] : s.res[2];
    const int h_in = n_last_in / 2 + 1;
    const int n_last_out = s.dim == 2 ? res[1] : res[2];
    const int h_out = n_last_out / 2 + 1;
    const double total_in = static_cast<double>(s.res[0]) * s.res[1] * s.res[2];
    const double total_out = static_cast<double>(res[0]) * res[1] * res[2];
    const double scale = total_out / total_in;

    GridField g = make_grid_field(s.dim, res, s.length, s.components);
    g.time = s.time;

    std::size_t out_modes = half_modes(s.dim, res);
    std::vector<cplx> spec(out_modes);
    std::vector<double> phys(g.points());
    // Map signed target modes onto source storage; modes absent from either
    // side (including both Nyquist rows) stay zero.
    auto source_index = [&](int m1, int m2, int m3) -> std::ptrdiff_t {
        if (2 * std::abs(m1) >= s.res[0] || 2 * std::abs(m2) >= s.res[1]) return -1;
        if (s.dim == 3 && 2 * std::abs(m3) >= s.res[2]) return -1;
        int i1 = (m1 + s.res[0]) % s.res[0];
        int i2 = s.dim == 2 ? m2 : (m2 + s.res[1]) % s.res[1];
        if (s.dim == 2) return static_cast<std::ptrdiff_t>(i1) * h_in + i2;
        return (static_cast<std::ptrdiff_t>(i1) * s.res[1] + i2) * h_in + m3;
    };

    for (int c = 0; c < s.components; ++c) {
        std::fill(spec.begin(), spec.end(), cplx(0.0));
        const cplx* src = s.component(c);
        if (s.dim == 2) {
            for (int j1 = 0; j1 < res[0]; ++j1) {
                int m1 = detail::deriv_mode(j1, res[0]);
                if (m1 == 0 && j1 == res[0] / 2) continue;  // target Nyquist row
                for (int j2 = 0; j2 < h_out; ++j2) {
                    if (j2 == res[1] / 2) continue;
                    std::ptrdiff_t si = source_index(m1, j2, 0);
                    if (si >= 0)
                        spec[static_cast<std::size_t>(j1) * h_out + j2] = scale * src[si];
                }
            }
            fft::c2r_2d({res[0], res[1]}, spec.data(), phys.data());
        } else {
            for (int j1 = 0; j1 < res[0]; ++j1) {
                int m1 = detail::deriv_mode(j1, res[0]);
                if (m1 == 0 && j1 == res[0] / 2) continue;
                for (int j2 = 0; j2 < res[1]; ++j2) {
                    int m2 = detail::deriv_mode(j2, res[1]);
                    if (m2 == 0 && j2 == res[1] / 2) continue;
                    for (int j3 = 0; j3 < h_out; ++j3) {
                        if (j3 == res[2] / 2) continue;
                        std::ptrdiff_t si = source_index(m1, m2, j3);
                        if (si >= 0)
                            spec[(static_cast<std::size_t>(j1) * res[1] + j2) * h_out + j3] =
                                scale * src[si];
                    }
                }
            }
            fft::c2r_3d({res[0], res[1], res[2]}, spec.data(), phys.data());
        }
        for (std::size_t i = 0; i < g.points(); ++i) g.data[i * g.channels + c] = phys[i];
    }
    return g;
}

GridField velocity_grid(const FlowState& s) {
    GridField g = make_grid_field(s.dim, s.res, s.length, s.dim);
    g.time = s.time;
    std::vector<double> vel = detail::velocity_phys(s);
    std::size_t np = g.points();
    for (int c = 0; c < s.dim; ++c)
        for (std::size_t i = 0; i < np; ++i) g.data[i * g.channels + c] = vel[c * np + i];
    return g;
}

double kinetic_energy(const FlowState& s) {
    return s.dim == 2 ? detail::energy2d(s) : detail::energy3d(s);
}

double enstrophy(const FlowState& s) {
    ensure(s.dim == 2, "enstrophy is reported for 2D vorticity states");
    const cplx* w = s.component(0);
    int n1 = s.res[0], n2 = s.res[1], h2 = n2 / 2 + 1;
    double total = static_cast<double>(n1) * n2, sum = 0.0;
    for (int i1 = 0; i1 < n1; ++i1)
        for (int i2 = 0; i2 < h2; ++i2)
            sum += detail::herm_weight(i2, n2) *
                   std::norm(w[static_cast<std::size_t>(i1) * h2 + i2]);
    return 0.5 * sum / (total * total);
}

double max_divergence(const FlowState& s) {
    ensure(s.dim == 3, "divergence is tracked for 3D velocity states");
    int n1 = s.res[0], n2 = s.res[1], n3 = s.res[2], h3 = n3 / 2 + 1;
    double ku1 = kTwoPi / s.length[0], ku2 = kTwoPi / s.length[1], ku3 = kTwoPi / s.length[2];
    const cplx* u1 = s.component(0);
    const cplx* u2 = s.component(1);
    const cplx* u3 = s.component(2);
    double total = static_cast<double>(n1) * n2 * n3, worst = 0.0;
    for (int i1 = 0; i1 < n1; ++i1) {
        double k1 = ku1 * detail::deriv_mode(i1, n1);
        for (int i2 = 0; i2 < n2; ++i2) {
            double k2 = ku2 * detail::deriv_mode(i2, n2);
            for (int i3 = 0; i3 < h3; ++i3) {
                double k3 = ku3 * detail::deriv_mode(i3, n3);
                std::size_t id = (static_cast<std::size_t>(i1) * n2 + i2) * h3 + i3;
                cplx div = cplx(0.0, k1) * u1[id] + cplx(0.0, k2) * u2[id] + cplx(0.0, k3) * u3[id];
                worst = std::max(worst, std::abs(div) / total);
            }
        }
    }
    return worst;
}

double injection_rate(const FlowState& s, const SolverConfig& cfg) {
    ensure(s.dim == cfg.dim(), "state dimensionality does not match the configuration");
    return s.dim == 2 ? detail::injection2d(s, cfg) : detail::injection3d(s, cfg);
}

double dissipation_rate(const FlowState& s, const SolverConfig& cfg) {
    ensure(s.dim == cfg.dim(), "state dimensionality does not match the configuration");
    if (s.dim == 2) return 2.0 * cfg.nu * enstrophy(s);
    int n1 = s.res[0], n2 = s.res[1], n3 = s.res[2], h3 = n3 / 2 + 1;
    double ku1 = kTwoPi / s.length[0], ku2 = kTwoPi / s.length[1], ku3 = kTwoPi / s.length[2];
    double total = static_cast<double>(n1) * n2 * n3, sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        const cplx* uc = s.component(c);
        for (int i1 = 0; i1 < n1; ++i1) {
            double k1 = ku1 * detail::signed_mode(i1, n1);
            for (int i2 = 0; i2 < n2; ++i2) {
                double k2 = ku2 * detail::signed_mode(i2, n2);
                for (int i3 = 0; i3 < h3; ++i3) {
                    double k3 = ku3 * detail::signed_mode(i3, n3);
                    double kk = k1 * k1 + k2 * k2 + k3 * k3;
                    std::size_t id = (static_cast<std::size_t>(i1) * n2 + i2) * h3 + i3;
                    sum += detail::herm_weight(i3, n3) * kk * std::norm(uc[id]);
                }
            }
        }
    }
    return cfg.nu * sum / (total * total);
}

}  // namespace semflow
