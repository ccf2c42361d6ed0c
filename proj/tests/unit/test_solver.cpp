#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <doctest.h>

#include "semflow/core/error.hpp"
#include "semflow/solver/solver.hpp"
#include "semflow/solver/taped2d.hpp"
#include "semflow/tensor/gradcheck.hpp"
#include "semflow/tensor/ops.hpp"

using namespace semflow;

namespace {

constexpr double kPi = std::numbers::pi;

template <class F>
GridField grid2d(int n, F&& f) {
    GridField g = make_grid_field(2, {n, n, 1}, {2 * kPi, 2 * kPi, 1.0}, 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            g.at({i, j, 0}, 0) = f(g.coord(0, i), g.coord(1, j));
    return g;
}

double rel_l2(const GridField& a, const GridField& b) {
    REQUIRE(a.data.size() == b.data.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        num += d * d;
        den += b.data[i] * b.data[i];
    }
    return std::sqrt(num / den);
}

SolverConfig unforced_2d(int n, double nu) {
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {n, n, 1};
    cfg.nu = nu;
    cfg.forcing_k = 0;
    cfg.damping = 0.0;
    return cfg;
}

/// Smooth multi-mode test vorticity with O(1) amplitude and no symmetry.
double sample_vorticity(double x, double y) {
    return 2.0 * std::cos(x) * std::cos(y) + 0.8 * std::cos(2 * x - y + 0.3) +
           0.6 * std::sin(x + 2 * y + 1.1) + 0.5 * std::cos(3 * x + y - 0.7);
}

double trapezoid_balance_defect(const Trajectory& t) {
    double acc = t.energy.front();
    for (std::size_t i = 0; i + 1 < t.times.size(); ++i) {
        double rate0 = t.injection[i] - t.dissipation[i];
        double rate1 = t.injection[i + 1] - t.dissipation[i + 1];
        acc += 0.5 * (t.times[i + 1] - t.times[i]) * (rate0 + rate1);
    }
    return std::abs(t.energy.back() - acc) / t.energy.front();
}

}  // namespace

TEST_CASE("stationary vortex array decays at the exact viscous rate") {
    const int n = 64;
    const double nu = 0.01, dt = 1e-3, T = 1.0;
    SolverConfig cfg = unforced_2d(n, nu);
    GridField w0 = grid2d(n, [](double x, double y) { return 2.0 * std::cos(x) * std::cos(y); });
    FlowState s = state_from_grid(w0, FlowKind::Kolmogorov2D);
    int steps = static_cast<int>(std::lround(T / dt));
    for (int i = 0; i < steps; ++i) step(s, dt, cfg);
    double decay = std::exp(-2.0 * nu * T);
    GridField wexact = grid2d(n, [&](double x, double y) {
        return 2.0 * std::cos(x) * std::cos(y) * decay;
    });
    GridField wT = state_to_grid(s, {n, n, 1});
    CHECK(rel_l2(wT, wexact) < 1e-6);
    CHECK(s.time == doctest::Approx(T).epsilon(1e-12));
}

TEST_CASE("unforced inviscid flow conserves energy and enstrophy") {
    const int n = 128;
    SolverConfig cfg = unforced_2d(n, 0.0);
    FlowState s = state_from_grid(grid2d(n, [](double x, double y) {
        return sample_vorticity(x, y);
    }), FlowKind::Kolmogorov2D);
    double e0 = kinetic_energy(s), z0 = enstrophy(s);
    REQUIRE(e0 > 0.1);
    const double dt = 1e-3;
    for (int i = 0; i < 1000; ++i) step(s, dt, cfg);
    CHECK(std::abs(kinetic_energy(s) - e0) / e0 < 1e-6);
    CHECK(std::abs(enstrophy(s) - z0) / z0 < 1e-6);
}

TEST_CASE("an inviscid step is reversible by stepping backward") {
    const int n = 64;
    SolverConfig cfg = unforced_2d(n, 0.0);
    FlowState s = state_from_grid(grid2d(n, [](double x, double y) {
        return sample_vorticity(x, y);
    }), FlowKind::Kolmogorov2D);
    std::vector<std::complex<double>> before = s.spec;
    step(s, 1e-2, cfg);
    step(s, -1e-2, cfg);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        num += std::norm(s.spec[i] - before[i]);
        den += std::norm(before[i]);
    }
    CHECK(std::sqrt(num / den) < 1e-8);
}

TEST_CASE("random initial spectra follow the prescribed shell law exactly") {
    SolverConfig cfg = unforced_2d(64, 1e-3);
    const int n_seeds = 32;
    std::vector<double> shell_sum(16, 0.0);
    for (int seed = 0; seed < n_seeds; ++seed) {
        FlowState s = init_random(cfg, 1000 + seed);
        CHECK(kinetic_energy(s) == doctest::Approx(1.0).epsilon(1e-10));
        // Accumulate velocity-energy shells from the spectrum.
        int n1 = s.res[0], n2 = s.res[1], h2 = n2 / 2 + 1;
        const std::complex<double>* w = s.component(0);
        double total = double(n1) * n2;
        for (int i1 = 0; i1 < n1; ++i1) {
            int m1 = i1 <= n1 / 2 ? i1 : i1 - n1;
            for (int i2 = 0; i2 < h2; ++i2) {
                double mm = std::sqrt(double(m1) * m1 + double(i2) * i2);
                if (mm == 0.0 || mm >= 16.0) continue;
                double weight = (i2 == 0 || i2 == n2 / 2) ? 1.0 : 2.0;
                double e = 0.5 * weight * std::norm(w[std::size_t(i1) * h2 + i2]) /
                           (mm * mm * total * total);
                shell_sum[std::lround(mm)] += e / n_seeds;
            }
        }
    }
    double c_ref = shell_sum[1];  // implies the normalization constant
    for (int sidx = 2; sidx <= 12; ++sidx) {
        double expected = c_ref * std::pow(double(sidx), -5.0 / 3.0);
        CHECK(std::abs(shell_sum[sidx] - expected) / expected < 0.2);
    }

    // Determinism: identical seeds give identical states.
    FlowState a = init_random(cfg, 7), b = init_random(cfg, 7), c = init_random(cfg, 8);
    CHECK(a.spec == b.spec);
    CHECK(a.spec != c.spec);

    SolverConfig tiny = unforced_2d(16, 1e-3);
    CHECK_THROWS_AS((void)init_random(tiny, 1), ValidationError);
}

TEST_CASE("3D random initial states are solenoidal and stay so under stepping") {
    SolverConfig cfg = SolverConfig::isotropic_3d();
    cfg.res = {32, 32, 32};
    FlowState s = init_random(cfg, 42);
    CHECK(kinetic_energy(s) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(max_divergence(s) < 1e-12);
    for (int i = 0; i < 3; ++i) step(s, cfl_dt(s, cfg), cfg);
    CHECK(max_divergence(s) < 1e-10);

    // Hermitian bookkeeping: the k3 = 0 plane must stay conjugate-symmetric.
    int n = 32, h3 = n / 2 + 1;
    for (int c = 0; c < 3; ++c) {
        const std::complex<double>* u = s.component(c);
        for (int i1 = 0; i1 < n; ++i1)
            for (int i2 = 0; i2 < n; ++i2) {
                auto a = u[(std::size_t(i1) * n + i2) * h3];
                auto b = u[(std::size_t((n - i1) % n) * n + (n - i2) % n) * h3];
                CHECK(std::abs(a - std::conj(b)) < 1e-12 * double(n) * n * n);
            }
    }
}

TEST_CASE("low-mode power injection delivers exactly twice the target power") {
    SolverConfig cfg = SolverConfig::isotropic_3d();
    cfg.res = {32, 32, 32};
    FlowState s = init_random(cfg, 5);

    // Independent accounting: <f . u> via a weighted spectral dot product.
    auto f = forcing(s, cfg);
    std::size_t m = s.modes_per_component();
    int n = 32, h3 = n / 2 + 1;
    double total = double(n) * n * n, dot = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int i1 = 0; i1 < n; ++i1)
            for (int i2 = 0; i2 < n; ++i2)
                for (int i3 = 0; i3 < h3; ++i3) {
                    double w = (i3 == 0 || i3 == n / 2) ? 1.0 : 2.0;
                    std::size_t id = (std::size_t(i1) * n + i2) * h3 + i3;
                    dot += w * std::real(f[c * m + id] * std::conj(s.component(c)[id]));
                }
    dot /= total * total;
    CHECK(dot == doctest::Approx(2.0 * cfg.p_in).epsilon(1e-10));
    CHECK(injection_rate(s, cfg) == doctest::Approx(2.0 * cfg.p_in).epsilon(1e-10));

    // Draining the |k| <= 1 shell makes the forcing degenerate.
    for (int c = 0; c < 3; ++c) {
        auto* u = s.component(c);
        u[(std::size_t(1) * n + 0) * h3] = 0.0;
        u[(std::size_t(n - 1) * n + 0) * h3] = 0.0;
        u[(std::size_t(0) * n + 1) * h3] = 0.0;
        u[(std::size_t(0) * n + (n - 1)) * h3] = 0.0;
        u[1] = 0.0;  // (0, 0, 1)
    }
    CHECK_THROWS_AS((void)forcing(s, cfg), NumericError);
}

TEST_CASE("2D stripe forcing and damping produce the closed-form tendency and power") {
    const int n = 64;
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {n, n, 1};
    FlowState s = state_from_grid(grid2d(n, [](double x, double) {
        return std::cos(4.0 * x);
    }), FlowKind::Kolmogorov2D);

    auto f = forcing(s, cfg);
    int h2 = n / 2 + 1;
    double total = double(n) * n;
    // Forced modes: -damping * w_hat + (k/2) at (+-4, 0); elsewhere pure damping.
    auto at = [&](int i1, int i2) { return f[std::size_t(i1) * h2 + i2]; };
    CHECK(std::abs(at(4, 0) - (-cfg.damping * s.component(0)[std::size_t(4) * h2] +
                               0.5 * 4.0 * total)) < 1e-9 * total);
    CHECK(std::abs(at(1, 1) - (-cfg.damping * s.component(0)[std::size_t(1) * h2 + 1])) <
          1e-12 * total);

    // omega = cos(4x) gives u_y = sin(4x)/4, so <f_u . u> = 1/8 and
    // E = 1/64: injection = 1/8 - 2 * 0.1 / 64.
    CHECK(injection_rate(s, cfg) == doctest::Approx(0.125 - 0.2 / 64.0).epsilon(1e-12));
}

TEST_CASE("the CFL step size tracks grid spacing, speed, and the clamp window") {
    const int n = 128;
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {n, n, 1};
    FlowState s = state_from_grid(grid2d(n, [](double x, double) {
        return 2.0 * std::cos(x);  // velocity (0, 2 sin x): max speed 2
    }), FlowKind::Kolmogorov2D);

    double expected = 1.0 * (2.0 * kPi / n) / 2.0;
    CHECK(cfl_dt(s, cfg) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(expected == doctest::Approx(0.02454).epsilon(1e-3));

    cfg.c_max = 2.0;
    CHECK(cfl_dt(s, cfg) == doctest::Approx(2.0 * expected).epsilon(1e-9));
    cfg.c_max = 1e-9;
    CHECK(cfl_dt(s, cfg) == doctest::Approx(1e-6).epsilon(1e-12));  // floor
    cfg.c_max = 1e9;
    CHECK(cfl_dt(s, cfg) == doctest::Approx(cfg.dt_record).epsilon(1e-12));  // ceiling

    FlowState rest = state_from_grid(grid2d(n, [](double, double) { return 0.0; }),
                                     FlowKind::Kolmogorov2D);
    cfg.c_max = 1.0;
    CHECK(cfl_dt(rest, cfg) == doctest::Approx(cfg.dt_record).epsilon(1e-12));
}

TEST_CASE("trajectories record on the exact cadence and integrate the energy budget") {
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {64, 64, 1};
    cfg.c_max = 0.25;
    FlowState s = init_random(cfg, 11);

    Trajectory t = simulate(s, 2.0, cfg, {32, 32, 1});
    CHECK(t.snapshots.size() == 17);  // floor(2 / 0.125) + 1
    for (std::size_t j = 0; j < t.snapshots.size(); ++j) {
        CHECK(t.snapshots[j].time == doctest::Approx(j * 0.125).epsilon(1e-12));
        CHECK(t.snapshots[j].extent == std::array<int, 3>{32, 32, 1});
        CHECK(t.snapshots[j].channels == 1);
    }
    CHECK(s.time == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(trapezoid_balance_defect(t) <= 1e-3);

    // A horizon that is not a record multiple still advances fully.
    FlowState s2 = init_random(cfg, 12);
    Trajectory t2 = simulate(s2, 0.3, cfg, {32, 32, 1});
    CHECK(t2.snapshots.size() == 3);
    CHECK(s2.time == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("the 3D energy budget closes under forcing and dissipation") {
    SolverConfig cfg = SolverConfig::isotropic_3d();
    // The initial band reaches |k| = 16; on a 64-point grid its quadratic
    // products stay representable, so no aliased transfer pollutes the
    // viscous bookkeeping.
    cfg.res = {64, 64, 64};
    cfg.c_max = 0.3;
    FlowState s = init_random(cfg, 3);
    Trajectory t = simulate(s, 0.3, cfg, {32, 32, 32});
    CHECK(t.snapshots.size() == 4);
    CHECK(trapezoid_balance_defect(t) <= 1e-3);
    CHECK(max_divergence(s) < 1e-10);
}

TEST_CASE("snapshot downsampling equals pointwise sampling for band-limited states") {
    SolverConfig cfg = unforced_2d(64, 1e-3);
    FlowState s = init_random(cfg, 21);  // band |k| < 16 fits a 32-point grid
    GridField fine = state_to_grid(s, {64, 64, 1});
    GridField coarse = state_to_grid(s, {32, 32, 1});
    double scale = 0.0;
    for (double v : fine.data) scale = std::max(scale, std::abs(v));
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
            CHECK(std::abs(coarse.at({i, j, 0}, 0) - fine.at({2 * i, 2 * j, 0}, 0)) <
                  1e-12 * scale);

    // Upsampling is exact band-limited interpolation: stride-sampling the
    // refined grid recovers the native samples.
    GridField up = state_to_grid(s, {128, 128, 1});
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j)
            CHECK(std::abs(fine.at({i, j, 0}, 0) - up.at({2 * i, 2 * j, 0}, 0)) < 1e-12 * scale);

    SolverConfig cfg3 = SolverConfig::isotropic_3d();
    cfg3.res = {64, 64, 64};
    FlowState s3 = init_random(cfg3, 22);
    GridField fine3 = state_to_grid(s3, {64, 64, 64});
    GridField coarse3 = state_to_grid(s3, {32, 32, 32});
    double worst = 0.0;
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
            for (int k = 0; k < 32; ++k)
                for (int c = 0; c < 3; ++c)
                    worst = std::max(worst, std::abs(coarse3.at({i, j, k}, c) -
                                                     fine3.at({2 * i, 2 * j, 2 * k}, c)));
    CHECK(worst < 1e-12);
}

TEST_CASE("spectral states survive the grid round trip") {
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {64, 64, 1};
    FlowState s = init_random(cfg, 31);
    for (int i = 0; i < 3; ++i) step(s, 0.01, cfg);
    GridField g = state_to_grid(s, {64, 64, 1});
    FlowState back = state_from_grid(g, FlowKind::Kolmogorov2D);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.spec.size(); ++i) {
        num += std::norm(back.spec[i] - s.spec[i]);
        den += std::norm(s.spec[i]);
    }
    CHECK(std::sqrt(num / den) < 1e-12);
}

TEST_CASE("a wildly oversized step trips the blow-up guard") {
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {64, 64, 1};
    FlowState s = init_random(cfg, 9);
    auto run = [&] {
        for (int i = 0; i < 5; ++i) step(s, 5.0, cfg);
    };
    CHECK_THROWS_AS(run(), NumericError);
}

TEST_CASE("refining the grid monotonically improves the solution") {
    const double dt = 2e-3, T = 0.5;
    auto advance = [&](int n) {
        SolverConfig cfg = unforced_2d(n, 1e-2);
        FlowState s = state_from_grid(grid2d(n, [](double x, double y) {
            return sample_vorticity(x, y);
        }), FlowKind::Kolmogorov2D);
        int steps = static_cast<int>(std::lround(T / dt));
        for (int i = 0; i < steps; ++i) step(s, dt, cfg);
        return state_to_grid(s, {32, 32, 1});
    };
    GridField ref = advance(256);
    double e32 = rel_l2(advance(32), ref);
    double e64 = rel_l2(advance(64), ref);
    double e128 = rel_l2(advance(128), ref);
    CHECK(e64 < e32);
    CHECK(e128 < e64);
    CHECK(e128 < 1e-4);
}

TEST_CASE("the differentiable stepper reproduces the production dynamics") {
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {32, 32, 1};
    FlowState s = init_random(cfg, 17);
    GridField g0 = state_to_grid(s, {32, 32, 1});

    FlowState fast = s;
    const double dt = 0.01;
    step(fast, dt, cfg);
    GridField g_fast = state_to_grid(fast, {32, 32, 1});

    TapedSolver2D taped(cfg);
    Tape tape(Dtype::F64);
    std::vector<double> w0(g0.data);
    Tensor w = tape.leaf(TensorData::from(Dtype::F64, {32, 32}, w0));
    Tensor out = taped.physical(taped.step(taped.spectrum(w), dt));
    const auto& v = tape.val(out);
    GridField g_taped = g0;
    for (std::size_t i = 0; i < g_taped.data.size(); ++i) g_taped.data[i] = v.f64[i];
    CHECK(rel_l2(g_taped, g_fast) < 1e-12);
}

TEST_CASE("gradients flow correctly through the differentiable stepper") {
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.res = {16, 16, 1};
    TapedSolver2D taped(cfg);
    GridField g = grid2d(16, [](double x, double y) {
        return std::sin(x) + std::cos(y) + 0.5 * std::sin(2 * x + y);
    });

    auto build = [&](Tape&, const std::vector<Tensor>& in) {
        Tensor out = taped.physical(taped.step(taped.spectrum(in[0]), 0.02));
        return ops::sum_all(ops::mul(out, out));
    };
    GradCheckReport rep = gradcheck(build, {TensorData::from(Dtype::F64, {16, 16}, g.data)},
                                    /*probes_per_input=*/12, /*eps=*/1e-5);
    CHECK(rep.max_rel_err < 1e-6);
}
