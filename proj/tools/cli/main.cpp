// Command-line front end: dataset generation, training, evaluation,
// free-running rollouts, snapshot diagnostics, domain expansion, and an
// in-process invariant selftest.  Exit codes: 0 success, 1 validation
// error, 2 numerical failure.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semflow/basis/quadrature.hpp"
#include "semflow/basis/transforms.hpp"
#include "semflow/core/error.hpp"
#include "semflow/core/rng.hpp"
#include "semflow/diagnostics/diagnostics.hpp"
#include "semflow/model/model.hpp"
#include "semflow/solver/solver.hpp"
#include "semflow/tensor/gradcheck.hpp"
#include "semflow/train/train.hpp"
#include "settings.hpp"

namespace fs = std::filesystem;
using namespace semflow;

namespace {

std::string g_cmdline;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Remaining tokens of a subcommand, interpreted as --key value / --key=value
/// overrides onto the settings registry.
std::vector<cli::Override> parse_extras(const std::vector<std::string>& extras) {
    std::vector<cli::Override> out;
    std::size_t i = 0;
    while (i < extras.size()) {
        std::string tok = extras[i];
        ensure(tok.rfind("--", 0) == 0 && tok.size() > 2,
               "unexpected argument '" + tok + "' (overrides are --key value)");
        tok = tok.substr(2);
        const auto eq = tok.find('=');
        if (eq != std::string::npos) {
            const std::string key = tok.substr(0, eq);
            out.push_back({key, tok.substr(eq + 1), "flag --" + key});
            ++i;
        } else {
            ensure(i + 1 < extras.size(), "flag --" + tok + " needs a value");
            out.push_back({tok, extras[i + 1], "flag --" + tok});
            i += 2;
        }
    }
    return out;
}

/// Reproducibility record: tool version, exact command line, thread setting,
/// and every effective key under the output directory.
void write_effective(const std::string& out_dir, const cli::Settings& s) {
    fs::create_directories(out_dir);
    const std::string path = out_dir + "/effective_config.txt";
    std::ofstream f(path);
    ensure(static_cast<bool>(f), "cannot open for writing: " + path);
    f << "# " << cli::kVersion << "\n";
    f << "# command: " << g_cmdline << "\n";
    const char* thr = std::getenv("SEMFLOW_THREADS");
    if (thr)
        f << "# threads: " << thr
          << " (SEMFLOW_THREADS; compute kernels run on one thread, the"
             " setting is recorded for provenance)\n";
    else
        f << "# threads: 1 (SEMFLOW_THREADS unset)\n";
    f << cli::render_settings(s);
    ensure(static_cast<bool>(f), "failed writing " + path);
}

/// Velocity view of a snapshot: velocity fields (channels == dim) pass
/// through; 2D single-channel fields are treated as vorticity and inverted
/// spectrally.  Enstrophy is only defined on the vorticity path.
struct VelocityView {
    GridField v;
    bool has_enstrophy = false;
    double enstrophy_value = 0.0;
    FlowKind kind = FlowKind::Kolmogorov2D;
};

VelocityView as_velocity(const GridField& g) {
    VelocityView out;
    if (g.channels == g.dim) {
        out.v = g;
        out.kind = g.dim == 2 ? FlowKind::Kolmogorov2D : FlowKind::Isotropic3D;
    } else if (g.dim == 2 && g.channels == 1) {
        FlowState s = state_from_grid(g, FlowKind::Kolmogorov2D);
        out.v = velocity_grid(s);
        out.has_enstrophy = true;
        out.enstrophy_value = enstrophy(s);
        out.kind = FlowKind::Kolmogorov2D;
    } else {
        throw ValidationError(
            "cannot interpret a " + std::to_string(g.dim) + "D snapshot with " +
            std::to_string(g.channels) +
            " channels as a flow state (expected dim channels of velocity, or one"
            " 2D vorticity channel)");
    }
    return out;
}

double grid_energy(const GridField& g, FlowKind kind) {
    return kinetic_energy(state_from_grid(g, kind));
}

/// Axis-aligned power-of-two separations up to half the smallest used axis.
std::vector<int> default_lags(const GridField& g) {
    int n = g.extent[0];
    for (int a = 1; a < g.dim; ++a) n = std::min(n, g.extent[a]);
    std::vector<int> lags;
    for (int r = 1; r <= n / 2; r *= 2) lags.push_back(r);
    return lags;
}

/// Periodic tiling of a 2D snapshot, factor x factor copies.
GridField tile_grid(const GridField& g, int factor) {
    ensure(g.dim == 2, "tiling is implemented for 2D snapshots");
    GridField out = make_grid_field(
        2, {g.extent[0] * factor, g.extent[1] * factor, 1},
        {g.length[0] * factor, g.length[1] * factor, 1.0}, g.channels);
    out.time = g.time;
    for (int i0 = 0; i0 < out.extent[0]; ++i0)
        for (int i1 = 0; i1 < out.extent[1]; ++i1)
            for (int c = 0; c < g.channels; ++c)
                out.at({i0, i1, 0}, c) =
                    g.at({i0 % g.extent[0], i1 % g.extent[1], 0}, c);
    return out;
}

double max_abs(const GridField& g) {
    double m = 0.0;
    for (double v : g.data) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const GridField& a, const GridField& b) {
    ensure(a.data.size() == b.data.size(), "field size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Flags shared across subcommands
// ---------------------------------------------------------------------------

struct Flags {
    std::string config;
    std::string out;
    std::string checkpoint;
    std::string manifest;
    std::string test_manifest;
    std::string resume;
    std::string input;
    int steps = 0;       // rollout/expand horizon; 0 = command default
    int trajectory = 0;  // which test trajectory provides the initial state
    int substeps = 5;    // coarse Strang substeps per recorded interval
    int factor = 2;      // expansion factor per axis
};

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

void run_gen(const Flags& a, const std::vector<cli::Override>& extras) {
    cli::Settings s = cli::load_settings(a.config, extras);
    GenSpec spec = s.gen;
    spec.solver = s.solver;
    spec.out_dir = a.out;
    spec.validate();
    write_effective(a.out, s);

    const auto [train_m, test_m] = generate_dataset(spec);
    auto count = [](const DatasetManifest& m) {
        std::size_t n = 0;
        for (const auto& t : m.trajectories) n += t.size();
        return n;
    };
    std::cout << "generated " << train_m.trajectories.size() << " train trajectories ("
              << count(train_m) << " snapshots) and " << test_m.trajectories.size()
              << " test trajectories (" << count(test_m) << " snapshots) in " << a.out
              << "\n";
    if (!train_m.trajectories.empty())
        std::cout << "train manifest: " << a.out << "/train_manifest.txt\n";
    if (!test_m.trajectories.empty())
        std::cout << "test manifest: " << a.out << "/test_manifest.txt\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void run_train(const Flags& a, const std::vector<cli::Override>& extras) {
    cli::Settings s = cli::load_settings(a.config, extras);
    TrainConfig tc = s.train;
    tc.model = s.model;
    tc.model.correction_input = tc.mode == TrainMode::Correction;
    if (!a.manifest.empty()) tc.train_manifest = a.manifest;
    if (!a.test_manifest.empty()) tc.test_manifest = a.test_manifest;
    if (!a.resume.empty()) tc.resume_from = a.resume;
    tc.out_dir = a.out;
    ensure(!tc.train_manifest.empty(),
           "train needs a manifest (--manifest or train.manifest)");
    write_effective(a.out, s);

    const TrainResult r = train(tc);
    std::cout << "trained " << r.loss_log.size() << " optimizer steps\n";
    if (!r.loss_log.empty()) {
        const std::size_t w = std::min<std::size_t>(100, r.loss_log.size());
        double tail = 0.0;
        for (std::size_t i = r.loss_log.size() - w; i < r.loss_log.size(); ++i)
            tail += r.loss_log[i];
        std::cout << "final loss " << fmt6(r.loss_log.back()) << " (mean of last " << w
                  << ": " << fmt6(tail / static_cast<double>(w)) << ")\n";
    }
    if (!r.eval_loss.empty())
        std::cout << "held-out loss " << fmt6(r.eval_loss.back()) << " at step "
                  << r.eval_steps.back() << "\n";
    if (!r.checkpoint_path.empty())
        std::cout << "checkpoint: " << r.checkpoint_path << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

void run_eval(const Flags& a, const std::vector<cli::Override>& extras) {
    cli::Settings s = cli::load_settings(a.config, extras);
    write_effective(a.out, s);
    const Checkpoint ck = read_checkpoint(a.checkpoint);

    const OneStepEval os = evaluate_one_step(ck, a.manifest, a.substeps);
    std::cout << "one-step over " << os.pairs << " pairs: model " << fmt6(os.model_err)
              << ", coarse " << fmt6(os.coarse_err);
    if (os.coarse_err > 0.0)
        std::cout << " (" << fmt6(100.0 * (1.0 - os.model_err / os.coarse_err))
                  << "% reduction)";
    std::cout << "\n";

    const EvalSeries es = evaluate(ck, a.manifest, a.out, a.substeps);
    std::cout << "rollout over " << es.trajectories << " trajectories, "
              << es.times.size() << " recorded times\n";
    if (!es.hybrid.empty()) {
        const auto& h = es.hybrid.back();
        const auto& c = es.coarse.back();
        std::cout << "final-time rel_l2: hybrid " << fmt6(h.rel_l2) << ", coarse "
                  << fmt6(c.rel_l2) << "\n";
        std::cout << "final-time correlation: hybrid " << fmt6(h.correlation)
                  << ", coarse " << fmt6(c.correlation) << "\n";
    }
    std::cout << "wrote metrics/energy/spectrum/structure CSVs to " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

void run_rollout(const Flags& a, const std::vector<cli::Override>& extras) {
    cli::Settings s = cli::load_settings(a.config, extras);
    write_effective(a.out, s);

    const Checkpoint ck = read_checkpoint(a.checkpoint);
    const Dataset ds = load_dataset(a.manifest);
    ensure(a.trajectory >= 0 &&
               a.trajectory < static_cast<int>(ds.states.size()),
           "trajectory index " + std::to_string(a.trajectory) + " out of range (" +
               std::to_string(ds.states.size()) + " trajectories)");
    const auto& ref = ds.states[a.trajectory];
    ensure(!ref.empty(), "the selected trajectory has no snapshots");
    const GridField& u0 = ref.front();
    ensure(u0.channels == ck.model.in_channels,
           "snapshot channels do not match the checkpoint's input channels");
    ensure(a.substeps >= 1, "substeps must be >= 1");

    SolverConfig coarse = manifest_solver(ds.manifest, u0.extent);
    coarse.length = u0.length;
    const double dt = ds.manifest.dt;
    const int n_steps = a.steps > 0 ? a.steps : static_cast<int>(ref.size()) - 1;
    ensure(n_steps >= 1, "rollout horizon must be at least one step");

    const ModelRuntime rt(ck.model);
    const bool correction = ck.mode == TrainMode::Correction;

    auto snap_path = [&](int j) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "rollout_%04d.snap", j);
        return a.out + "/" + buf;
    };

    GridField hybrid = u0;
    write_snapshot(snap_path(0), hybrid);
    std::vector<double> times;
    std::vector<ErrorMetrics> rows;
    std::vector<double> e_hyb{grid_energy(hybrid, coarse.kind)};
    std::vector<double> e_ref{e_hyb.front()};

    for (int n = 1; n <= n_steps; ++n) {
        GridField star = coarse_advance(hybrid, coarse, a.substeps, dt);
        GridField pred = correction ? rt.predict(ck.params, hybrid, &star)
                                    : rt.predict(ck.params, hybrid, nullptr);
        pred.time = star.time;
        hybrid = std::move(pred);
        write_snapshot(snap_path(n), hybrid);
        e_hyb.push_back(grid_energy(hybrid, coarse.kind));
        if (n < static_cast<int>(ref.size())) {
            times.push_back(hybrid.time - u0.time);
            rows.push_back(error_metrics(ref[n], hybrid));
            e_ref.push_back(grid_energy(ref[n], coarse.kind));
        } else {
            e_ref.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }

    write_metrics_csv(a.out + "/metrics.csv", times, rows);
    {
        const std::string path = a.out + "/energy.csv";
        std::ofstream f(path);
        ensure(static_cast<bool>(f), "cannot open for writing: " + path);
        f << "time,e_hybrid,e_reference\n";
        for (std::size_t j = 0; j < e_hyb.size(); ++j)
            f << fmt(u0.time + static_cast<double>(j) * dt - u0.time) << ","
              << fmt(e_hyb[j]) << "," << fmt(e_ref[j]) << "\n";
    }
    write_spectrum_csv(a.out + "/spectrum_final.csv",
                       energy_spectrum(as_velocity(hybrid).v));

    std::cout << "rolled out " << n_steps << " steps of dt " << fmt6(dt) << " ("
              << (correction ? "hybrid correction" : "direct") << ")\n";
    if (!rows.empty())
        std::cout << "last overlapping step vs reference: rel_l2 "
                  << fmt6(rows.back().rel_l2) << ", correlation "
                  << fmt6(rows.back().correlation) << "\n";
    std::cout << "final kinetic energy " << fmt6(e_hyb.back()) << "\n";
    std::cout << "snapshots and CSVs in " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

void run_stats(const Flags& a, const std::vector<cli::Override>& extras) {
    cli::Settings s = cli::load_settings(a.config, extras);
    write_effective(a.out, s);

    const GridField g = read_snapshot(a.input);
    const VelocityView vv = as_velocity(g);

    const SpectrumReport spec = energy_spectrum(vv.v);
    write_spectrum_csv(a.out + "/spectrum.csv", spec);
    const S3Report s3 = structure_function_s3(vv.v, default_lags(vv.v));
    write_structure_csv(a.out + "/structure.csv", s3);
    const FlowStats st = flow_stats(vv.v, s.solver.nu);

    std::ostringstream rep;
    rep << "snapshot " << a.input << "\n";
    rep << "time " << fmt(g.time) << ", extent " << g.extent[0] << "x" << g.extent[1]
        << "x" << g.extent[2] << ", channels " << g.channels << "\n";
    rep << "nu " << fmt(s.solver.nu) << "\n";
    rep << "total_energy " << fmt(spec.total_energy) << "\n";
    rep << "spectrum_slope " << fmt(spec.slope) << "\n";
    if (vv.has_enstrophy) rep << "enstrophy " << fmt(vv.enstrophy_value) << "\n";
    rep << "e_k " << fmt(st.e_k) << "\n";
    rep << "dissipation " << fmt(st.dissipation) << "\n";
    rep << "u_rms " << fmt(st.u_rms) << "\n";
    rep << "taylor_lambda " << fmt(st.taylor_lambda) << "\n";
    rep << "kolmogorov_eta " << fmt(st.kolmogorov_eta) << "\n";
    rep << "re_lambda " << fmt(st.re_lambda) << "\n";

    const std::string path = a.out + "/stats.txt";
    std::ofstream f(path);
    ensure(static_cast<bool>(f), "cannot open for writing: " + path);
    f << rep.str();
    std::cout << rep.str();
    std::cout << "wrote spectrum.csv, structure.csv, stats.txt to " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// expand
// ---------------------------------------------------------------------------

void run_expand(const Flags& a, const std::vector<cli::Override>& extras) {
    cli::Settings s = cli::load_settings(a.config, extras);
    write_effective(a.out, s);

    const Checkpoint ck = read_checkpoint(a.checkpoint);
    ensure(ck.model.dim == 2, "domain expansion is implemented for 2D models");
    ensure(a.factor >= 2 && a.factor <= 8, "expansion factor must be in [2, 8]");
    ensure(ck.model.elems[0] == ck.model.elems[1],
           "expansion requires equal element counts per axis");

    const Dataset ds = load_dataset(a.manifest);
    ensure(a.trajectory >= 0 &&
               a.trajectory < static_cast<int>(ds.states.size()),
           "trajectory index " + std::to_string(a.trajectory) + " out of range (" +
               std::to_string(ds.states.size()) + " trajectories)");
    const auto& ref = ds.states[a.trajectory];
    ensure(!ref.empty(), "the selected trajectory has no snapshots");
    const GridField u0 = ref.front();
    ensure(u0.dim == 2, "domain expansion needs 2D snapshots");
    ensure(u0.channels == ck.model.in_channels,
           "snapshot channels do not match the checkpoint's input channels");
    ensure(a.substeps >= 1, "substeps must be >= 1");

    const int rho = a.factor;
    const int n_steps = a.steps > 0 ? a.steps : 8;
    const double dt = ds.manifest.dt;

    SolverConfig cfg1 = manifest_solver(ds.manifest, u0.extent);
    cfg1.length = u0.length;
    SolverConfig cfgB = cfg1;
    cfgB.res = {u0.extent[0] * rho, u0.extent[1] * rho, 1};
    cfgB.length = {u0.length[0] * rho, u0.length[1] * rho, 1.0};

    // Same weights on a tiled mesh; the attention window stays the size of
    // the training domain so each element sees exactly the neighborhood it
    // was trained with.
    ModelConfig big = ck.model;
    big.elems = {ck.model.elems[0] * rho, ck.model.elems[1] * rho, 1};
    big.length = {ck.model.length[0] * rho, ck.model.length[1] * rho,
                  ck.model.length[2]};
    big.attn_window =
        ck.model.attn_window > 0 ? ck.model.attn_window : ck.model.elems[0];
    big.validate();

    const ModelRuntime rt1(ck.model);
    const ModelRuntime rtB(big);
    const bool correction = ck.mode == TrainMode::Correction;

    GridField h1 = u0;
    GridField hB = tile_grid(u0, rho);
    double t_small = 0.0, t_big = 0.0;
    std::vector<double> defects;
    using clock = std::chrono::steady_clock;

    for (int n = 1; n <= n_steps; ++n) {
        GridField p1, pB;
        if (correction) {
            GridField star1 = coarse_advance(h1, cfg1, a.substeps, dt);
            auto c0 = clock::now();
            p1 = rt1.predict(ck.params, h1, &star1);
            t_small += std::chrono::duration<double>(clock::now() - c0).count();
            p1.time = star1.time;

            GridField starB = coarse_advance(hB, cfgB, a.substeps, dt);
            c0 = clock::now();
            pB = rtB.predict(ck.params, hB, &starB);
            t_big += std::chrono::duration<double>(clock::now() - c0).count();
            pB.time = starB.time;
        } else {
            auto c0 = clock::now();
            p1 = rt1.predict(ck.params, h1, nullptr);
            t_small += std::chrono::duration<double>(clock::now() - c0).count();
            p1.time = h1.time + dt;
            c0 = clock::now();
            pB = rtB.predict(ck.params, hB, nullptr);
            t_big += std::chrono::duration<double>(clock::now() - c0).count();
            pB.time = hB.time + dt;
        }
        const double scale = std::max(max_abs(p1), 1e-300);
        defects.push_back(max_abs_diff(pB, tile_grid(p1, rho)) / scale);
        h1 = std::move(p1);
        hB = std::move(pB);
    }

    {
        const std::string path = a.out + "/expand_defect.csv";
        std::ofstream f(path);
        ensure(static_cast<bool>(f), "cannot open for writing: " + path);
        f << "step,defect\n";
        for (std::size_t j = 0; j < defects.size(); ++j)
            f << (j + 1) << "," << fmt(defects[j]) << "\n";
    }
    write_spectrum_csv(a.out + "/spectrum_small.csv", energy_spectrum(as_velocity(h1).v));
    {
        const SpectrumReport sp = energy_spectrum(as_velocity(hB).v);
        const std::string path = a.out + "/spectrum_big.csv";
        std::ofstream f(path);
        ensure(static_cast<bool>(f), "cannot open for writing: " + path);
        f << "k,k_scaled,e\n";
        for (std::size_t j = 0; j < sp.k.size(); ++j)
            f << sp.k[j] << "," << fmt(static_cast<double>(sp.k[j]) / rho) << ","
              << fmt(sp.e[j]) << "\n";
    }
    write_snapshot(a.out + "/expand_small.snap", h1);
    write_snapshot(a.out + "/expand_big.snap", hB);

    double max_defect = 0.0;
    for (double d : defects) max_defect = std::max(max_defect, d);
    const double token_ratio = static_cast<double>(rho) * rho;
    const double per_small = t_small / n_steps;
    const double per_big = t_big / n_steps;
    std::cout << "expanded " << rho << "x per axis, " << n_steps << " steps of dt "
              << fmt6(dt) << "\n";
    std::cout << "max tiling defect " << fmt6(max_defect) << "\n";
    std::cout << "model time per step: " << fmt6(per_small) << " s at 1x, "
              << fmt6(per_big) << " s at " << rho << "x (ratio "
              << fmt6(per_big / std::max(per_small, 1e-12)) << ", tokens x"
              << fmt6(token_ratio) << ", linear budget x" << fmt6(1.5 * token_ratio)
              << ")\n";
    {
        const std::string path = a.out + "/expand_timing.txt";
        std::ofstream f(path);
        ensure(static_cast<bool>(f), "cannot open for writing: " + path);
        f << "factor " << rho << "\n";
        f << "steps " << n_steps << "\n";
        f << "seconds_per_predict_small " << fmt(per_small) << "\n";
        f << "seconds_per_predict_big " << fmt(per_big) << "\n";
        f << "ratio " << fmt(per_big / std::max(per_small, 1e-12)) << "\n";
        f << "token_ratio " << fmt(token_ratio) << "\n";
        f << "max_defect " << fmt(max_defect) << "\n";
    }
    std::cout << "snapshots, spectra, defect and timing CSVs in " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// selftest suites
// ---------------------------------------------------------------------------

GridField synth2(int n, double L, int channels, std::uint64_t seed) {
    GridField g = make_grid_field(2, {n, n, 1}, {L, L, 1.0}, channels);
    Rng rng(seed);
    struct Mode {
        int k1, k2;
        double amp, phase;
    };
    std::vector<std::vector<Mode>> modes(channels);
    for (auto& ch : modes)
        for (int m = 0; m < 6; ++m)
            ch.push_back({static_cast<int>(rng.below(7)) - 3,
                          static_cast<int>(rng.below(7)) - 3, rng.uniform(-1.0, 1.0),
                          rng.uniform(0.0, 2.0 * std::numbers::pi)});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int c = 0; c < channels; ++c) {
                double v = 0.0;
                for (const Mode& m : modes[c])
                    v += m.amp * std::cos(2.0 * std::numbers::pi *
                                              (m.k1 * static_cast<double>(i) / n +
                                               m.k2 * static_cast<double>(j) / n) +
                                          m.phase);
                g.at({i, j, 0}, c) = v;
            }
    return g;
}

ModelConfig selftest_model() {
    ModelConfig cfg;
    cfg.dim = 2;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.elems = {4, 4, 1};
    cfg.sgs_modes = 4;
    cfg.les_modes = 3;
    cfg.basis = BasisKind::Chebyshev;
    cfg.length = {2.0 * std::numbers::pi, 2.0 * std::numbers::pi, 1.0};
    cfg.kernel_modes_sgs = 2;
    cfg.kernel_modes_les = 2;
    cfg.window = 0.8 * (2.0 * std::numbers::pi / 4.0);
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.attn_window = 0;
    cfg.alpha = 1e-2;
    cfg.streams = StreamMode::Full;
    cfg.in_channels = 1;
    cfg.correction_input = true;
    cfg.validate();
    return cfg;
}

ModelParams scaled_random_params(const ModelConfig& cfg, std::uint64_t seed,
                                 double scale) {
    ModelParams p = init_params(cfg, seed);
    Rng rng(seed * 7919 + 1);
    for (auto& [name, td] : p.entries) {
        const bool unit = name.find("ln_gain") != std::string::npos ||
                          name.find("inject") != std::string::npos;
        for (auto& v : td.f64) v = unit ? 1.0 + 0.1 * rng.normal() : scale * rng.normal();
    }
    return p;
}

GridField shifted(const GridField& g, int s0, int s1) {
    GridField out = g;
    for (int i0 = 0; i0 < g.extent[0]; ++i0)
        for (int i1 = 0; i1 < g.extent[1]; ++i1)
            for (int c = 0; c < g.channels; ++c)
                out.at({i0, i1, 0}, c) =
                    g.at({(i0 + s0) % g.extent[0], (i1 + s1) % g.extent[1], 0}, c);
    return out;
}

void st_quadrature() {
    for (BasisKind kind : {BasisKind::Chebyshev, BasisKind::Legendre}) {
        for (int M = 3; M <= 16; ++M) {
            const QuadratureRule rule = quadrature_rule(kind, M);
            const int exact = kind == BasisKind::Chebyshev ? M - 1 : 2 * M - 3;
            for (int d = 0; d <= exact; ++d) {
                double q = 0.0;
                for (int i = 0; i < rule.size(); ++i)
                    q += rule.weights[i] * std::pow(rule.nodes[i], d);
                const double want = 1.0 / (d + 1);
                ensure(std::abs(q - want) <= 1e-12,
                       "quadrature is not exact at M=" + std::to_string(M) +
                           ", degree " + std::to_string(d));
            }
        }
    }
}

void st_basis() {
    // Change of basis is an identity on nodal data.
    auto mesh = make_sem_mesh(2, BasisKind::Chebyshev, {3, 3, 1}, 8,
                              {2.0 * std::numbers::pi, 2.0 * std::numbers::pi, 1.0});
    SemField f = make_sem_field(mesh, 2);
    Rng rng(11);
    for (auto& v : f.data) v = rng.uniform(-1.0, 1.0);
    const SemField back = modal_to_nodal(nodal_to_modal(f));
    double err = 0.0;
    for (std::size_t i = 0; i < f.data.size(); ++i)
        err = std::max(err, std::abs(f.data[i] - back.data[i]));
    ensure(err <= 1e-12, "nodal<->modal round trip drifted by " + fmt6(err));

    // Band-limited fields survive grid -> elements -> grid.
    auto fine = make_sem_mesh(2, BasisKind::Chebyshev, {8, 8, 1}, 12,
                              {2.0 * std::numbers::pi, 2.0 * std::numbers::pi, 1.0});
    GridField g = make_grid_field(2, {32, 32, 1},
                                  {2.0 * std::numbers::pi, 2.0 * std::numbers::pi, 1.0},
                                  1);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
            const double x = g.coord(0, i), y = g.coord(1, j);
            g.at({i, j, 0}, 0) =
                std::sin(x) * std::cos(2.0 * y) + 0.5 * std::cos(2.0 * x - y);
        }
    const GridField g2 = sem_to_grid(grid_to_sem(g, fine), {32, 32, 1});
    double gerr = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        gerr = std::max(gerr, std::abs(g.data[i] - g2.data[i]));
    ensure(gerr <= 1e-8, "band-limited grid round trip drifted by " + fmt6(gerr));
}

void st_solver() {
    // A single-shell vortex decays at exactly exp(-2 nu t).
    const int n = 64;
    const double nu = 1e-2, dt = 1e-3, T = 0.25;
    GridField w0 = make_grid_field(2, {n, n, 1},
                                   {2.0 * std::numbers::pi, 2.0 * std::numbers::pi, 1.0},
                                   1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            w0.at({i, j, 0}, 0) = 2.0 * std::sin(w0.coord(0, i)) * std::sin(w0.coord(1, j));
    SolverConfig cfg = SolverConfig::kolmogorov_2d();
    cfg.nu = nu;
    cfg.forcing_k = 0;
    cfg.damping = 0.0;
    FlowState s = state_from_grid(w0, FlowKind::Kolmogorov2D);
    const int steps = static_cast<int>(std::llround(T / dt));
    for (int k = 0; k < steps; ++k) step(s, dt, cfg);
    const GridField w1 = state_to_grid(s, {n, n, 1});
    const double decay = std::exp(-2.0 * nu * T);
    double err = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            err = std::max(err, std::abs(w1.at({i, j, 0}, 0) -
                                         decay * w0.at({i, j, 0}, 0)));
    ensure(err <= 1e-6, "vortex decay error " + fmt6(err) + " exceeds 1e-6");

    // 3D stepping keeps the velocity solenoidal to solver precision.
    SolverConfig cfg3 = SolverConfig::isotropic_3d();
    cfg3.res = {32, 32, 32};
    FlowState s3 = init_random(cfg3, 1);
    for (int k = 0; k < 3; ++k) {
        step(s3, cfl_dt(s3, cfg3), cfg3);
        const double div = max_divergence(s3);
        ensure(div <= 1e-10, "3D divergence " + fmt6(div) + " exceeds 1e-10");
    }
}

void st_model() {
    const ModelConfig cfg = selftest_model();
    const ModelRuntime rt(cfg);
    const GridField u = synth2(24, cfg.length[0], 1, 21);
    const GridField star = synth2(24, cfg.length[0], 1, 22);

    // Zeroed weights collapse the hybrid onto the coarse prediction.
    ModelParams zeros = init_params(cfg, 0);
    for (auto& [name, td] : zeros.entries)
        for (auto& v : td.f64) v = 0.0;
    const GridField p0 = rt.predict(zeros, u, &star);
    ensure(max_abs_diff(p0, star) <= 1e-14,
           "zero-weight correction does not reduce to the coarse prediction");

    // Fresh initialization perturbs the coarse prediction by at most ~alpha.
    const ModelParams fresh = init_params(cfg, 7);
    const GridField pf = rt.predict(fresh, u, &star);
    ensure(max_abs_diff(pf, star) <= 10.0 * cfg.alpha,
           "freshly initialized correction is larger than its scale");

    // Shifting the inputs by one element shifts the output.
    const ModelParams params = scaled_random_params(cfg, 3, 0.05);
    const int sh = 24 / cfg.elems[0];
    const GridField base = rt.predict(params, u, &star);
    const GridField u_sh = shifted(u, sh, sh);
    const GridField star_sh = shifted(star, sh, sh);
    const GridField moved = rt.predict(params, u_sh, &star_sh);
    const double err = max_abs_diff(moved, shifted(base, sh, sh));
    ensure(err <= 1e-8, "cyclic-shift equivariance drifted by " + fmt6(err));
}

void st_gradients() {
    const ModelConfig cfg = selftest_model();
    const ModelRuntime rt(cfg);
    const GridField u = synth2(12, cfg.length[0], 1, 31);
    const GridField target = synth2(12, cfg.length[0], 1, 32);
    const GridField star = synth2(12, cfg.length[0], 1, 33);
    PairBatch batch;
    batch.u_t.push_back(&u);
    batch.u_next.push_back(&target);
    batch.u_star.push_back(&star);

    const ModelParams params = scaled_random_params(cfg, 5, 0.3);
    std::vector<TensorData> inputs;
    for (const auto& [name, td] : params.entries) inputs.push_back(td);
    auto build = [&](Tape& tape, const std::vector<Tensor>& leaves) {
        BoundParams bound;
        bound.leaves = leaves;
        return loss_one_step(tape, rt, bound, batch);
    };
    const GradCheckReport rep = gradcheck(build, inputs, 2, 1e-5, 99);
    ensure(rep.max_rel_err < 1e-4,
           "one-step loss gradient check failed at " + fmt6(rep.max_rel_err));
}

void st_diagnostics() {
    // Shell energies add up to the quadratic mean (Parseval).
    const GridField v = synth2(32, 2.0 * std::numbers::pi, 2, 41);
    const SpectrumReport sp = energy_spectrum(v);
    double ms = 0.0;
    for (double x : v.data) ms += x * x;
    ms /= static_cast<double>(v.points());
    ensure(std::abs(sp.total_energy - 0.5 * ms) <= 1e-10 * std::max(1.0, 0.5 * ms),
           "spectrum energies do not add up to the field energy");

    // Velocity-gradient invariant on hand Jacobians.
    const double rot[4] = {0.0, -1.0, 1.0, 0.0};
    const double shear[4] = {0.0, 1.0, 0.0, 0.0};
    ensure(std::abs(q_from_gradient(std::span<const double>(rot, 4), 2) - 1.0) <= 1e-12,
           "rigid rotation should score q = 1");
    ensure(std::abs(q_from_gradient(std::span<const double>(shear, 4), 2)) <= 1e-12,
           "pure shear should score q = 0");

    // Structure function: zero on constants, odd under sign flips.
    GridField c = make_grid_field(2, {16, 16, 1},
                                  {2.0 * std::numbers::pi, 2.0 * std::numbers::pi, 1.0},
                                  2);
    for (auto& x : c.data) x = 0.7;
    for (double s3v : structure_function_s3(c, {1, 2, 4}).s3)
        ensure(std::abs(s3v) <= 1e-14, "constant fields must have zero s3");
    const GridField r = synth2(16, 2.0 * std::numbers::pi, 2, 42);
    GridField rn = r;
    for (auto& x : rn.data) x = -x;
    const S3Report sp_p = structure_function_s3(r, {1, 2, 4});
    const S3Report sp_n = structure_function_s3(rn, {1, 2, 4});
    for (std::size_t i = 0; i < sp_p.s3.size(); ++i)
        ensure(std::abs(sp_p.s3[i] + sp_n.s3[i]) <=
                   1e-12 * std::max(1.0, std::abs(sp_p.s3[i])),
               "s3 must be odd under sign flips");

    // Comparing a field with itself is exact.
    const ErrorMetrics em = error_metrics(r, r);
    ensure(em.rel_l2 <= 1e-12 && std::abs(em.correlation - 1.0) <= 1e-12 &&
               em.vrmse <= 1e-12,
           "self-comparison metrics are off identity");
}

void st_files() {
    const fs::path dir = fs::temp_directory_path() / "semflow_selftest";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // Snapshots round trip bit for bit in double precision.
    GridField g = synth2(12, 2.0 * std::numbers::pi, 2, 51);
    g.time = 1.625;
    const std::string snap = (dir / "probe.snap").string();
    write_snapshot(snap, g);
    const GridField g2 = read_snapshot(snap);
    ensure(g2.extent == g.extent && g2.length == g.length && g2.time == g.time &&
               g2.channels == g.channels && g2.data == g.data,
           "snapshot round trip is not bit-exact");

    // Manifests round trip field for field.
    DatasetManifest m;
    m.nu = 1e-3;
    m.forcing = "kolmogorov2d:4:0.1";
    m.resolution = {48, 48, 1};
    m.dt = 0.125;
    m.t0 = 0.5;
    m.seed = 7;
    m.split = "train";
    m.trajectories = {{{0.5, "a.snap", ""}, {0.625, "b.snap", "c.snap"}}};
    const std::string man = (dir / "manifest.txt").string();
    write_manifest(man, m);
    const DatasetManifest m2 = read_manifest(man);
    ensure(m2.nu == m.nu && m2.forcing == m.forcing && m2.resolution == m.resolution &&
               m2.dt == m.dt && m2.t0 == m.t0 && m2.seed == m.seed &&
               m2.split == m.split && m2.trajectories.size() == 1 &&
               m2.trajectories[0].size() == 2 &&
               m2.trajectories[0][1].file == "b.snap" &&
               m2.trajectories[0][1].coarse == "c.snap" &&
               m2.trajectories[0][0].coarse.empty() &&
               m2.trajectories[0][1].t == 0.625,
           "manifest round trip drifted");

    // Checkpoints round trip bit for bit.
    Checkpoint ck;
    ck.model = selftest_model();
    ck.mode = TrainMode::Correction;
    ck.step = 42;
    ck.seed = 9;
    ck.params = scaled_random_params(ck.model, 4, 0.2);
    ck.opt.init(ck.params);
    const std::string cp = (dir / "probe_ckpt.bin").string();
    write_checkpoint(cp, ck);
    const Checkpoint ck2 = read_checkpoint(cp);
    ensure(ck2.step == ck.step && ck2.seed == ck.seed && ck2.mode == ck.mode &&
               ck2.params.entries.size() == ck.params.entries.size(),
           "checkpoint metadata drifted");
    for (std::size_t i = 0; i < ck.params.entries.size(); ++i) {
        ensure(ck2.params.entries[i].first == ck.params.entries[i].first &&
                   ck2.params.entries[i].second.f64 == ck.params.entries[i].second.f64,
               "checkpoint parameters drifted");
    }
    fs::remove_all(dir);
}

void run_selftest() {
    struct Suite {
        const char* name;
        void (*fn)();
    };
    const Suite suites[] = {
        {"quadrature exactness", st_quadrature},
        {"element transforms", st_basis},
        {"solver identities", st_solver},
        {"model structure", st_model},
        {"gradients", st_gradients},
        {"diagnostics identities", st_diagnostics},
        {"file round trips", st_files},
    };
    int n = 0;
    for (const Suite& su : suites) {
        try {
            su.fn();
        } catch (const std::exception& e) {
            throw ValidationError(std::string("selftest suite '") + su.name +
                                  "' failed: " + e.what());
        }
        std::cout << "ok - " << su.name << "\n";
        ++n;
    }
    std::cout << "selftest: " << n << " suites passed\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    std::ostringstream cl;
    for (int i = 0; i < argc; ++i) cl << (i ? " " : "") << argv[i];
    g_cmdline = cl.str();

    CLI::App app{"spectral-element turbulence surrogate laboratory"};
    app.set_version_flag("--version", std::string(cli::kVersion));
    app.require_subcommand(1);

    Flags a;
    auto add_common = [&a](CLI::App* sub, bool need_out) {
        sub->allow_extras();
        sub->add_option("--config", a.config, "text configuration file (key = value)");
        auto* out = sub->add_option("--out", a.out, "output directory");
        if (need_out) out->required();
    };

    CLI::App* gen = app.add_subcommand(
        "gen", "simulate reference trajectories into snapshot datasets");
    add_common(gen, true);

    CLI::App* train_cmd =
        app.add_subcommand("train", "fit a correction or direct surrogate");
    add_common(train_cmd, true);
    train_cmd->add_option("--manifest", a.manifest, "training dataset manifest");
    train_cmd->add_option("--test-manifest", a.test_manifest,
                          "held-out dataset manifest");
    train_cmd->add_option("--resume", a.resume, "checkpoint to continue from");

    CLI::App* eval_cmd = app.add_subcommand(
        "eval", "score a checkpoint against a held-out dataset");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required();
    eval_cmd->add_option("--manifest", a.manifest, "held-out dataset manifest")
        ->required();
    eval_cmd->add_option("--substeps", a.substeps,
                         "coarse solver substeps per recorded interval");

    CLI::App* rollout_cmd = app.add_subcommand(
        "rollout", "free-running hybrid rollout with snapshots and metrics");
    add_common(rollout_cmd, true);
    rollout_cmd->add_option("--checkpoint", a.checkpoint, "trained checkpoint")
        ->required();
    rollout_cmd->add_option("--manifest", a.manifest,
                            "dataset manifest providing the initial state")
        ->required();
    rollout_cmd->add_option("--steps", a.steps,
                            "steps to roll out (default: the reference length)");
    rollout_cmd->add_option("--trajectory", a.trajectory, "trajectory index");
    rollout_cmd->add_option("--substeps", a.substeps,
                            "coarse solver substeps per recorded interval");

    CLI::App* stats_cmd =
        app.add_subcommand("stats", "diagnostics for one snapshot file");
    add_common(stats_cmd, true);
    stats_cmd->add_option("--input", a.input, "snapshot file")->required();

    CLI::App* expand_cmd = app.add_subcommand(
        "expand", "run a trained model on a tiled, larger domain");
    add_common(expand_cmd, true);
    expand_cmd->add_option("--checkpoint", a.checkpoint, "trained checkpoint")
        ->required();
    expand_cmd->add_option("--manifest", a.manifest,
                           "dataset manifest providing the initial state")
        ->required();
    expand_cmd->add_option("--factor", a.factor, "expansion factor per axis");
    expand_cmd->add_option("--steps", a.steps, "hybrid steps to compare (default 8)");
    expand_cmd->add_option("--trajectory", a.trajectory, "trajectory index");
    expand_cmd->add_option("--substeps", a.substeps,
                           "coarse solver substeps per recorded interval");

    CLI::App* selftest_cmd =
        app.add_subcommand("selftest", "run the built-in invariant suites");
    (void)selftest_cmd;

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help / --version
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        const std::vector<cli::Override> extras = parse_extras(sub->remaining());
        const std::string name = sub->get_name();
        if (name == "gen") run_gen(a, extras);
        else if (name == "train") run_train(a, extras);
        else if (name == "eval") run_eval(a, extras);
        else if (name == "rollout") run_rollout(a, extras);
        else if (name == "stats") run_stats(a, extras);
        else if (name == "expand") run_expand(a, extras);
        else if (name == "selftest") {
            ensure(extras.empty(), "selftest takes no overrides");
            run_selftest();
        }
        return 0;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
