#include "semflow/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>

#include "semflow/core/error.hpp"
#include "semflow/core/rng.hpp"
#include "semflow/tensor/ops.hpp"

namespace semflow {

namespace fs = std::filesystem;

namespace {

// --- small binary/text helpers --------------------------------------------

template <class T>
void put_raw(std::ostream& o, const T& v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get_raw(std::istream& i, const char* what) {
    T v{};
    i.read(reinterpret_cast<char*>(&v), sizeof v);
    ensure(static_cast<bool>(i), std::string("truncated file while reading ") + what);
    return v;
}

void put_bytes(std::ostream& o, const void* p, std::size_t n) {
    o.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& i, void* p, std::size_t n, const char* what) {
    i.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    ensure(static_cast<bool>(i), std::string("truncated file while reading ") + what);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode) {
    std::ofstream f(path, mode);
    ensure(static_cast<bool>(f), "cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode) {
    std::ifstream f(path, mode);
    ensure(static_cast<bool>(f), "cannot open for reading: " + path);
    return f;
}

// --- tensor packing ---------------------------------------------------------

std::vector<std::int64_t> grid_shape(const GridField& g, std::int64_t batch) {
    return {batch, g.extent[0], g.extent[1], g.extent[2], g.channels};
}

TensorData grid_tensor(const GridField& g, Dtype dt) {
    return TensorData::from(dt, grid_shape(g, 1), g.data);
}

TensorData stack_grids(const std::vector<const GridField*>& gs, Dtype dt) {
    ensure(!gs.empty(), "cannot stack an empty list of fields");
    const GridField& g0 = *gs.front();
    std::vector<double> flat;
    flat.reserve(gs.size() * g0.data.size());
    for (const GridField* g : gs) {
        ensure(g != nullptr, "null field in a batch");
        ensure(g->extent == g0.extent && g->channels == g0.channels && g->dim == g0.dim,
               "every field in a batch must share extent and channel count");
        flat.insert(flat.end(), g->data.begin(), g->data.end());
    }
    return TensorData::from(dt, grid_shape(g0, static_cast<std::int64_t>(gs.size())), flat);
}

double squared_norm(const GridField& g) {
    double s = 0.0;
    for (double v : g.data) s += v * v;
    return s;
}

// --- manifest text ----------------------------------------------------------

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = s.find(sep, pos);
        if (next == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        ensure(used == s.size(), "trailing characters in " + what + ": '" + s + "'");
        return v;
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception&) {
        throw ValidationError("cannot parse " + what + ": '" + s + "'");
    }
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(s, &used);
        ensure(used == s.size(), "trailing characters in " + what + ": '" + s + "'");
        return v;
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception&) {
        throw ValidationError("cannot parse " + what + ": '" + s + "'");
    }
}

int parse_int(const std::string& s, const std::string& what) {
    double v = parse_double(s, what);
    int iv = static_cast<int>(v);
    ensure(static_cast<double>(iv) == v, what + " must be an integer: '" + s + "'");
    return iv;
}

std::string forcing_tag(const SolverConfig& cfg) {
    if (cfg.kind == FlowKind::Kolmogorov2D)
        return "kolmogorov2d:" + std::to_string(cfg.forcing_k) + ":" + fmt_double(cfg.damping);
    return "isotropic3d:" + fmt_double(cfg.p_in);
}

// --- checkpoint binary -------------------------------------------------------

constexpr char kSnapshotMagic[4] = {'E', 'D', 'Y', 'F'};
constexpr char kCheckpointMagic[4] = {'E', 'D', 'Y', 'C'};

void put_string(std::ostream& o, const std::string& s) {
    ensure(s.size() <= std::numeric_limits<std::uint16_t>::max(), "name too long for checkpoint");
    put_raw<std::uint16_t>(o, static_cast<std::uint16_t>(s.size()));
    put_bytes(o, s.data(), s.size());
}

std::string get_string(std::istream& i) {
    auto n = get_raw<std::uint16_t>(i, "string length");
    std::string s(n, '\0');
    if (n > 0) get_bytes(i, s.data(), n, "string bytes");
    return s;
}

void put_model_config(std::ostream& o, const ModelConfig& c) {
    put_raw<std::int32_t>(o, c.dim);
    put_raw<std::int32_t>(o, c.layers);
    put_raw<std::int32_t>(o, c.hidden);
    for (int a = 0; a < 3; ++a) put_raw<std::int32_t>(o, c.elems[a]);
    put_raw<std::int32_t>(o, c.sgs_modes);
    put_raw<std::int32_t>(o, c.les_modes);
    put_raw<std::uint8_t>(o, static_cast<std::uint8_t>(c.basis));
    for (int a = 0; a < 3; ++a) put_raw<double>(o, c.length[a]);
    put_raw<std::int32_t>(o, c.kernel_modes_sgs);
    put_raw<std::int32_t>(o, c.kernel_modes_les);
    put_raw<double>(o, c.window);
    put_raw<std::int32_t>(o, c.heads);
    put_raw<std::int32_t>(o, c.head_dim);
    put_raw<std::int32_t>(o, c.attn_window);
    put_raw<double>(o, c.alpha);
    put_raw<std::uint8_t>(o, static_cast<std::uint8_t>(c.streams));
    put_raw<std::int32_t>(o, c.in_channels);
    put_raw<std::uint8_t>(o, c.correction_input ? 1 : 0);
}

ModelConfig get_model_config(std::istream& i) {
    ModelConfig c;
    c.dim = get_raw<std::int32_t>(i, "model dim");
    c.layers = get_raw<std::int32_t>(i, "model layers");
    c.hidden = get_raw<std::int32_t>(i, "model hidden");
    for (int a = 0; a < 3; ++a) c.elems[a] = get_raw<std::int32_t>(i, "model elems");
    c.sgs_modes = get_raw<std::int32_t>(i, "model fine order");
    c.les_modes = get_raw<std::int32_t>(i, "model coarse order");
    c.basis = static_cast<BasisKind>(get_raw<std::uint8_t>(i, "model basis"));
    for (int a = 0; a < 3; ++a) c.length[a] = get_raw<double>(i, "model length");
    c.kernel_modes_sgs = get_raw<std::int32_t>(i, "kernel modes");
    c.kernel_modes_les = get_raw<std::int32_t>(i, "kernel modes");
    c.window = get_raw<double>(i, "kernel window");
    c.heads = get_raw<std::int32_t>(i, "heads");
    c.head_dim = get_raw<std::int32_t>(i, "head dim");
    c.attn_window = get_raw<std::int32_t>(i, "attention window");
    c.alpha = get_raw<double>(i, "alpha");
    c.streams = static_cast<StreamMode>(get_raw<std::uint8_t>(i, "streams"));
    c.in_channels = get_raw<std::int32_t>(i, "input channels");
    c.correction_input = get_raw<std::uint8_t>(i, "correction flag") != 0;
    return c;
}

std::string config_blob(const ModelConfig& c) {
    std::ostringstream o(std::ios::binary);
    put_model_config(o, c);
    return o.str();
}

void put_f64_payload(std::ostream& o, const TensorData& td) {
    ensure(td.dtype == Dtype::F64, "checkpoint payloads must be stored in double precision");
    put_raw<std::uint8_t>(o, static_cast<std::uint8_t>(td.shape.size()));
    for (std::int64_t d : td.shape) put_raw<std::int64_t>(o, d);
    put_bytes(o, td.f64.data(), td.f64.size() * sizeof(double));
}

TensorData get_f64_payload(std::istream& i) {
    auto rank = get_raw<std::uint8_t>(i, "tensor rank");
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) d = get_raw<std::int64_t>(i, "tensor extent");
    TensorData td = TensorData::zeros(Dtype::F64, shape);
    if (!td.f64.empty())
        get_bytes(i, td.f64.data(), td.f64.size() * sizeof(double), "tensor payload");
    return td;
}

// --- misc --------------------------------------------------------------------

/// Advances past the burn-in window at the CFL-limited step, landing exactly.
void burn_in(FlowState& s, const SolverConfig& cfg) {
    const double target = s.time + cfg.burn_in;
    while (s.time < target - 1e-12) {
        const double dt = std::min(cfl_dt(s, cfg), target - s.time);
        step(s, dt, cfg);
    }
    s.time = target;  // absorb accumulated roundoff
}

double grid_kinetic_energy(const GridField& g, FlowKind kind) {
    return kinetic_energy(state_from_grid(g, kind));
}

struct PairIndex {
    int traj = 0;
    int j = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

void write_snapshot(const std::string& path, const GridField& g, Dtype dtype) {
    ensure(g.dim == 2 || g.dim == 3, "snapshots hold 2D or 3D fields");
    ensure(g.channels >= 1 && g.channels <= 255, "snapshot channel count out of range");
    ensure(g.data.size() == g.points() * static_cast<std::size_t>(g.channels),
           "field buffer does not match its extents");
    auto f = open_out(path, std::ios::binary | std::ios::trunc);
    put_bytes(f, kSnapshotMagic, 4);
    put_raw<std::uint32_t>(f, 1u);
    put_raw<std::uint8_t>(f, static_cast<std::uint8_t>(g.dim));
    put_raw<std::uint8_t>(f, static_cast<std::uint8_t>(g.channels));
    put_raw<std::uint8_t>(f, dtype == Dtype::F32 ? 0 : 1);
    put_raw<std::uint8_t>(f, 0);
    for (int a = 0; a < g.dim; ++a) {
        ensure(g.extent[a] >= 1, "snapshot extent must be positive");
        put_raw<std::uint32_t>(f, static_cast<std::uint32_t>(g.extent[a]));
    }
    for (int a = 0; a < g.dim; ++a) put_raw<double>(f, g.length[a]);
    put_raw<double>(f, g.time);
    if (dtype == Dtype::F64) {
        put_bytes(f, g.data.data(), g.data.size() * sizeof(double));
    } else {
        std::vector<float> narrow(g.data.begin(), g.data.end());
        put_bytes(f, narrow.data(), narrow.size() * sizeof(float));
    }
    f.flush();
    ensure(static_cast<bool>(f), "write failed: " + path);
}

GridField read_snapshot(const std::string& path) {
    auto f = open_in(path, std::ios::binary);
    char magic[4];
    get_bytes(f, magic, 4, "snapshot magic");
    ensure(std::memcmp(magic, kSnapshotMagic, 4) == 0, "not a snapshot file: " + path);
    const auto version = get_raw<std::uint32_t>(f, "snapshot version");
    ensure(version == 1, "unsupported snapshot version in " + path);
    const int dim = get_raw<std::uint8_t>(f, "snapshot dim");
    ensure(dim == 2 || dim == 3, "snapshot dimensionality out of range in " + path);
    const int channels = get_raw<std::uint8_t>(f, "snapshot channels");
    ensure(channels >= 1, "snapshot without channels in " + path);
    const int dcode = get_raw<std::uint8_t>(f, "snapshot dtype");
    ensure(dcode == 0 || dcode == 1, "unknown snapshot dtype in " + path);
    get_raw<std::uint8_t>(f, "snapshot padding");
    std::array<int, 3> extent{1, 1, 1};
    std::array<double, 3> length{1.0, 1.0, 1.0};
    for (int a = 0; a < dim; ++a) {
        extent[a] = static_cast<int>(get_raw<std::uint32_t>(f, "snapshot extent"));
        ensure(extent[a] >= 1, "snapshot extent must be positive in " + path);
    }
    for (int a = 0; a < dim; ++a) length[a] = get_raw<double>(f, "snapshot length");
    const double time = get_raw<double>(f, "snapshot time");
    GridField g = make_grid_field(dim, extent, length, channels);
    g.time = time;
    if (dcode == 1) {
        get_bytes(f, g.data.data(), g.data.size() * sizeof(double), "snapshot payload");
    } else {
        std::vector<float> narrow(g.data.size());
        get_bytes(f, narrow.data(), narrow.size() * sizeof(float), "snapshot payload");
        std::copy(narrow.begin(), narrow.end(), g.data.begin());
    }
    return g;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
    ensure(dt > 0.0 && std::isfinite(dt), "manifest snapshot spacing must be positive");
    ensure(nu > 0.0, "manifest viscosity must be positive");
    ensure(!forcing.empty(), "manifest forcing tag is empty");
    ensure(!trajectories.empty(), "manifest lists no trajectories");
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& traj = trajectories[i];
        ensure(!traj.empty(), "trajectory " + std::to_string(i) + " has no snapshots");
        for (std::size_t j = 0; j < traj.size(); ++j) {
            ensure(!traj[j].file.empty(),
                   "trajectory " + std::to_string(i) + " entry " + std::to_string(j) +
                       " lacks a file");
            if (j == 0) continue;
            const double gap = traj[j].t - traj[j - 1].t;
            ensure(gap > 0.0, "times must increase within trajectory " + std::to_string(i));
            ensure(std::abs(gap - dt) <= 1e-9 * std::max(1.0, dt),
                   "snapshot spacing deviates from dt in trajectory " + std::to_string(i));
        }
    }
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
    auto f = open_out(path, std::ios::trunc);
    f << "nu=" << fmt_double(m.nu) << "\n";
    f << "forcing=" << m.forcing << "\n";
    f << "resolution=" << m.resolution[0] << "x" << m.resolution[1] << "x" << m.resolution[2]
      << "\n";
    f << "dt=" << fmt_double(m.dt) << "\n";
    f << "t0=" << fmt_double(m.t0) << "\n";
    f << "seed=" << m.seed << "\n";
    f << "split=" << m.split << "\n";
    for (const auto& traj : m.trajectories)
        for (const auto& e : traj)
            f << "t=" << fmt_double(e.t) << " file=" << e.file
              << " coarse=" << (e.coarse.empty() ? "-" : e.coarse) << "\n";
    f.flush();
    ensure(static_cast<bool>(f), "write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    auto f = open_in(path, std::ios::in);
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    bool have_prev = false;
    double prev_t = 0.0;
    while (std::getline(f, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        if (line.rfind("t=", 0) == 0) {
            ManifestEntry e;
            std::istringstream toks(line);
            std::string tok;
            bool saw_file = false, saw_coarse = false;
            while (toks >> tok) {
                if (tok.rfind("t=", 0) == 0) {
                    e.t = parse_double(tok.substr(2), "snapshot time at " + where);
                } else if (tok.rfind("file=", 0) == 0) {
                    e.file = tok.substr(5);
                    saw_file = true;
                } else if (tok.rfind("coarse=", 0) == 0) {
                    e.coarse = tok.substr(7);
                    if (e.coarse == "-") e.coarse.clear();
                    saw_coarse = true;
                } else {
                    throw ValidationError("unknown token '" + tok + "' at " + where);
                }
            }
            ensure(saw_file && saw_coarse, "incomplete snapshot line at " + where);
            if (!have_prev || e.t <= prev_t) m.trajectories.emplace_back();
            m.trajectories.back().push_back(e);
            prev_t = e.t;
            have_prev = true;
            continue;
        }
        const auto eq = line.find('=');
        ensure(eq != std::string::npos, "expected key=value at " + where);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "nu") {
            m.nu = parse_double(value, "nu at " + where);
        } else if (key == "forcing") {
            m.forcing = value;
        } else if (key == "resolution") {
            auto parts = split_on(value, 'x');
            ensure(parts.size() == 3, "resolution must be n1xn2xn3 at " + where);
            for (int a = 0; a < 3; ++a)
                m.resolution[a] = parse_int(parts[a], "resolution at " + where);
        } else if (key == "dt") {
            m.dt = parse_double(value, "dt at " + where);
        } else if (key == "t0") {
            m.t0 = parse_double(value, "t0 at " + where);
        } else if (key == "seed") {
            m.seed = parse_u64(value, "seed at " + where);
        } else if (key == "split") {
            m.split = value;
        } else {
            throw ValidationError("unknown manifest key '" + key + "' at " + where);
        }
    }
    m.validate();
    return m;
}

SolverConfig manifest_solver(const DatasetManifest& m, std::array<int, 3> res) {
    auto parts = split_on(m.forcing, ':');
    ensure(!parts.empty(), "empty forcing tag");
    SolverConfig cfg;
    if (parts[0] == "kolmogorov2d") {
        ensure(parts.size() == 3, "kolmogorov2d tag needs a wavenumber and a damping rate");
        cfg = SolverConfig::kolmogorov_2d();
        cfg.forcing_k = parse_int(parts[1], "forcing wavenumber");
        cfg.damping = parse_double(parts[2], "damping rate");
    } else if (parts[0] == "isotropic3d") {
        ensure(parts.size() == 2, "isotropic3d tag needs an injection rate");
        cfg = SolverConfig::isotropic_3d();
        cfg.p_in = parse_double(parts[1], "injection rate");
    } else {
        throw ValidationError("unknown forcing tag '" + parts[0] + "'");
    }
    cfg.nu = m.nu;
    cfg.res = res;
    cfg.dt_record = m.dt;
    cfg.burn_in = m.t0;
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

void GenSpec::validate() const {
    solver.validate();
    const int dim = solver.dim();
    for (int a = 0; a < dim; ++a)
        ensure(record_res[a] >= 4, "snapshot grid must have at least 4 points per used axis");
    if (dim == 2)
        ensure(record_res[2] == 1, "2D snapshot grids keep the third extent at 1");
    ensure(coarse_substeps >= 1, "coarse advance needs at least one substep");
    ensure(train_trajectories >= 1, "need at least one training trajectory");
    ensure(test_trajectories >= 0, "test trajectory count cannot be negative");
    ensure(duration > 0.0, "recorded duration must be positive");
    ensure(duration >= solver.dt_record, "duration must cover at least one snapshot interval");
    ensure(!out_dir.empty(), "generation needs an output directory");
}

GridField coarse_advance(const GridField& u, const SolverConfig& coarse_cfg, int substeps,
                         double dt) {
    ensure(substeps >= 1, "coarse advance needs at least one substep");
    ensure(dt > 0.0 && std::isfinite(dt), "coarse advance needs a positive step");
    FlowState s = state_from_grid(u, coarse_cfg.kind);
    for (int k = 0; k < substeps; ++k) step(s, dt / substeps, coarse_cfg);
    GridField out = state_to_grid(s, u.extent);
    out.time = u.time + dt;
    return out;
}

std::pair<DatasetManifest, DatasetManifest> generate_dataset(const GenSpec& spec) {
    spec.validate();
    fs::create_directories(spec.out_dir);

    SolverConfig coarse_cfg = spec.solver;
    coarse_cfg.res = spec.record_res;

    auto run_split = [&](const std::string& split, int count, std::uint64_t seed0) {
        DatasetManifest m;
        m.nu = spec.solver.nu;
        m.forcing = forcing_tag(spec.solver);
        m.resolution = spec.solver.res;
        m.dt = spec.solver.dt_record;
        m.t0 = spec.solver.burn_in;
        m.seed = seed0;
        m.split = split;
        for (int i = 0; i < count; ++i) {
            const std::uint64_t traj_seed = seed0 + static_cast<std::uint64_t>(i);
            try {
                FlowState s = init_random(spec.solver, traj_seed);
                burn_in(s, spec.solver);
                Trajectory rec = simulate(s, spec.duration, spec.solver, spec.record_res);
                std::vector<ManifestEntry> entries;
                for (std::size_t j = 0; j < rec.snapshots.size(); ++j) {
                    const GridField& snap = rec.snapshots[j];
                    const std::string stem =
                        split + "_traj" + std::to_string(i) + "_" + std::to_string(j);
                    ManifestEntry e;
                    e.t = snap.time;
                    e.file = stem + ".snap";
                    e.coarse = stem + ".coarse.snap";
                    write_snapshot((fs::path(spec.out_dir) / e.file).string(), snap,
                                   spec.snapshot_dtype);
                    const GridField companion =
                        coarse_advance(snap, coarse_cfg, spec.coarse_substeps, m.dt);
                    write_snapshot((fs::path(spec.out_dir) / e.coarse).string(), companion,
                                   spec.snapshot_dtype);
                    entries.push_back(std::move(e));
                }
                m.trajectories.push_back(std::move(entries));
            } catch (const NumericError& e) {
                throw NumericError(split + " trajectory with seed " + std::to_string(traj_seed) +
                                   " diverged: " + e.what());
            }
        }
        if (count > 0) {
            m.validate();
            write_manifest((fs::path(spec.out_dir) / (split + "_manifest.txt")).string(), m);
        }
        return m;
    };

    DatasetManifest train = run_split("train", spec.train_trajectories, spec.seed);
    DatasetManifest test = run_split(
        "test", spec.test_trajectories,
        spec.seed + static_cast<std::uint64_t>(spec.train_trajectories));
    return {std::move(train), std::move(test)};
}

int Dataset::pairs() const {
    int n = 0;
    for (const auto& traj : states)
        if (traj.size() > 1) n += static_cast<int>(traj.size()) - 1;
    return n;
}

Dataset load_dataset(const std::string& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& traj : ds.manifest.trajectories) {
        std::vector<GridField> row, crow;
        row.reserve(traj.size());
        crow.reserve(traj.size());
        for (const auto& e : traj) {
            row.push_back(read_snapshot((base / e.file).string()));
            crow.push_back(e.coarse.empty() ? GridField{}
                                            : read_snapshot((base / e.coarse).string()));
        }
        ds.states.push_back(std::move(row));
        ds.coarse.push_back(std::move(crow));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor loss_one_step(Tape& tape, const ModelRuntime& model, const BoundParams& bound,
                     const PairBatch& batch) {
    const std::size_t B = batch.u_t.size();
    ensure(B >= 1, "one-step loss needs a non-empty batch");
    ensure(batch.u_next.size() == B, "batch target list does not match the inputs");
    const bool corr = model.config().correction_input;
    if (corr)
        ensure(batch.u_star.size() == B, "correction batches carry one coarse state per input");
    else
        ensure(batch.u_star.empty(), "direct batches must not carry coarse states");
    for (const GridField* g : batch.u_next)
        ensure(squared_norm(*g) > 0.0, "one-step target has zero norm");

    Tensor u = tape.constant(stack_grids(batch.u_t, tape.dtype()));
    std::optional<Tensor> star;
    if (corr) star = tape.constant(stack_grids(batch.u_star, tape.dtype()));
    Tensor pred = model.forward(tape, bound, u, star);

    Tensor acc;
    for (std::size_t b = 0; b < B; ++b) {
        Tensor pb = ops::index_select(pred, 0, {static_cast<std::int64_t>(b)});
        Tensor target = tape.constant(grid_tensor(*batch.u_next[b], tape.dtype()));
        Tensor lb = ops::rel_l2(pb, target);
        acc = (b == 0) ? lb : ops::add(acc, lb);
    }
    return ops::scale(acc, 1.0 / static_cast<double>(B));
}

Tensor loss_rollout(Tape& tape, const ModelRuntime& model, const BoundParams& bound,
                    const TapedSolver2D& coarse, int substeps, double dt,
                    const std::vector<RolloutSample>& batch) {
    const ModelConfig& mc = model.config();
    ensure(mc.dim == 2 && mc.in_channels == 1 && mc.correction_input,
           "rollout training expects a 2D correction model on scalar vorticity");
    ensure(substeps >= 1, "rollout needs at least one solver substep per interval");
    ensure(dt > 0.0 && std::isfinite(dt), "rollout needs a positive snapshot spacing");
    ensure(!batch.empty(), "rollout loss needs a non-empty batch");
    const std::int64_t n1 = coarse.n1();
    const std::int64_t n2 = coarse.n2();

    Tensor total;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const RolloutSample& sample = batch[s];
        ensure(sample.u0 != nullptr, "rollout sample lacks an initial state");
        ensure(!sample.targets.empty(), "rollout sample lacks targets");
        ensure(sample.u0->extent[0] == n1 && sample.u0->extent[1] == n2 &&
                   sample.u0->channels == 1,
               "rollout state does not match the coarse solver grid");
        const int N = static_cast<int>(sample.targets.size());

        Tensor x = tape.constant(grid_tensor(*sample.u0, tape.dtype()));
        Tensor acc;
        for (int n = 1; n <= N; ++n) {
            try {
                Tensor w = coarse.spectrum(ops::reshape(x, {n1, n2}));
                for (int k = 0; k < substeps; ++k) w = coarse.step(w, dt / substeps);
                Tensor star = ops::reshape(coarse.physical(w), {1, n1, n2, 1, 1});
                Tensor out = model.forward(tape, bound, x, star);
                const GridField* tgt = sample.targets[static_cast<std::size_t>(n - 1)];
                ensure(tgt != nullptr, "rollout sample has a null target");
                ensure(squared_norm(*tgt) > 0.0, "rollout target has zero norm");
                Tensor target = tape.constant(grid_tensor(*tgt, tape.dtype()));
                Tensor ln = ops::rel_l2(out, target);
                acc = (n == 1) ? ln : ops::add(acc, ln);
                x = out;
            } catch (const NumericError& e) {
                throw NumericError("rollout diverged at step " + std::to_string(n) + " of " +
                                   std::to_string(N) + ": " + e.what());
            }
        }
        Tensor ls = ops::scale(acc, 1.0 / static_cast<double>(N));
        total = (s == 0) ? ls : ops::add(total, ls);
    }
    return ops::scale(total, 1.0 / static_cast<double>(batch.size()));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void AdamState::init(const ModelParams& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.entries.size());
    v.reserve(params.entries.size());
    for (const auto& [name, td] : params.entries) {
        (void)name;
        m.push_back(TensorData::zeros(Dtype::F64, td.shape));
        v.push_back(TensorData::zeros(Dtype::F64, td.shape));
    }
}

AdamReport adam_step(ModelParams& params, const std::vector<TensorData>& grads,
                     AdamState& state, double lr) {
    const std::size_t P = params.entries.size();
    ensure(grads.size() == P, "gradient list does not align with the parameters");
    ensure(state.m.size() == P && state.v.size() == P,
           "optimizer state does not align with the parameters");
    ensure(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");

    double sq = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        const TensorData& g = grads[i];
        ensure(g.dtype == Dtype::F64, "gradients must be double precision");
        ensure(g.shape == params.entries[i].second.shape,
               "gradient shape does not match parameter '" + params.entries[i].first + "'");
        for (double x : g.f64) sq += x * x;
    }
    AdamReport report;
    report.grad_norm = std::sqrt(sq);
    if (!std::isfinite(report.grad_norm)) {
        report.skipped = true;
        return report;
    }
    double scale = 1.0;
    if (state.clip_norm > 0.0 && report.grad_norm > state.clip_norm)
        scale = state.clip_norm / report.grad_norm;

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < P; ++i) {
        auto& p = params.entries[i].second.f64;
        const auto& g = grads[i].f64;
        auto& m = state.m[i].f64;
        auto& v = state.v[i].f64;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j] * scale;
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + state.eps);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    auto f = open_out(path, std::ios::binary | std::ios::trunc);
    put_bytes(f, kCheckpointMagic, 4);
    put_raw<std::uint32_t>(f, 1u);
    put_model_config(f, ck.model);
    put_raw<std::uint8_t>(f, ck.mode == TrainMode::Correction ? 1 : 0);
    put_raw<std::int64_t>(f, ck.step);
    put_raw<std::uint64_t>(f, ck.seed);
    put_raw<std::uint32_t>(f, static_cast<std::uint32_t>(ck.params.entries.size()));
    for (const auto& [name, td] : ck.params.entries) {
        put_string(f, name);
        put_f64_payload(f, td);
    }
    const bool has_opt = !ck.opt.m.empty();
    if (has_opt)
        ensure(ck.opt.m.size() == ck.params.entries.size() &&
                   ck.opt.v.size() == ck.params.entries.size(),
               "optimizer state does not align with the parameters");
    put_raw<std::uint8_t>(f, has_opt ? 1 : 0);
    if (has_opt) {
        put_raw<double>(f, ck.opt.beta1);
        put_raw<double>(f, ck.opt.beta2);
        put_raw<double>(f, ck.opt.eps);
        put_raw<double>(f, ck.opt.clip_norm);
        put_raw<std::int64_t>(f, ck.opt.step);
        for (std::size_t i = 0; i < ck.opt.m.size(); ++i) {
            put_f64_payload(f, ck.opt.m[i]);
            put_f64_payload(f, ck.opt.v[i]);
        }
    }
    f.flush();
    ensure(static_cast<bool>(f), "write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    auto f = open_in(path, std::ios::binary);
    char magic[4];
    get_bytes(f, magic, 4, "checkpoint magic");
    ensure(std::memcmp(magic, kCheckpointMagic, 4) == 0, "not a checkpoint file: " + path);
    const auto version = get_raw<std::uint32_t>(f, "checkpoint version");
    ensure(version == 1, "unsupported checkpoint version in " + path);
    Checkpoint ck;
    ck.model = get_model_config(f);
    ck.mode = get_raw<std::uint8_t>(f, "mode") != 0 ? TrainMode::Correction : TrainMode::Direct;
    ck.step = get_raw<std::int64_t>(f, "step");
    ck.seed = get_raw<std::uint64_t>(f, "seed");
    const auto nparams = get_raw<std::uint32_t>(f, "parameter count");
    ck.params.entries.reserve(nparams);
    for (std::uint32_t i = 0; i < nparams; ++i) {
        std::string name = get_string(f);
        TensorData td = get_f64_payload(f);
        ck.params.entries.emplace_back(std::move(name), std::move(td));
    }
    const bool has_opt = get_raw<std::uint8_t>(f, "optimizer flag") != 0;
    if (has_opt) {
        ck.opt.beta1 = get_raw<double>(f, "beta1");
        ck.opt.beta2 = get_raw<double>(f, "beta2");
        ck.opt.eps = get_raw<double>(f, "epsilon");
        ck.opt.clip_norm = get_raw<double>(f, "clip norm");
        ck.opt.step = get_raw<std::int64_t>(f, "optimizer step");
        ck.opt.m.reserve(nparams);
        ck.opt.v.reserve(nparams);
        for (std::uint32_t i = 0; i < nparams; ++i) {
            ck.opt.m.push_back(get_f64_payload(f));
            ck.opt.v.push_back(get_f64_payload(f));
        }
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    model.validate();
    ensure(!train_manifest.empty(), "training needs a train manifest");
    ensure(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
    ensure(fine_tune_lr > 0.0 && std::isfinite(fine_tune_lr),
           "fine-tune learning rate must be positive");
    ensure(batch >= 1, "batch size must be at least 1");
    ensure(steps >= 0, "step count cannot be negative");
    ensure(fine_tune_steps >= 0, "fine-tune step count cannot be negative");
    ensure(rollout_n >= 1, "rollout length must be at least 1");
    ensure(coarse_substeps >= 1, "coarse advance needs at least one substep");
    ensure(tape_chunk >= 1, "tape chunk must be at least 1");
    ensure(eval_every >= 0 && checkpoint_every >= 0, "cadences cannot be negative");
    ensure(dtype == Dtype::F32 || dtype == Dtype::F64, "unsupported training dtype");
    if (mode == TrainMode::Correction)
        ensure(model.correction_input, "correction training needs a correction-input model");
    else
        ensure(!model.correction_input, "direct training needs a direct-input model");
    if (fine_tune_steps > 0) {
        ensure(mode == TrainMode::Correction, "rollout fine-tuning applies to correction models");
        ensure(model.dim == 2, "rollout fine-tuning is limited to 2D models");
    }
}

namespace {

/// Deterministic batch sampling: a pure function of (seed, step).
std::vector<PairIndex> sample_batch(const std::vector<PairIndex>& pool, std::uint64_t seed,
                                    std::int64_t step, int batch) {
    Rng rng(seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(step) + 1)));
    std::vector<PairIndex> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i)
        out.push_back(pool[rng.below(static_cast<std::uint64_t>(pool.size()))]);
    return out;
}

/// Harvests one gradient per bound leaf as F64; leaves the backward pass
/// never reached produce zeros of the parameter's shape.
std::vector<TensorData> collect_grads(Tape& tape, const BoundParams& bound,
                                      const ModelParams& params) {
    std::vector<TensorData> out;
    out.reserve(bound.leaves.size());
    for (std::size_t i = 0; i < bound.leaves.size(); ++i) {
        const auto& shape = params.entries[i].second.shape;
        try {
            const TensorData& g = tape.grad(bound.leaves[i]);
            out.push_back(TensorData::from(Dtype::F64, shape, g.to_doubles()));
        } catch (const ValidationError&) {
            out.push_back(TensorData::zeros(Dtype::F64, shape));
        }
    }
    return out;
}

void accumulate(std::vector<TensorData>& acc, const std::vector<TensorData>& g, double w) {
    for (std::size_t i = 0; i < acc.size(); ++i)
        for (std::size_t j = 0; j < acc[i].f64.size(); ++j) acc[i].f64[j] += w * g[i].f64[j];
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    Dataset ds = load_dataset(cfg.train_manifest);
    ensure(ds.pairs() >= 1, "training dataset holds no consecutive snapshot pairs");
    const GridField& probe = ds.states.front().front();
    ensure(probe.dim == cfg.model.dim, "dataset dimensionality does not match the model");
    ensure(probe.channels == cfg.model.in_channels,
           "dataset channel count does not match the model");

    const bool correction = cfg.mode == TrainMode::Correction;
    std::vector<PairIndex> pool;
    for (std::size_t t = 0; t < ds.states.size(); ++t) {
        for (std::size_t j = 0; j + 1 < ds.states[t].size(); ++j) {
            if (correction)
                ensure(!ds.coarse[t][j].data.empty(),
                       "correction training needs coarse companions in the dataset");
            pool.push_back({static_cast<int>(t), static_cast<int>(j)});
        }
    }

    std::optional<Dataset> test;
    std::vector<PairIndex> test_pool;
    if (!cfg.test_manifest.empty()) {
        test = load_dataset(cfg.test_manifest);
        for (std::size_t t = 0; t < test->states.size(); ++t)
            for (std::size_t j = 0; j + 1 < test->states[t].size(); ++j) {
                if (correction && test->coarse[t][j].data.empty()) continue;
                test_pool.push_back({static_cast<int>(t), static_cast<int>(j)});
            }
    }

    ModelRuntime model(cfg.model);

    Checkpoint ck;
    if (cfg.resume_from.empty()) {
        ck.model = cfg.model;
        ck.mode = cfg.mode;
        ck.seed = cfg.seed;
        ck.step = 0;
        ck.params = init_params(cfg.model, cfg.seed);
        ck.opt.clip_norm = cfg.clip_norm;
        ck.opt.init(ck.params);
    } else {
        ck = read_checkpoint(cfg.resume_from);
        ensure(config_blob(ck.model) == config_blob(cfg.model),
               "checkpoint architecture does not match the training configuration");
        ensure(ck.mode == cfg.mode, "checkpoint mode does not match the training configuration");
        if (ck.opt.m.empty()) {
            ck.opt.clip_norm = cfg.clip_norm;
            ck.opt.init(ck.params);
        }
    }

    const fs::path outdir(cfg.out_dir);
    if (!cfg.out_dir.empty()) fs::create_directories(outdir);
    auto save = [&](const std::string& name) -> std::string {
        if (cfg.out_dir.empty()) return {};
        std::string p = (outdir / name).string();
        write_checkpoint(p, ck);
        return p;
    };

    // Rollout pool and the on-tape coarse solver (phase 2 only).
    std::vector<PairIndex> rollout_pool;
    std::unique_ptr<TapedSolver2D> taped;
    if (cfg.fine_tune_steps > 0) {
        for (std::size_t t = 0; t < ds.states.size(); ++t)
            for (std::size_t j = 0;
                 j + static_cast<std::size_t>(cfg.rollout_n) < ds.states[t].size(); ++j)
                rollout_pool.push_back({static_cast<int>(t), static_cast<int>(j)});
        ensure(!rollout_pool.empty(),
               "no trajectory window long enough for the requested rollout length");
        SolverConfig coarse_cfg = manifest_solver(ds.manifest, probe.extent);
        coarse_cfg.length = probe.length;
        taped = std::make_unique<TapedSolver2D>(coarse_cfg);
    }

    TrainResult result;
    std::vector<TensorData> grad_acc;
    grad_acc.reserve(ck.params.entries.size());

    auto eval_now = [&]() -> double {
        if (test_pool.empty()) return std::numeric_limits<double>::quiet_NaN();
        // Fixed held-out subset, independent of the step counter.
        Rng rng(cfg.seed ^ 0xE7A1D2C3B4F59687ull);
        const int n = std::min<int>(cfg.batch, static_cast<int>(test_pool.size()));
        double loss = 0.0;
        for (int base = 0; base < n; base += cfg.tape_chunk) {
            const int m = std::min(cfg.tape_chunk, n - base);
            PairBatch pb;
            for (int i = 0; i < m; ++i) {
                const PairIndex id = test_pool[rng.below(static_cast<std::uint64_t>(
                    test_pool.size()))];
                pb.u_t.push_back(&test->states[id.traj][id.j]);
                pb.u_next.push_back(&test->states[id.traj][id.j + 1]);
                if (correction) pb.u_star.push_back(&test->coarse[id.traj][id.j]);
            }
            Tape tape(cfg.dtype);
            BoundParams bound = model.bind(tape, ck.params);
            Tensor l = loss_one_step(tape, model, bound, pb);
            loss += tape.val(l).scalar() * (static_cast<double>(m) / n);
        }
        return loss;
    };

    auto run_step = [&](bool rollout_phase, double lr) {
        const auto ids =
            sample_batch(rollout_phase ? rollout_pool : pool, cfg.seed, ck.step, cfg.batch);
        grad_acc.clear();
        for (const auto& [name, td] : ck.params.entries) {
            (void)name;
            grad_acc.push_back(TensorData::zeros(Dtype::F64, td.shape));
        }
        double loss_val = 0.0;
        try {
        for (int base = 0; base < cfg.batch; base += cfg.tape_chunk) {
            const int m = std::min(cfg.tape_chunk, cfg.batch - base);
            const double w = static_cast<double>(m) / cfg.batch;
            Tape tape(cfg.dtype);
            BoundParams bound = model.bind(tape, ck.params);
            Tensor loss;
            if (!rollout_phase) {
                PairBatch pb;
                for (int i = 0; i < m; ++i) {
                    const PairIndex id = ids[static_cast<std::size_t>(base + i)];
                    pb.u_t.push_back(&ds.states[id.traj][id.j]);
                    pb.u_next.push_back(&ds.states[id.traj][id.j + 1]);
                    if (correction) pb.u_star.push_back(&ds.coarse[id.traj][id.j]);
                }
                loss = loss_one_step(tape, model, bound, pb);
            } else {
                std::vector<RolloutSample> rb;
                for (int i = 0; i < m; ++i) {
                    const PairIndex id = ids[static_cast<std::size_t>(base + i)];
                    RolloutSample s;
                    s.u0 = &ds.states[id.traj][id.j];
                    for (int n = 1; n <= cfg.rollout_n; ++n)
                        s.targets.push_back(&ds.states[id.traj][id.j + n]);
                    rb.push_back(std::move(s));
                }
                loss = loss_rollout(tape, model, bound, *taped, cfg.coarse_substeps,
                                    ds.manifest.dt, rb);
            }
            const double lv = tape.val(loss).scalar();
            if (!std::isfinite(lv)) throw NumericError("the loss is not finite");
            loss_val += lv * w;
            tape.backward(loss);
            accumulate(grad_acc, collect_grads(tape, bound, ck.params), w);
        }
        } catch (const NumericError& e) {
            // Parameters have not been updated this step: keep them.
            save("ckpt_abort.bin");
            throw NumericError("optimizer step " + std::to_string(ck.step) + ": " + e.what());
        }
        adam_step(ck.params, grad_acc, ck.opt, lr);
        ck.step += 1;
        result.loss_log.push_back(loss_val);
        if (cfg.eval_every > 0 && ck.step % cfg.eval_every == 0 && !test_pool.empty()) {
            result.eval_steps.push_back(ck.step);
            result.eval_loss.push_back(eval_now());
        }
        if (cfg.checkpoint_every > 0 && ck.step % cfg.checkpoint_every == 0)
            save("ckpt_step" + std::to_string(ck.step) + ".bin");
    };

    while (ck.step < cfg.steps) run_step(false, cfg.lr);
    const std::int64_t total = static_cast<std::int64_t>(cfg.steps) + cfg.fine_tune_steps;
    while (ck.step < total && cfg.fine_tune_steps > 0) run_step(true, cfg.fine_tune_lr);

    result.checkpoint_path = save("ckpt_final.bin");
    if (!cfg.out_dir.empty()) {
        auto f = open_out((outdir / "train_loss.csv").string(), std::ios::trunc);
        f << "step,loss\n";
        const std::int64_t first = ck.step - static_cast<std::int64_t>(result.loss_log.size());
        for (std::size_t i = 0; i < result.loss_log.size(); ++i)
            f << (first + static_cast<std::int64_t>(i) + 1) << ","
              << fmt_double(result.loss_log[i]) << "\n";
        if (!result.eval_steps.empty()) {
            auto g = open_out((outdir / "eval_loss.csv").string(), std::ios::trunc);
            g << "step,loss\n";
            for (std::size_t i = 0; i < result.eval_steps.size(); ++i)
                g << result.eval_steps[i] << "," << fmt_double(result.eval_loss[i]) << "\n";
        }
    }
    result.checkpoint = std::move(ck);
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalSeries evaluate(const Checkpoint& ckpt, const std::string& test_manifest,
                    const std::string& out_dir, int substeps) {
    ensure(substeps >= 1, "evaluation needs at least one coarse substep");
    ckpt.model.validate();
    Dataset ds = load_dataset(test_manifest);
    const GridField& first = ds.states.front().front();
    ensure(first.dim == ckpt.model.dim, "test data dimensionality does not match the model");
    ensure(first.channels == ckpt.model.in_channels,
           "test data channel count does not match the model");
    SolverConfig coarse_cfg = manifest_solver(ds.manifest, first.extent);
    coarse_cfg.length = first.length;
    const double dt = ds.manifest.dt;
    const bool correction = ckpt.mode == TrainMode::Correction;

    ModelRuntime model(ckpt.model);

    std::size_t horizon = 0;
    for (const auto& traj : ds.states)
        if (traj.size() > 1) horizon = std::max(horizon, traj.size() - 1);
    ensure(horizon >= 1, "test trajectories hold no steps to evaluate");

    EvalSeries out;
    out.times.resize(horizon);
    for (std::size_t j = 0; j < horizon; ++j) out.times[j] = dt * static_cast<double>(j + 1);
    std::vector<ErrorMetrics> mh(horizon), mc(horizon);
    std::vector<double> eh(horizon, 0.0), er(horizon, 0.0);
    std::vector<int> counts(horizon, 0);

    GridField last_hybrid, last_ref;  // final states of the last clean trajectory
    for (std::size_t t = 0; t < ds.states.size(); ++t) {
        const auto& traj = ds.states[t];
        if (traj.size() < 2) continue;
        try {
            GridField hybrid = traj.front();
            GridField raw = traj.front();
            std::vector<ErrorMetrics> th, tc;
            std::vector<double> te_h, te_r;
            for (std::size_t j = 1; j < traj.size(); ++j) {
                const GridField star = coarse_advance(hybrid, coarse_cfg, substeps, dt);
                GridField pred = correction ? model.predict(ckpt.params, hybrid, &star)
                                            : model.predict(ckpt.params, hybrid, nullptr);
                pred.time = star.time;
                raw = coarse_advance(raw, coarse_cfg, substeps, dt);
                const GridField& ref = traj[j];
                th.push_back(error_metrics(ref, pred));
                tc.push_back(error_metrics(ref, raw));
                te_h.push_back(grid_kinetic_energy(pred, coarse_cfg.kind));
                te_r.push_back(grid_kinetic_energy(ref, coarse_cfg.kind));
                hybrid = std::move(pred);
            }
            for (std::size_t j = 0; j < th.size(); ++j) {
                mh[j].rel_l2 += th[j].rel_l2;
                mh[j].correlation += th[j].correlation;
                mh[j].vrmse += th[j].vrmse;
                mc[j].rel_l2 += tc[j].rel_l2;
                mc[j].correlation += tc[j].correlation;
                mc[j].vrmse += tc[j].vrmse;
                eh[j] += te_h[j];
                er[j] += te_r[j];
                counts[j] += 1;
            }
            last_hybrid = hybrid;
            last_ref = traj.back();
            out.trajectories += 1;
        } catch (const std::exception&) {
            continue;  // isolate per-trajectory failures
        }
    }
    ensure(out.trajectories >= 1, "every test trajectory failed to evaluate");

    std::size_t used = horizon;
    while (used > 0 && counts[used - 1] == 0) --used;
    out.times.resize(used);
    out.hybrid.resize(used);
    out.coarse.resize(used);
    out.e_hybrid.resize(used);
    out.e_ref.resize(used);
    for (std::size_t j = 0; j < used; ++j) {
        const double n = static_cast<double>(counts[j]);
        out.hybrid[j] = {mh[j].rel_l2 / n, mh[j].correlation / n, mh[j].vrmse / n};
        out.coarse[j] = {mc[j].rel_l2 / n, mc[j].correlation / n, mc[j].vrmse / n};
        out.e_hybrid[j] = eh[j] / n;
        out.e_ref[j] = er[j] / n;
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const fs::path base(out_dir);
        write_metrics_csv((base / "metrics_hybrid.csv").string(), out.times, out.hybrid);
        write_metrics_csv((base / "metrics_coarse.csv").string(), out.times, out.coarse);
        {
            auto f = open_out((base / "energy.csv").string(), std::ios::trunc);
            f << "time,e_hybrid,e_reference\n";
            for (std::size_t j = 0; j < used; ++j)
                f << fmt_double(out.times[j]) << "," << fmt_double(out.e_hybrid[j]) << ","
                  << fmt_double(out.e_ref[j]) << "\n";
        }
        if (!last_hybrid.data.empty()) {
            const GridField vh = velocity_grid(state_from_grid(last_hybrid, coarse_cfg.kind));
            const GridField vr = velocity_grid(state_from_grid(last_ref, coarse_cfg.kind));
            write_spectrum_csv((base / "spectrum_hybrid.csv").string(), energy_spectrum(vh));
            write_spectrum_csv((base / "spectrum_reference.csv").string(), energy_spectrum(vr));
            std::vector<int> lags;
            for (int l = 1; l <= first.extent[0] / 2; l *= 2) lags.push_back(l);
            write_structure_csv((base / "structure_hybrid.csv").string(),
                                structure_function_s3(vh, lags));
            write_structure_csv((base / "structure_reference.csv").string(),
                                structure_function_s3(vr, lags));
        }
    }
    return out;
}

OneStepEval evaluate_one_step(const Checkpoint& ckpt, const std::string& manifest,
                              int substeps) {
    ensure(substeps >= 1, "evaluation needs at least one coarse substep");
    ckpt.model.validate();
    Dataset ds = load_dataset(manifest);
    const GridField& first = ds.states.front().front();
    SolverConfig coarse_cfg = manifest_solver(ds.manifest, first.extent);
    coarse_cfg.length = first.length;
    const bool correction = ckpt.mode == TrainMode::Correction;

    ModelRuntime model(ckpt.model);
    OneStepEval out;
    for (std::size_t t = 0; t < ds.states.size(); ++t) {
        for (std::size_t j = 0; j + 1 < ds.states[t].size(); ++j) {
            const GridField& u = ds.states[t][j];
            const GridField& ref = ds.states[t][j + 1];
            const GridField star =
                !ds.coarse[t][j].data.empty()
                    ? ds.coarse[t][j]
                    : coarse_advance(u, coarse_cfg, substeps, ds.manifest.dt);
            const GridField pred = correction ? model.predict(ckpt.params, u, &star)
                                              : model.predict(ckpt.params, u, nullptr);
            out.model_err += error_metrics(ref, pred).rel_l2;
            out.coarse_err += error_metrics(ref, star).rel_l2;
            out.pairs += 1;
        }
    }
    ensure(out.pairs >= 1, "manifest holds no consecutive snapshot pairs");
    out.model_err /= out.pairs;
    out.coarse_err /= out.pairs;
    return out;
}

}  // namespace semflow
