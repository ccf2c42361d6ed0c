#include "settings.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "semflow/core/error.hpp"

namespace semflow::cli {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ValidationError(where + ": " + what);
}

double to_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) bad(where, "trailing characters in number '" + s + "'");
        return v;
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception&) {
        bad(where, "expected a number, got '" + s + "'");
    }
}

int to_int(const std::string& s, const std::string& where) {
    const double v = to_double(s, where);
    const int iv = static_cast<int>(v);
    if (static_cast<double>(iv) != v) bad(where, "expected an integer, got '" + s + "'");
    return iv;
}

std::uint64_t to_u64(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != s.size()) bad(where, "trailing characters in '" + s + "'");
        return v;
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception&) {
        bad(where, "expected an unsigned integer, got '" + s + "'");
    }
}

/// "256", "256x256", or "256x256x1"; single values repeat over the used axes.
std::array<int, 3> to_res(const std::string& s, int dim, const std::string& where) {
    std::array<int, 3> out{1, 1, 1};
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = s.find('x', pos);
        parts.push_back(s.substr(pos, next == std::string::npos ? next : next - pos));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    if (parts.size() == 1) {
        const int v = to_int(parts[0], where);
        for (int a = 0; a < dim; ++a) out[a] = v;
    } else if (parts.size() == 2 || parts.size() == 3) {
        for (std::size_t a = 0; a < parts.size(); ++a)
            out[a] = to_int(parts[a], where);
    } else {
        bad(where, "expected N, NxM, or NxMxK, got '" + s + "'");
    }
    return out;
}

std::string res_str(const std::array<int, 3>& r) {
    return std::to_string(r[0]) + "x" + std::to_string(r[1]) + "x" + std::to_string(r[2]);
}

void apply_kind(Settings& s, const std::string& v, const std::string& where) {
    if (v == "kolmogorov2d") {
        s.solver = SolverConfig::kolmogorov_2d();
        s.model = ModelConfig::kolmogorov_2d();
        s.preset = "kolmogorov2d";
        s.gen.record_res = {64, 64, 1};
    } else if (v == "isotropic3d") {
        s.solver = SolverConfig::isotropic_3d();
        s.model = ModelConfig::isotropic_3d();
        s.preset = "isotropic3d";
        s.gen.record_res = {32, 32, 32};
    } else {
        bad(where, "unknown kind '" + v + "' (expected kolmogorov2d or isotropic3d)");
    }
    s.kind = v;
}

void apply_preset(Settings& s, const std::string& v, const std::string& where) {
    if (v == "kolmogorov2d") {
        s.model = ModelConfig::kolmogorov_2d();
    } else if (v == "isotropic3d") {
        s.model = ModelConfig::isotropic_3d();
    } else if (v == "desk2d") {
        s.model = ModelConfig::desk_2d();
    } else {
        bad(where, "unknown preset '" + v +
                       "' (expected kolmogorov2d, isotropic3d, or desk2d)");
    }
    s.preset = v;
}

struct KeyEntry {
    std::string key;
    std::function<void(Settings&, const std::string&, const std::string&)> set;
    std::function<std::string(const Settings&)> get;
};

const std::vector<KeyEntry>& registry() {
    static const std::vector<KeyEntry> keys = [] {
        std::vector<KeyEntry> k;
        auto add = [&k](std::string key, auto set, auto get) {
            k.push_back({std::move(key), std::move(set), std::move(get)});
        };
        auto dbl = [&add](std::string key, auto field) {
            add(std::move(key),
                [field](Settings& s, const std::string& v, const std::string& w) {
                    field(s) = to_double(v, w);
                },
                [field](const Settings& s) { return fmt(field(const_cast<Settings&>(s))); });
        };
        auto num = [&add](std::string key, auto field) {
            add(std::move(key),
                [field](Settings& s, const std::string& v, const std::string& w) {
                    field(s) = to_int(v, w);
                },
                [field](const Settings& s) {
                    return std::to_string(field(const_cast<Settings&>(s)));
                });
        };

        // Top level -------------------------------------------------------
        add("kind", [](Settings& s, const std::string& v, const std::string& w) {
                apply_kind(s, v, w);
            },
            [](const Settings& s) { return s.kind; });
        add("preset", [](Settings& s, const std::string& v, const std::string& w) {
                apply_preset(s, v, w);
            },
            [](const Settings& s) { return s.preset; });

        // [solver] ----------------------------------------------------------
        add("solver.res",
            [](Settings& s, const std::string& v, const std::string& w) {
                s.solver.res = to_res(v, s.solver.dim(), w);
            },
            [](const Settings& s) { return res_str(s.solver.res); });
        add("solver.length",
            [](Settings& s, const std::string& v, const std::string& w) {
                const double L = to_double(v, w);
                if (L <= 0.0) bad(w, "domain length must be positive");
                for (int a = 0; a < s.solver.dim(); ++a) s.solver.length[a] = L;
            },
            [](const Settings& s) { return fmt(s.solver.length[0]); });
        dbl("solver.nu", [](Settings& s) -> double& { return s.solver.nu; });
        num("solver.forcing_k", [](Settings& s) -> int& { return s.solver.forcing_k; });
        dbl("solver.damping", [](Settings& s) -> double& { return s.solver.damping; });
        dbl("solver.p_in", [](Settings& s) -> double& { return s.solver.p_in; });
        dbl("solver.c_max", [](Settings& s) -> double& { return s.solver.c_max; });
        dbl("solver.dealias_coeff",
            [](Settings& s) -> double& { return s.solver.dealias_coeff; });
        num("solver.dealias_order",
            [](Settings& s) -> int& { return s.solver.dealias_order; });
        dbl("solver.burn_in", [](Settings& s) -> double& { return s.solver.burn_in; });
        dbl("solver.dt_record", [](Settings& s) -> double& { return s.solver.dt_record; });

        // [gen] -------------------------------------------------------------
        add("gen.record_res",
            [](Settings& s, const std::string& v, const std::string& w) {
                s.gen.record_res = to_res(v, s.solver.dim(), w);
            },
            [](const Settings& s) { return res_str(s.gen.record_res); });
        num("gen.coarse_substeps", [](Settings& s) -> int& { return s.gen.coarse_substeps; });
        num("gen.train_trajectories",
            [](Settings& s) -> int& { return s.gen.train_trajectories; });
        num("gen.test_trajectories",
            [](Settings& s) -> int& { return s.gen.test_trajectories; });
        dbl("gen.duration", [](Settings& s) -> double& { return s.gen.duration; });
        add("gen.seed",
            [](Settings& s, const std::string& v, const std::string& w) {
                s.gen.seed = to_u64(v, w);
            },
            [](const Settings& s) { return std::to_string(s.gen.seed); });
        add("gen.dtype",
            [](Settings& s, const std::string& v, const std::string& w) {
                if (v == "f32") s.gen.snapshot_dtype = Dtype::F32;
                else if (v == "f64") s.gen.snapshot_dtype = Dtype::F64;
                else bad(w, "expected f32 or f64, got '" + v + "'");
            },
            [](const Settings& s) {
                return s.gen.snapshot_dtype == Dtype::F32 ? "f32" : "f64";
            });

        // [model] -----------------------------------------------------------
        num("model.layers", [](Settings& s) -> int& { return s.model.layers; });
        num("model.hidden", [](Settings& s) -> int& { return s.model.hidden; });
        add("model.elems",
            [](Settings& s, const std::string& v, const std::string& w) {
                s.model.elems = to_res(v, s.model.dim, w);
            },
            [](const Settings& s) { return res_str(s.model.elems); });
        add("model.length",
            [](Settings& s, const std::string& v, const std::string& w) {
                const double L = to_double(v, w);
                if (L <= 0.0) bad(w, "domain length must be positive");
                for (int a = 0; a < s.model.dim; ++a) s.model.length[a] = L;
            },
            [](const Settings& s) { return fmt(s.model.length[0]); });
        num("model.sgs_modes", [](Settings& s) -> int& { return s.model.sgs_modes; });
        num("model.les_modes", [](Settings& s) -> int& { return s.model.les_modes; });
        add("model.basis",
            [](Settings& s, const std::string& v, const std::string& w) {
                if (v == "chebyshev") s.model.basis = BasisKind::Chebyshev;
                else if (v == "legendre") s.model.basis = BasisKind::Legendre;
                else bad(w, "expected chebyshev or legendre, got '" + v + "'");
            },
            [](const Settings& s) {
                return s.model.basis == BasisKind::Chebyshev ? "chebyshev" : "legendre";
            });
        num("model.kernel_modes_sgs",
            [](Settings& s) -> int& { return s.model.kernel_modes_sgs; });
        num("model.kernel_modes_les",
            [](Settings& s) -> int& { return s.model.kernel_modes_les; });
        dbl("model.window", [](Settings& s) -> double& { return s.model.window; });
        num("model.heads", [](Settings& s) -> int& { return s.model.heads; });
        num("model.head_dim", [](Settings& s) -> int& { return s.model.head_dim; });
        num("model.attn_window", [](Settings& s) -> int& { return s.model.attn_window; });
        dbl("model.alpha", [](Settings& s) -> double& { return s.model.alpha; });
        num("model.in_channels", [](Settings& s) -> int& { return s.model.in_channels; });
        add("model.streams",
            [](Settings& s, const std::string& v, const std::string& w) {
                if (v == "full") s.model.streams = StreamMode::Full;
                else if (v == "les") s.model.streams = StreamMode::LesOnly;
                else if (v == "sgs") s.model.streams = StreamMode::SgsOnly;
                else bad(w, "expected full, les, or sgs, got '" + v + "'");
            },
            [](const Settings& s) {
                switch (s.model.streams) {
                    case StreamMode::LesOnly: return std::string("les");
                    case StreamMode::SgsOnly: return std::string("sgs");
                    default: return std::string("full");
                }
            });

        // [train] -----------------------------------------------------------
        add("train.mode",
            [](Settings& s, const std::string& v, const std::string& w) {
                if (v == "direct") s.train.mode = TrainMode::Direct;
                else if (v == "correction") s.train.mode = TrainMode::Correction;
                else bad(w, "expected direct or correction, got '" + v + "'");
            },
            [](const Settings& s) {
                return s.train.mode == TrainMode::Direct ? "direct" : "correction";
            });
        dbl("train.lr", [](Settings& s) -> double& { return s.train.lr; });
        dbl("train.fine_tune_lr", [](Settings& s) -> double& { return s.train.fine_tune_lr; });
        num("train.batch", [](Settings& s) -> int& { return s.train.batch; });
        num("train.steps", [](Settings& s) -> int& { return s.train.steps; });
        num("train.fine_tune_steps",
            [](Settings& s) -> int& { return s.train.fine_tune_steps; });
        num("train.rollout_n", [](Settings& s) -> int& { return s.train.rollout_n; });
        num("train.coarse_substeps",
            [](Settings& s) -> int& { return s.train.coarse_substeps; });
        add("train.seed",
            [](Settings& s, const std::string& v, const std::string& w) {
                s.train.seed = to_u64(v, w);
            },
            [](const Settings& s) { return std::to_string(s.train.seed); });
        add("train.dtype",
            [](Settings& s, const std::string& v, const std::string& w) {
                if (v == "f32") s.train.dtype = Dtype::F32;
                else if (v == "f64") s.train.dtype = Dtype::F64;
                else bad(w, "expected f32 or f64, got '" + v + "'");
            },
            [](const Settings& s) { return s.train.dtype == Dtype::F32 ? "f32" : "f64"; });
        num("train.tape_chunk", [](Settings& s) -> int& { return s.train.tape_chunk; });
        num("train.eval_every", [](Settings& s) -> int& { return s.train.eval_every; });
        num("train.checkpoint_every",
            [](Settings& s) -> int& { return s.train.checkpoint_every; });
        dbl("train.clip_norm", [](Settings& s) -> double& { return s.train.clip_norm; });
        add("train.manifest",
            [](Settings& s, const std::string& v, const std::string&) {
                s.train.train_manifest = v;
            },
            [](const Settings& s) { return s.train.train_manifest; });
        add("train.test_manifest",
            [](Settings& s, const std::string& v, const std::string&) {
                s.train.test_manifest = v;
            },
            [](const Settings& s) { return s.train.test_manifest; });
        add("train.resume",
            [](Settings& s, const std::string& v, const std::string&) {
                s.train.resume_from = v;
            },
            [](const Settings& s) { return s.train.resume_from; });
        return k;
    }();
    return keys;
}

const KeyEntry* find_key(const std::string& key) {
    for (const auto& e : registry())
        if (e.key == key) return &e;
    return nullptr;
}

/// Resolves a possibly unqualified key ("nu" -> "solver.nu") uniquely.
const KeyEntry& resolve_key(const std::string& key, const std::string& where) {
    if (const KeyEntry* e = find_key(key)) return *e;
    std::vector<const KeyEntry*> hits;
    for (const auto& e : registry()) {
        const auto dot = e.key.find('.');
        if (dot != std::string::npos && e.key.substr(dot + 1) == key) hits.push_back(&e);
    }
    if (hits.size() == 1) return *hits.front();
    if (hits.empty()) bad(where, "unknown key '" + key + "'");
    std::string msg = "ambiguous key '" + key + "' (candidates:";
    for (const auto* e : hits) msg += " " + e->key;
    bad(where, msg + ")");
}

void apply(Settings& s, const Override& o) {
    const KeyEntry& e = resolve_key(o.key, o.where);
    e.set(s, o.value, o.where + " (key '" + e.key + "')");
}

std::vector<Override> parse_file(const std::string& path) {
    std::ifstream f(path);
    ensure(static_cast<bool>(f), "cannot open config file: " + path);
    std::vector<Override> out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string where = path + ":" + std::to_string(lineno);
        std::string t = trim(line);
        const auto hash = t.find('#');
        if (hash != std::string::npos) t = trim(t.substr(0, hash));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') bad(where, "unterminated section header '" + t + "'");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) bad(where, "empty section name");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) bad(where, "expected key = value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) bad(where, "missing key before '='");
        if (value.empty() || value.front() == '=')
            bad(where, "malformed value for key '" + key + "'");
        out.push_back({section.empty() ? key : section + "." + key, value, where});
    }
    return out;
}

}  // namespace

Settings load_settings(const std::string& config_path, const std::vector<Override>& flags) {
    Settings s;
    if (!config_path.empty())
        for (const Override& o : parse_file(config_path)) apply(s, o);
    for (const Override& o : flags) apply(s, o);
    return s;
}

std::string render_settings(const Settings& s) {
    std::ostringstream out;
    std::string section;
    for (const auto& e : registry()) {
        const auto dot = e.key.find('.');
        const std::string sec = dot == std::string::npos ? "" : e.key.substr(0, dot);
        const std::string name = dot == std::string::npos ? e.key : e.key.substr(dot + 1);
        if (sec != section) {
            out << "\n[" << sec << "]\n";
            section = sec;
        }
        out << name << " = " << e.get(s) << "\n";
    }
    return out.str();
}

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& e : registry()) out.push_back(e.key);
    return out;
}

}  // namespace semflow::cli
