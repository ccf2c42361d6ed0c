#pragma once

#include <string>
#include <vector>

#include "semflow/model/model.hpp"
#include "semflow/solver/solver.hpp"
#include "semflow/train/train.hpp"

namespace semflow::cli {

inline constexpr const char* kVersion = "semflow 0.1.0";

/// Everything the text config file and --key overrides can reach.  Paths and
/// per-run knobs (output directory, horizons, factors) are plain flags on
/// the subcommands instead.
struct Settings {
    std::string kind = "kolmogorov2d";  // selects solver + model defaults
    std::string preset = "kolmogorov2d";  // model architecture preset
    SolverConfig solver = SolverConfig::kolmogorov_2d();
    GenSpec gen;  // .solver/.out_dir filled at dispatch
    ModelConfig model = ModelConfig::kolmogorov_2d();
    TrainConfig train;  // .model/.out_dir/manifests filled at dispatch
};

/// One `--key value` or file `key = value` assignment.
struct Override {
    std::string key;
    std::string value;
    std::string where;  // "file.txt:12" or "flag --key"
};

/// Applies a config file and then flag overrides onto defaults.
/// Unknown keys, malformed lines, and type errors throw ValidationError
/// citing the offending location.
Settings load_settings(const std::string& config_path, const std::vector<Override>& flags);

/// Renders every known key with its effective value, section by section.
std::string render_settings(const Settings& s);

/// All registered keys ("section.name") for help text.
std::vector<std::string> known_keys();

}  // namespace semflow::cli
