#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semflow/basis/field.hpp"
#include "semflow/diagnostics/diagnostics.hpp"
#include "semflow/model/model.hpp"
#include "semflow/solver/solver.hpp"
#include "semflow/solver/taped2d.hpp"

namespace semflow {

enum class TrainMode { Direct, Correction };

// ---------------------------------------------------------------------------
// Snapshot files
// ---------------------------------------------------------------------------
// Binary layout: magic "EDYF", u32 version=1, u8 ndim, u8 channels,
// u8 dtype (0=f32, 1=f64), 1 pad byte, per-axis u32 extents, per-axis f64
// domain lengths, f64 time, then little-endian row-major channel-last data.

void write_snapshot(const std::string& path, const GridField& g,
                    Dtype dtype = Dtype::F64);
GridField read_snapshot(const std::string& path);

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------
// UTF-8 text: header lines `key=value` (nu, forcing, resolution, dt, t0,
// seed, split), then one `t=<time> file=<path> coarse=<path|->` line per
// snapshot, paths relative to the manifest's directory.  A drop in time
// starts the next trajectory.

struct ManifestEntry {
    double t = 0.0;
    std::string file;
    std::string coarse;  // empty when recorded as "-"
};

struct DatasetManifest {
    double nu = 0.0;
    std::string forcing;  // "kolmogorov2d:<k>:<damping>" or "isotropic3d:<p_in>"
    std::array<int, 3> resolution{1, 1, 1};  // reference solver grid
    double dt = 0.0;                         // snapshot spacing
    double t0 = 0.0;                         // burn-in time
    std::uint64_t seed = 0;
    std::string split;  // "train" or "test"
    std::vector<std::vector<ManifestEntry>> trajectories;

    void validate() const;  // strictly increasing times at dt spacing
};

void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

/// Reference solver settings encoded in a manifest's metadata, with the
/// resolution replaced by `res` (the snapshot grid for coarse stepping).
SolverConfig manifest_solver(const DatasetManifest& m, std::array<int, 3> res);

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GenSpec {
    SolverConfig solver;  // reference dynamics at the fine resolution
    std::array<int, 3> record_res{64, 64, 1};  // snapshot grid == coarse solver grid
    int coarse_substeps = 5;  // equal Strang substeps of one coarse advance
    int train_trajectories = 8;
    int test_trajectories = 2;
    double duration = 10.0;  // recorded seconds per trajectory
    std::uint64_t seed = 1;
    std::string out_dir;
    Dtype snapshot_dtype = Dtype::F64;

    void validate() const;
};

/// Per trajectory: seeded random start, burn-in, then recording every
/// cfg.dt_record; each recorded state also gets a coarse-solver companion
/// (one advance of length dt on the snapshot grid).  Deterministic: the same
/// spec rewrites byte-identical files.  Returns (train, test) manifests; the
/// manifest files land in out_dir as train_manifest.txt / test_manifest.txt.
std::pair<DatasetManifest, DatasetManifest> generate_dataset(const GenSpec& spec);

/// The deterministic coarse advance shared by generation, training and
/// evaluation: `substeps` equal Strang steps covering dt.
GridField coarse_advance(const GridField& u, const SolverConfig& coarse_cfg,
                         int substeps, double dt);

/// Everything a manifest points to, loaded into memory.
struct Dataset {
    DatasetManifest manifest;
    std::vector<std::vector<GridField>> states;  // [trajectory][snapshot]
    std::vector<std::vector<GridField>> coarse;  // companion of states[i][j] (may be empty)

    int pairs() const;  // consecutive (u_t, u_{t+dt}) pairs across trajectories
};

Dataset load_dataset(const std::string& manifest_path);

// ---------------------------------------------------------------------------
// Losses (tape-level; parameters enter through the bound leaves)
// ---------------------------------------------------------------------------

struct PairBatch {
    std::vector<const GridField*> u_t;
    std::vector<const GridField*> u_next;
    std::vector<const GridField*> u_star;  // coarse predictions; empty in direct mode
};

/// Mean over the batch of |prediction - u_next| / |u_next|, with
/// prediction = f(u_t) (direct) or u_star + alpha f(u_t, u_star) (correction).
/// Throws ValidationError on a zero-norm target.
Tensor loss_one_step(Tape& tape, const ModelRuntime& model, const BoundParams& bound,
                     const PairBatch& batch);

struct RolloutSample {
    const GridField* u0 = nullptr;
    std::vector<const GridField*> targets;  // u_1 .. u_N
};

/// (1/N) sum of n-step relative errors of the hybrid composition, with
/// gradients flowing through the on-tape coarse solver steps (2D correction
/// models only).  Blow-ups abort with the failing step index.
Tensor loss_rollout(Tape& tape, const ModelRuntime& model, const BoundParams& bound,
                    const TapedSolver2D& coarse, int substeps, double dt,
                    const std::vector<RolloutSample>& batch);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip_norm = 1.0;  // global-norm clip; <= 0 disables
    std::int64_t step = 0;
    std::vector<TensorData> m, v;  // F64, aligned with the parameter entries

    void init(const ModelParams& params);
};

struct AdamReport {
    bool skipped = false;     // non-finite gradient: nothing was touched
    double grad_norm = 0.0;   // pre-clip global norm
};

/// Standard bias-corrected update.  `grads` align with params.entries.
AdamReport adam_step(ModelParams& params, const std::vector<TensorData>& grads,
                     AdamState& state, double lr);

// ---------------------------------------------------------------------------
// Checkpoints (bit-identical round trip)
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelConfig model;
    TrainMode mode = TrainMode::Direct;
    std::int64_t step = 0;   // optimizer steps taken
    std::uint64_t seed = 0;  // training-run seed (batch sampling derives from it)
    ModelParams params;
    AdamState opt;  // m/v empty when no optimizer state is carried
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    TrainMode mode = TrainMode::Correction;
    ModelConfig model;

    std::string train_manifest;
    std::string test_manifest;  // optional: enables periodic held-out evaluation
    std::string out_dir;        // empty: keep everything in memory
    std::string resume_from;    // optional checkpoint to continue

    double lr = 1e-3;
    double fine_tune_lr = 1e-5;
    int batch = 16;
    int steps = 2000;           // phase 1: one-step loss
    int fine_tune_steps = 0;    // phase 2: rollout loss (2D correction only)
    int rollout_n = 5;
    int coarse_substeps = 5;
    std::uint64_t seed = 0;
    Dtype dtype = Dtype::F64;   // F32 opt-in for throughput; master weights stay F64
    int tape_chunk = 4;         // samples per tape; gradients accumulate on the host
    int eval_every = 0;
    int checkpoint_every = 0;
    double clip_norm = 1.0;

    void validate() const;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::string checkpoint_path;  // empty when out_dir is empty
    std::vector<double> loss_log;  // one entry per optimizer step, both phases
    std::vector<std::int64_t> eval_steps;
    std::vector<double> eval_loss;
};

/// Two-phase loop: one-step training, then (for 2D correction models with
/// fine_tune_steps > 0) rollout fine-tuning at the reduced rate.  Batch
/// order is a pure function of (seed, step), so resuming from a checkpoint
/// reproduces the continuation bit-identically.  A non-finite loss aborts
/// with NumericError after writing the last good parameters to out_dir.
TrainResult train(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalSeries {
    std::vector<double> times;  // offsets from the trajectory start
    std::vector<ErrorMetrics> hybrid;  // averaged over test trajectories
    std::vector<ErrorMetrics> coarse;  // raw coarse solver, same columns
    std::vector<double> e_hybrid, e_ref;  // kinetic energy per time
    int trajectories = 0;  // how many evaluated cleanly
};

/// Autoregressive hybrid rollout (coarse advance + correction each dt)
/// against every test trajectory, with the raw coarse solver evaluated
/// alongside.  Writes metric/energy/spectrum/structure CSVs into out_dir
/// (when non-empty).  Failures are skipped per trajectory.
EvalSeries evaluate(const Checkpoint& ckpt, const std::string& test_manifest,
                    const std::string& out_dir, int substeps = 5);

struct OneStepEval {
    double model_err = 0.0;   // mean relative one-step error of the prediction
    double coarse_err = 0.0;  // mean relative one-step error of the coarse solver
    int pairs = 0;
};

/// Non-autoregressive one-step errors over every (u_t, u_{t+dt}) pair of a
/// manifest; the comparison column for correction training.
OneStepEval evaluate_one_step(const Checkpoint& ckpt, const std::string& manifest,
                              int substeps = 5);

}  // namespace semflow
