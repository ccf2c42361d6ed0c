#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semflow/basis/field.hpp"
#include "semflow/basis/mesh.hpp"
#include "semflow/tensor/ops.hpp"

namespace semflow {

/// Which of the two feature streams the forward pass runs.
enum class StreamMode { Full, LesOnly, SgsOnly };

/// Architecture hyperparameters.  The model tokenizes a periodic grid field
/// onto a spectral-element mesh and runs two residual streams: a fine
/// "subgrid" stream updated by windowed spectral convolutions, and a coarse
/// "resolved" stream mixed globally by per-local-coordinate attention
/// between elements.
struct ModelConfig {
    int dim = 2;
    int layers = 10;  // L residual blocks in each stream
    int hidden = 32;  // d, width of both streams

    std::array<int, 3> elems{16, 16, 1};
    int sgs_modes = 24;  // M, collocation order of the fine mesh
    int les_modes = 4;   // k_max, collocation order of the coarse mesh
    BasisKind basis = BasisKind::Chebyshev;
    std::array<double, 3> length{2 * std::numbers::pi, 2 * std::numbers::pi, 1.0};

    int kernel_modes_sgs = 24;  // Fourier modes per axis in fine-stream kernels
    int kernel_modes_les = 4;   // ... in coarse-stream kernels
    double window = std::numbers::pi / 4;  // kernel support s, length units

    int heads = 8;
    int head_dim = 16;   // must be divisible by 2*dim for the rotary phases
    int attn_window = 0; // elements attended per axis; 0 = full attention

    double alpha = 1e-5;  // correction scale of the hybrid prediction
    StreamMode streams = StreamMode::Full;
    int in_channels = 1;  // physical channels of one state (vorticity 1, velocity 3)
    // Correction models lift the channel concatenation (u_t, u_star), so the
    // input projection is sized for 2*in_channels; direct models lift u_t
    // alone.  Fixed at initialization because it shapes w_in.
    bool correction_input = false;

    /// 2D defaults sized for the forced-shear-flow task.
    static ModelConfig kolmogorov_2d();
    /// 3D defaults sized for the isotropic-turbulence task.
    static ModelConfig isotropic_3d();
    /// Small 2D configuration for single-workstation training runs.
    static ModelConfig desk_2d();

    void validate() const;
};

/// Named parameter tensors in a stable order (the checkpoint / optimizer
/// order).  Values are stored in double precision; binding onto a tape
/// converts to the tape's dtype.
struct ModelParams {
    std::vector<std::pair<std::string, TensorData>> entries;

    const TensorData& at(std::string_view name) const;
    TensorData& at(std::string_view name);
    bool has(std::string_view name) const;
};

/// Deterministic initialization: convolution kernel coefficients and the two
/// output projections are uniform in [-1e-7, 1e-7]; other linear maps use
/// the fan-in rule (uniform +-1/sqrt(fan_in), zero bias); layer-norm gains
/// start at 1; the coarse-feature injection scale starts at 1.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Boolean element-to-element attention mask, row-major [H, H] with
/// H = prod(elems).  Element h attends to h' iff, on every axis, the
/// periodic offset lies in the window of exactly `window` elements
/// (floor(w/2) behind to ceil(w/2)-1 ahead; symmetric when w is odd).
/// window must satisfy 1 <= window <= elems[axis] on every used axis.
std::vector<std::uint8_t> attention_mask(int dim, std::array<int, 3> elems, int window);

/// Parameter leaves bound onto one tape, in ModelParams order.
struct BoundParams {
    std::vector<Tensor> leaves;
};

/// Precomputed geometry (convolution tables, basis transforms, rotary phase
/// tables, grid interpolation matrices) for one configuration, plus the
/// tape-level building blocks of the forward pass.
///
/// Tape-side fields use one canonical layout throughout:
///   grid tensors  [B, g1, g2, g3, C]           (trailing axes 1 in 2D)
///   mesh tensors  [B, H1, H2, H3, N1, N2, N3, C]
/// matching GridField / SemField host buffers element for element.
///
/// Parameter names: "w_in.weight|bias"; per layer l: "sgs<l>.conv.k<axis>",
/// "sgs<l>.ffn.w1|b1|w2|b2", "sgs<l>.inject"; "les<l>.q.k<axis>",
/// "les<l>.q.bias|ln_gain|ln_bias" (same for .k), "les<l>.v.k<axis>",
/// "les<l>.attn_out.weight|bias", "les<l>.post.k<axis>",
/// "les<l>.ffn.w1|b1|w2|b2"; and "w_sgs.weight|bias", "w_les.weight|bias".
class ModelRuntime {
public:
    explicit ModelRuntime(const ModelConfig& cfg);
    ~ModelRuntime();
    ModelRuntime(const ModelRuntime&) = delete;
    ModelRuntime& operator=(const ModelRuntime&) = delete;

    const ModelConfig& config() const;
    std::shared_ptr<const SemMesh> sgs_mesh() const;
    std::shared_ptr<const SemMesh> les_mesh() const;
    /// Parameter names in binding order (== init_params entry order).
    const std::vector<std::string>& param_names() const;

    BoundParams bind(Tape& tape, const ModelParams& params) const;
    Tensor param(const BoundParams& bound, std::string_view name) const;

    // --- building blocks (all shapes canonical) ---

    /// Periodic trigonometric interpolation of grid samples onto the mesh
    /// collocation points (`les` selects the coarse mesh).
    Tensor grid_to_sem(Tape& tape, Tensor grid, bool les = false) const;
    /// Piecewise-polynomial evaluation of a fine-mesh field on a grid.
    Tensor sem_to_grid(Tape& tape, Tensor x, std::array<int, 3> extent) const;

    /// Windowed spectral convolution, summed over axes.  `kernels` holds one
    /// tensor [m_k, 2, C_in, C_out] per used axis (cos / sin coefficient
    /// lanes); `les` selects the mesh the input lives on.
    Tensor sem_conv(Tape& tape, Tensor x, std::span<const Tensor> kernels,
                    bool les) const;

    /// Rotary phase rotation on a coarse-mesh field whose channels are
    /// (head, head_dim).  Requires head_dim % (2*dim) == 0.
    Tensor rope_rotate(Tape& tape, Tensor x) const;

    /// Per-local-coordinate multi-head attention across elements, using
    /// layer l's projection parameters and the configured window mask.
    Tensor sem_attn(Tape& tape, Tensor x, const BoundParams& bound, int layer) const;

    /// Fine-stream residual update: u + FFN(Conv(u + inject * upsample(u_les))).
    Tensor sgs_layer(Tape& tape, Tensor u, Tensor u_les, const BoundParams& bound,
                     int layer) const;
    /// Coarse-stream residual update: attention block then convolution+FFN block.
    Tensor les_layer(Tape& tape, Tensor u_les, const BoundParams& bound, int layer) const;

    /// Spectral coarsening of a fine-mesh field to the coarse mesh, and the
    /// exact polynomial embedding back.
    Tensor les_truncate(Tape& tape, Tensor x) const;
    Tensor les_upsample(Tape& tape, Tensor x) const;

    /// Full forward pass on grid tensors.  Without u_star: the direct map
    /// rendered at the input grid resolution.  With u_star: the hybrid
    /// correction u_star + alpha * f(concat(u, u_star)).  Throws
    /// NumericError if the output is not finite.
    Tensor forward(Tape& tape, const BoundParams& bound, Tensor u_grid,
                   std::optional<Tensor> u_star_grid) const;

    /// Host convenience: one prediction through a temporary tape.
    GridField predict(const ModelParams& params, const GridField& u_t,
                      const GridField* u_star, Dtype dtype = Dtype::F64) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace semflow
