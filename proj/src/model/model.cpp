#include "semflow/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "semflow/basis/polynomials.hpp"
#include "semflow/basis/quadrature.hpp"
#include "semflow/core/error.hpp"
#include "semflow/core/rng.hpp"

namespace semflow {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Small dense helpers (double, row-major)
// ---------------------------------------------------------------------------

std::vector<double> mat_mul(const std::vector<double>& a, int ra, int ca,
                            const std::vector<double>& b, int cb) {
    std::vector<double> out(static_cast<std::size_t>(ra) * cb, 0.0);
    for (int i = 0; i < ra; ++i)
        for (int k = 0; k < ca; ++k) {
            const double v = a[static_cast<std::size_t>(i) * ca + k];
            if (v == 0.0) continue;
            for (int j = 0; j < cb; ++j)
                out[static_cast<std::size_t>(i) * cb + j] +=
                    v * b[static_cast<std::size_t>(k) * cb + j];
        }
    return out;
}

// Mode-selection matrix [k x M]: keeps modal slots 0..k-2 and maps the upper
// interface hat (slot M-1) into slot k-1.
std::vector<double> mode_gather(int k, int M) {
    std::vector<double> B(static_cast<std::size_t>(k) * M, 0.0);
    for (int m = 0; m + 1 < k; ++m) B[static_cast<std::size_t>(m) * M + m] = 1.0;
    B[static_cast<std::size_t>(k - 1) * M + (M - 1)] = 1.0;
    return B;
}

std::vector<double> transpose(const std::vector<double>& a, int r, int c) {
    std::vector<double> out(a.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j) * r + i] = a[static_cast<std::size_t>(i) * c + j];
    return out;
}

// Periodic trigonometric cardinal function for n uniform samples, evaluated
// at phase offset `delta` (radians).  Even n treats the Nyquist mode as a
// cosine so real samples interpolate to real values.
double trig_cardinal(int n, double delta) {
    const double d = std::remainder(delta, kTwoPi);
    if (std::abs(d) < 1e-14) return 1.0;
    if (n % 2 == 0) return std::sin(0.5 * n * d) / (n * std::tan(0.5 * d));
    return std::sin(0.5 * n * d) / (n * std::sin(0.5 * d));
}

// Values of all nodal cardinal polynomials at local coordinate eta in [0,1].
void nodal_cardinal_all(const SemMesh& mesh, double eta, std::span<double> out) {
    const int M = mesh.modes;
    std::vector<double> phi(static_cast<std::size_t>(M));
    modal_basis_eval_all(mesh.kind, M, eta, phi);
    for (int p = 0; p < M; ++p) {
        double v = 0.0;
        for (int mu = 0; mu < M; ++mu)
            v += phi[static_cast<std::size_t>(mu)] *
                 mesh.vand_inv[static_cast<std::size_t>(mu) * M + p];
        out[static_cast<std::size_t>(p)] = v;
    }
}

// ---------------------------------------------------------------------------
// Convolution geometry
// ---------------------------------------------------------------------------

// For one mesh axis: neighbor-gather indices and the segment-integral table,
// laid out for ops::axis_apply as [m_out x m_in] with
//   out index (n*m_k + m)*2 + ri   (target node, kernel mode, cos/sin lane)
//   in  index (j+S)*M + p          (element offset, source node)
//   geo[out][in] = delta * Int_{window ∩ element j}
//                    trig(pi*m*(xi_n - j - eta)/sigma) * ell_p(eta) d eta
// with trig = cos for ri=0, sin for ri=1; the window is |x' - y| <= s/2
// around the target collocation point x'.
struct AxisConvPlan {
    int S = 0;
    std::vector<std::int64_t> gather;  // Ha * (2S+1) source element ids
    std::vector<double> geo;           // [M*m_k*2, (2S+1)*M]
};

AxisConvPlan build_axis_plan(const SemMesh& mesh, int axis, double s, int m_k) {
    AxisConvPlan plan;
    const int M = mesh.modes;
    const int Ha = mesh.elems[axis];
    const double delta = mesh.delta(axis);
    const double sigma = s / delta;
    plan.S = static_cast<int>(std::ceil(s / (2.0 * delta) - 1e-12));
    const int J = 2 * plan.S + 1;

    plan.gather.resize(static_cast<std::size_t>(Ha) * J);
    for (int h = 0; h < Ha; ++h)
        for (int j = -plan.S; j <= plan.S; ++j)
            plan.gather[static_cast<std::size_t>(h) * J + (j + plan.S)] =
                ((h + j) % Ha + Ha) % Ha;

    const std::size_t JM = static_cast<std::size_t>(J) * M;
    plan.geo.assign(static_cast<std::size_t>(M) * m_k * 2 * JM, 0.0);

    const QuadratureRule panel = quadrature_rule(BasisKind::Legendre, 20);
    std::vector<double> ell(static_cast<std::size_t>(M));

    for (int n = 0; n < M; ++n) {
        const double xi = mesh.rule.nodes[static_cast<std::size_t>(n)];
        for (int j = -plan.S; j <= plan.S; ++j) {
            const double lo = std::max(0.0, xi - j - sigma / 2.0);
            const double hi = std::min(1.0, xi - j + sigma / 2.0);
            if (hi <= lo + 1e-15) continue;
            const double phase =
                std::numbers::pi * std::max(1, m_k - 1) * (hi - lo) / sigma;
            const int panels = std::min(200, 1 + static_cast<int>(phase / 1.2));
            const double h_panel = (hi - lo) / panels;
            for (int pa = 0; pa < panels; ++pa) {
                const double a0 = lo + pa * h_panel;
                for (int q = 0; q < panel.size(); ++q) {
                    const double eta = a0 + h_panel * panel.nodes[static_cast<std::size_t>(q)];
                    const double w = delta * h_panel * panel.weights[static_cast<std::size_t>(q)];
                    nodal_cardinal_all(mesh, eta, ell);
                    for (int m = 0; m < m_k; ++m) {
                        const double theta = std::numbers::pi * m * (xi - j - eta) / sigma;
                        const double wc = w * std::cos(theta);
                        const double ws = w * std::sin(theta);
                        const std::size_t base_c =
                            ((static_cast<std::size_t>(n) * m_k + m) * 2 + 0) * JM +
                            static_cast<std::size_t>(j + plan.S) * M;
                        const std::size_t base_s = base_c + JM;
                        for (int p = 0; p < M; ++p) {
                            plan.geo[base_c + p] += wc * ell[static_cast<std::size_t>(p)];
                            plan.geo[base_s + p] += ws * ell[static_cast<std::size_t>(p)];
                        }
                    }
                }
            }
        }
    }
    return plan;
}

struct ConvPlan {
    int m_k = 0;
    std::array<AxisConvPlan, 3> axis;
};

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

enum class InitKind { Kernel, FanIn, Zero, One };

struct ParamSpec {
    std::string name;
    std::vector<std::int64_t> shape;
    InitKind init;
};

std::vector<ParamSpec> param_layout(const ModelConfig& c) {
    std::vector<ParamSpec> specs;
    const std::int64_t d = c.hidden;
    const std::int64_t c_att = static_cast<std::int64_t>(c.heads) * c.head_dim;
    const std::int64_t c_phys = c.in_channels;
    const std::int64_t lift_in = c_phys * (c.correction_input ? 2 : 1);
    auto push = [&](std::string name, std::vector<std::int64_t> shape, InitKind k) {
        specs.push_back({std::move(name), std::move(shape), k});
    };

    push("w_in.weight", {lift_in, d}, InitKind::FanIn);
    push("w_in.bias", {d}, InitKind::Zero);
    for (int l = 0; l < c.layers; ++l) {
        const std::string sgs = "sgs" + std::to_string(l);
        for (int a = 0; a < c.dim; ++a)
            push(sgs + ".conv.k" + std::to_string(a), {c.kernel_modes_sgs, 2, d, d},
                 InitKind::Kernel);
        push(sgs + ".ffn.w1", {d, d}, InitKind::FanIn);
        push(sgs + ".ffn.b1", {d}, InitKind::Zero);
        push(sgs + ".ffn.w2", {d, d}, InitKind::FanIn);
        push(sgs + ".ffn.b2", {d}, InitKind::Zero);
        push(sgs + ".inject", {1}, InitKind::One);

        const std::string les = "les" + std::to_string(l);
        for (const char* proj : {"q", "k"}) {
            for (int a = 0; a < c.dim; ++a)
                push(les + "." + proj + ".k" + std::to_string(a),
                     {c.kernel_modes_les, 2, d, c_att}, InitKind::Kernel);
            push(les + "." + proj + ".bias", {c_att}, InitKind::Zero);
            push(les + "." + proj + ".ln_gain", {c_att}, InitKind::One);
            push(les + "." + proj + ".ln_bias", {c_att}, InitKind::Zero);
        }
        for (int a = 0; a < c.dim; ++a)
            push(les + ".v.k" + std::to_string(a), {c.kernel_modes_les, 2, d, c_att},
                 InitKind::Kernel);
        push(les + ".attn_out.weight", {c_att, d}, InitKind::FanIn);
        push(les + ".attn_out.bias", {d}, InitKind::Zero);
        for (int a = 0; a < c.dim; ++a)
            push(les + ".post.k" + std::to_string(a), {c.kernel_modes_les, 2, d, d},
                 InitKind::Kernel);
        push(les + ".ffn.w1", {d, d}, InitKind::FanIn);
        push(les + ".ffn.b1", {d}, InitKind::Zero);
        push(les + ".ffn.w2", {d, d}, InitKind::FanIn);
        push(les + ".ffn.b2", {d}, InitKind::Zero);
    }
    push("w_sgs.weight", {d, c_phys}, InitKind::Kernel);
    push("w_sgs.bias", {c_phys}, InitKind::Zero);
    push("w_les.weight", {d, c_phys}, InitKind::Kernel);
    push("w_les.bias", {c_phys}, InitKind::Zero);
    return specs;
}

// ---------------------------------------------------------------------------
// Tape helpers
// ---------------------------------------------------------------------------

Tensor pointwise_linear(Tensor x, Tensor w, Tensor b) {
    const auto sh = x.shape();
    std::int64_t rows = 1;
    for (std::size_t i = 0; i + 1 < sh.size(); ++i) rows *= sh[i];
    Tensor y = ops::bias_add(ops::matmul(ops::reshape(x, {rows, sh.back()}), w), b);
    std::vector<std::int64_t> out_shape(sh.begin(), sh.end() - 1);
    out_shape.push_back(w.shape()[1]);
    return ops::reshape(y, std::move(out_shape));
}

Tensor ffn2(Tensor x, Tensor w1, Tensor b1, Tensor w2, Tensor b2) {
    return pointwise_linear(ops::gelu(pointwise_linear(x, w1, b1)), w2, b2);
}

// Multiplies a whole tensor by a single-element parameter, keeping the scale
// trainable.
Tensor scalar_mul(Tensor x, Tensor s) {
    const auto sh = x.shape();
    std::int64_t n = 1;
    for (auto dd : sh) n *= dd;
    Tensor y = ops::matmul(ops::reshape(x, {n, 1}), ops::reshape(s, {1, 1}));
    return ops::reshape(y, std::vector<std::int64_t>(sh.begin(), sh.end()));
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

ModelConfig ModelConfig::kolmogorov_2d() {
    ModelConfig c;  // struct defaults are the 2D reference settings
    c.correction_input = true;
    return c;
}

ModelConfig ModelConfig::isotropic_3d() {
    ModelConfig c;
    c.dim = 3;
    c.layers = 4;
    c.elems = {8, 8, 8};
    c.sgs_modes = 13;
    c.les_modes = 5;
    c.length = {kTwoPi, kTwoPi, kTwoPi};
    c.kernel_modes_sgs = 13;
    c.kernel_modes_les = 5;
    c.heads = 4;
    c.head_dim = 32;
    c.in_channels = 3;
    c.correction_input = true;
    return c;
}

ModelConfig ModelConfig::desk_2d() {
    ModelConfig c;
    c.layers = 6;
    c.elems = {8, 8, 1};
    c.sgs_modes = 12;
    c.les_modes = 4;
    c.kernel_modes_sgs = 4;
    c.kernel_modes_les = 4;
    c.heads = 8;
    c.head_dim = 16;
    c.alpha = 1e-2;
    c.correction_input = true;
    return c;
}

void ModelConfig::validate() const {
    ensure(dim == 2 || dim == 3, "model dim must be 2 or 3");
    ensure(layers >= 1, "model needs at least one layer");
    ensure(hidden >= 1, "hidden width must be positive");
    for (int a = 0; a < dim; ++a) {
        ensure(elems[a] >= 1, "element count must be positive");
        ensure(length[a] > 0.0, "domain length must be positive");
        ensure(window <= length[a] + 1e-12,
               "kernel window must not exceed the domain period");
    }
    for (int a = dim; a < 3; ++a)
        ensure(elems[a] == 1, "unused axes must have one element");
    ensure(sgs_modes >= 3, "fine mesh needs at least 3 modes");
    ensure(les_modes >= 3, "coarse mesh needs at least 3 modes");
    ensure(les_modes < sgs_modes, "coarse order must be below the fine order");
    ensure(kernel_modes_sgs >= 1 && kernel_modes_les >= 1,
           "kernels need at least one mode");
    ensure(window > 0.0, "kernel window must be positive");
    ensure(heads >= 1 && head_dim >= 2 && head_dim % 2 == 0,
           "attention needs >= 1 head with an even head width");
    if (attn_window != 0) {
        for (int a = 0; a < dim; ++a)
            ensure(attn_window >= 1 && attn_window <= elems[a],
                   "attention window must lie in [1, elements-per-axis]");
    }
    ensure(alpha > 0.0, "correction scale must be positive");
    ensure(in_channels >= 1, "model needs at least one input channel");
}

// ---------------------------------------------------------------------------
// ModelParams / init
// ---------------------------------------------------------------------------

const TensorData& ModelParams::at(std::string_view name) const {
    for (const auto& e : entries)
        if (e.first == name) return e.second;
    throw ValidationError("unknown parameter: " + std::string(name));
}

TensorData& ModelParams::at(std::string_view name) {
    for (auto& e : entries)
        if (e.first == name) return e.second;
    throw ValidationError("unknown parameter: " + std::string(name));
}

bool ModelParams::has(std::string_view name) const {
    for (const auto& e : entries)
        if (e.first == name) return true;
    return false;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams params;
    Rng rng(seed);
    for (const ParamSpec& spec : param_layout(cfg)) {
        TensorData v = TensorData::zeros(Dtype::F64, spec.shape);
        auto vals = v.span<double>();
        switch (spec.init) {
            case InitKind::Kernel:
                for (double& x : vals) x = rng.uniform(-1e-7, 1e-7);
                break;
            case InitKind::FanIn: {
                const double b = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
                for (double& x : vals) x = rng.uniform(-b, b);
                break;
            }
            case InitKind::Zero:
                break;
            case InitKind::One:
                for (double& x : vals) x = 1.0;
                break;
        }
        params.entries.emplace_back(spec.name, std::move(v));
    }
    return params;
}

// ---------------------------------------------------------------------------
// Attention mask
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> attention_mask(int dim, std::array<int, 3> elems, int window) {
    ensure(dim == 2 || dim == 3, "mask dim must be 2 or 3");
    for (int a = dim; a < 3; ++a) elems[a] = 1;
    const int H = elems[0] * elems[1] * elems[2];
    ensure(window >= 1, "attention window must be at least 1");
    for (int a = 0; a < dim; ++a)
        ensure(window <= elems[a], "attention window exceeds the element count");

    const int behind = window / 2;           // elements visible behind...
    const int ahead = (window + 1) / 2 - 1;  // ...and ahead (asymmetric when even)
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * H, 0);
    auto coords = [&](int h, std::array<int, 3>& c) {
        c[2] = h % elems[2];
        c[1] = (h / elems[2]) % elems[1];
        c[0] = h / (elems[1] * elems[2]);
    };
    std::array<int, 3> a{}, b{};
    for (int h = 0; h < H; ++h) {
        coords(h, a);
        for (int g = 0; g < H; ++g) {
            coords(g, b);
            bool ok = true;
            for (int ax = 0; ax < dim && ok; ++ax) {
                const int n = elems[ax];
                const int fwd = ((b[ax] - a[ax]) % n + n) % n;  // periodic offset ahead
                ok = fwd <= ahead || fwd >= n - behind;
            }
            mask[static_cast<std::size_t>(h) * H + g] = ok ? 1 : 0;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Runtime impl
// ---------------------------------------------------------------------------

struct ModelRuntime::Impl {
    ModelConfig cfg;
    std::shared_ptr<const SemMesh> sgs;
    std::shared_ptr<const SemMesh> les;
    ConvPlan sgs_plan;
    ConvPlan les_plan;
    std::vector<double> trunc_mat;  // [k x M] nodal fine -> nodal coarse, any axis
    std::vector<double> up_mat;     // [M x k] nodal coarse -> nodal fine, any axis
    std::vector<ParamSpec> specs;
    std::vector<std::string> names;

    bool rope_ok = false;
    std::vector<double> rope_cos;  // [H*P, heads*head_dim/2] on the coarse mesh
    std::vector<double> rope_sin;

    std::vector<std::uint8_t> mask;  // [H, H] when attn_window > 0

    struct GridMats {
        std::array<std::vector<double>, 3> to_sem;   // [(Ha*M) x g_a]
        std::array<std::vector<double>, 3> to_grid;  // [g_a x (Ha*M)]
    };
    mutable std::mutex cache_mu;
    mutable std::map<std::pair<bool, std::array<int, 3>>, GridMats> grid_cache;
    mutable std::map<std::int64_t, std::pair<TensorData, TensorData>> rope_cache;

    const SemMesh& mesh(bool les_mesh) const { return les_mesh ? *les : *sgs; }
    const ConvPlan& plan(bool les_mesh) const { return les_mesh ? les_plan : sgs_plan; }

    Tensor find(const BoundParams& bound, std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return bound.leaves[i];
        throw ValidationError("unknown parameter: " + std::string(name));
    }

    const GridMats& grid_mats(bool les_mesh, std::array<int, 3> extent) const;
    std::pair<const TensorData*, const TensorData*> rope_tables(std::int64_t batch) const;

    Tensor conv_axis(Tensor x, const AxisConvPlan& ap, Tensor kernel, int axis,
                     int m_k) const;
    Tensor conv(Tensor x, std::span<const Tensor> kernels, bool les_mesh) const;
    Tensor apply_rope(Tensor x) const;
    Tensor attn_impl(Tensor x, const BoundParams& bound, int layer,
                     const std::optional<Tensor>& mask_add) const;
    Tensor les_block(Tensor x, const BoundParams& bound, int layer,
                     const std::optional<Tensor>& mask_add) const;
    Tensor sgs_block(Tensor u, Tensor u_les, const BoundParams& bound, int layer) const;
    Tensor truncate(Tensor x) const;
    Tensor upsample(Tensor x) const;
    Tensor mask_tile(Tape& t, std::int64_t tiles) const;
};

// Per-axis windowed convolution: gather neighbor elements, contract
// (offset, source node) against the segment-integral table, then contract
// (mode, trig lane, input channel) against the kernel coefficients.
Tensor ModelRuntime::Impl::conv_axis(Tensor x, const AxisConvPlan& ap, Tensor kernel,
                                     int axis, int m_k) const {
    const auto sh = x.shape();  // [B, H1, H2, H3, N1, N2, N3, C]
    const std::int64_t C = sh[7];
    const std::int64_t M = sh[static_cast<std::size_t>(4 + axis)];
    const std::int64_t J = 2 * ap.S + 1;

    Tensor g = ops::index_select(x, 1 + axis, ap.gather);
    std::vector<std::int64_t> s9(sh.begin(), sh.end());
    s9.insert(s9.begin() + 2 + axis, J);
    g = ops::reshape(g, s9);
    // rank-9 axis positions: B=0; H_i at 1+i (i<=axis) / 2+i (i>axis); J at
    // 2+axis; N_i at 5+i; C at 8.
    auto hpos = [&](int i) { return i <= axis ? 1 + i : 2 + i; };
    std::vector<int> perm{0, hpos(0), hpos(1), hpos(2)};
    for (int i = 0; i < 3; ++i)
        if (i != axis) perm.push_back(5 + i);
    perm.push_back(8);
    perm.push_back(2 + axis);
    perm.push_back(5 + axis);
    g = ops::permute(g, perm);

    std::int64_t rows = 1;
    const auto gs = g.shape();
    for (std::size_t i = 0; i + 2 < gs.size(); ++i) rows *= gs[i];
    g = ops::reshape(g, {rows, J * M});
    g = ops::axis_apply(g, 1, ap.geo, static_cast<int>(M) * m_k * 2);

    // [B, H1, H2, H3, No1, No2, C, (Na, m, ri)] -> canonical node order with
    // (m, ri) ahead of C, then contract the kernel.
    std::vector<std::int64_t> s10{sh[0], sh[1], sh[2], sh[3]};
    for (int i = 0; i < 3; ++i)
        if (i != axis) s10.push_back(sh[static_cast<std::size_t>(4 + i)]);
    s10.push_back(C);
    s10.push_back(M);
    s10.push_back(m_k);
    s10.push_back(2);
    g = ops::reshape(g, s10);
    std::array<int, 3> npos{};
    int next_other = 4;
    for (int i = 0; i < 3; ++i)
        npos[static_cast<std::size_t>(i)] = (i == axis) ? 7 : next_other++;
    g = ops::permute(g, {0, 1, 2, 3, npos[0], npos[1], npos[2], 8, 9, 6});

    const std::int64_t points = sh[0] * sh[1] * sh[2] * sh[3] * sh[4] * sh[5] * sh[6];
    g = ops::reshape(g, {points, static_cast<std::int64_t>(m_k) * 2 * C});

    const std::int64_t c_out = kernel.shape()[3];
    g = ops::matmul(g, ops::reshape(kernel, {static_cast<std::int64_t>(m_k) * 2 * C, c_out}));
    std::vector<std::int64_t> out_shape(sh.begin(), sh.end());
    out_shape[7] = c_out;
    return ops::reshape(g, out_shape);
}

Tensor ModelRuntime::Impl::conv(Tensor x, std::span<const Tensor> kernels,
                                bool les_mesh) const {
    const ConvPlan& p = plan(les_mesh);
    ensure(static_cast<int>(kernels.size()) == cfg.dim,
           "windowed convolution needs one kernel per axis");
    Tensor out;
    for (int a = 0; a < cfg.dim; ++a) {
        Tensor part = conv_axis(x, p.axis[static_cast<std::size_t>(a)],
                                kernels[static_cast<std::size_t>(a)], a, p.m_k);
        out = a == 0 ? part : ops::add(out, part);
    }
    return out;
}

const ModelRuntime::Impl::GridMats& ModelRuntime::Impl::grid_mats(
    bool les_mesh, std::array<int, 3> extent) const {
    std::scoped_lock lock(cache_mu);
    auto key = std::make_pair(les_mesh, extent);
    auto it = grid_cache.find(key);
    if (it != grid_cache.end()) return it->second;

    const SemMesh& m = mesh(les_mesh);
    GridMats mats;
    for (int a = 0; a < m.dim; ++a) {
        const int g = extent[static_cast<std::size_t>(a)];
        ensure(g >= 2, "grid extent must be at least 2 on every used axis");
        const int M = m.modes, Ha = m.elems[a];
        const double L = m.length[a];
        auto& to_sem = mats.to_sem[static_cast<std::size_t>(a)];
        to_sem.assign(static_cast<std::size_t>(Ha) * M * g, 0.0);
        for (int h = 0; h < Ha; ++h)
            for (int n = 0; n < M; ++n) {
                const double x = m.node_coord(a, h, n);
                for (int i = 0; i < g; ++i) {
                    const double phase = kTwoPi * (x / L - static_cast<double>(i) / g);
                    to_sem[(static_cast<std::size_t>(h) * M + n) * g + i] =
                        trig_cardinal(g, phase);
                }
            }
        auto& to_grid = mats.to_grid[static_cast<std::size_t>(a)];
        to_grid.assign(static_cast<std::size_t>(g) * Ha * M, 0.0);
        std::vector<double> ell(static_cast<std::size_t>(M));
        const double delta = m.delta(a);
        for (int i = 0; i < g; ++i) {
            const double x = static_cast<double>(i) * L / g;
            int h = std::clamp(static_cast<int>(std::floor(x / delta)), 0, Ha - 1);
            double eta = x / delta - h;
            if (eta > 1.0 && h + 1 < Ha) {
                ++h;
                eta -= 1.0;
            }
            nodal_cardinal_all(m, eta, ell);
            for (int p = 0; p < M; ++p)
                to_grid[static_cast<std::size_t>(i) * Ha * M +
                        static_cast<std::size_t>(h) * M + p] = ell[static_cast<std::size_t>(p)];
        }
    }
    return grid_cache.emplace(key, std::move(mats)).first->second;
}

std::pair<const TensorData*, const TensorData*> ModelRuntime::Impl::rope_tables(
    std::int64_t batch) const {
    std::scoped_lock lock(cache_mu);
    auto it = rope_cache.find(batch);
    if (it == rope_cache.end()) {
        const std::int64_t half = static_cast<std::int64_t>(cfg.heads) * cfg.head_dim / 2;
        const std::int64_t rows = static_cast<std::int64_t>(rope_cos.size()) / half;
        std::vector<double> c(static_cast<std::size_t>(batch) * rope_cos.size());
        std::vector<double> s(c.size());
        for (std::int64_t b = 0; b < batch; ++b) {
            std::copy(rope_cos.begin(), rope_cos.end(),
                      c.begin() + static_cast<std::ptrdiff_t>(b * rows * half));
            std::copy(rope_sin.begin(), rope_sin.end(),
                      s.begin() + static_cast<std::ptrdiff_t>(b * rows * half));
        }
        TensorData ct = TensorData::from(Dtype::F64, {batch * rows, half}, c);
        TensorData st = TensorData::from(Dtype::F64, {batch * rows, half}, s);
        it = rope_cache.emplace(batch, std::make_pair(std::move(ct), std::move(st))).first;
    }
    return {&it->second.first, &it->second.second};
}

Tensor ModelRuntime::Impl::apply_rope(Tensor x) const {
    ensure(rope_ok,
           "rotary phases need head_dim divisible by 2*dim; adjust the head width");
    const auto sh = x.shape();
    const std::int64_t C = sh.back();
    ensure(C == static_cast<std::int64_t>(cfg.heads) * cfg.head_dim,
           "rotary phases expect (heads * head_dim) channels");
    std::int64_t rows = 1;
    for (std::size_t i = 0; i + 1 < sh.size(); ++i) rows *= sh[i];
    auto [ct, st] = rope_tables(sh[0]);
    Tensor y = ops::rope(ops::reshape(x, {rows, C}), *ct, *st);
    return ops::reshape(y, std::vector<std::int64_t>(sh.begin(), sh.end()));
}

Tensor ModelRuntime::Impl::mask_tile(Tape& t, std::int64_t tiles) const {
    const std::int64_t H = static_cast<std::int64_t>(les->n_elems());
    std::vector<double> vals(static_cast<std::size_t>(tiles) * H * H);
    for (std::int64_t b = 0; b < tiles; ++b)
        for (std::int64_t i = 0; i < H * H; ++i)
            vals[static_cast<std::size_t>(b * H * H + i)] =
                mask[static_cast<std::size_t>(i)] ? 0.0 : -1e30;
    return t.constant(TensorData::from(t.dtype(), {tiles, H, H}, vals));
}

Tensor ModelRuntime::Impl::attn_impl(Tensor x, const BoundParams& bound, int layer,
                                     const std::optional<Tensor>& mask_add) const {
    const std::string base = "les" + std::to_string(layer);
    auto kernels = [&](const char* proj) {
        std::vector<Tensor> ks;
        for (int a = 0; a < cfg.dim; ++a)
            ks.push_back(find(bound, base + "." + proj + ".k" + std::to_string(a)));
        return ks;
    };

    Tensor q = ops::bias_add(conv(x, kernels("q"), true), find(bound, base + ".q.bias"));
    Tensor k = ops::bias_add(conv(x, kernels("k"), true), find(bound, base + ".k.bias"));
    Tensor v = conv(x, kernels("v"), true);
    q = ops::layer_norm_lastaxis(q, find(bound, base + ".q.ln_gain"),
                                 find(bound, base + ".q.ln_bias"), 1e-5);
    k = ops::layer_norm_lastaxis(k, find(bound, base + ".k.ln_gain"),
                                 find(bound, base + ".k.ln_bias"), 1e-5);
    q = apply_rope(q);
    k = apply_rope(k);

    const auto sh = x.shape();
    const std::int64_t B = sh[0];
    const std::int64_t Hf = sh[1] * sh[2] * sh[3];
    const std::int64_t Pf = sh[4] * sh[5] * sh[6];
    const std::int64_t nh = cfg.heads, dh = cfg.head_dim;
    auto heads_first = [&](Tensor z) {
        z = ops::reshape(z, {B, Hf, Pf, nh, dh});
        z = ops::permute(z, {0, 2, 3, 1, 4});
        return ops::reshape(z, {B * Pf * nh, Hf, dh});
    };
    Tensor qb = heads_first(q), kb = heads_first(k), vb = heads_first(v);

    Tensor scores = ops::scale(ops::bmm(qb, kb, false, true),
                               1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask_add) scores = ops::add(scores, *mask_add);
    Tensor ctx = ops::bmm(ops::softmax_lastaxis(scores), vb);

    ctx = ops::reshape(ctx, {B, Pf, nh, Hf, dh});
    ctx = ops::permute(ctx, {0, 3, 1, 2, 4});
    std::vector<std::int64_t> cs(sh.begin(), sh.end());
    cs[7] = nh * dh;
    ctx = ops::reshape(ctx, cs);
    return pointwise_linear(ctx, find(bound, base + ".attn_out.weight"),
                            find(bound, base + ".attn_out.bias"));
}

Tensor ModelRuntime::Impl::les_block(Tensor x, const BoundParams& bound, int layer,
                                     const std::optional<Tensor>& mask_add) const {
    const std::string base = "les" + std::to_string(layer);
    Tensor x1 = ops::add(x, attn_impl(x, bound, layer, mask_add));
    std::vector<Tensor> ks;
    for (int a = 0; a < cfg.dim; ++a)
        ks.push_back(find(bound, base + ".post.k" + std::to_string(a)));
    Tensor c = conv(x1, ks, true);
    Tensor f = ffn2(c, find(bound, base + ".ffn.w1"), find(bound, base + ".ffn.b1"),
                    find(bound, base + ".ffn.w2"), find(bound, base + ".ffn.b2"));
    return ops::add(x1, f);
}

Tensor ModelRuntime::Impl::sgs_block(Tensor u, Tensor u_les, const BoundParams& bound,
                                     int layer) const {
    const std::string base = "sgs" + std::to_string(layer);
    std::vector<Tensor> ks;
    for (int a = 0; a < cfg.dim; ++a)
        ks.push_back(find(bound, base + ".conv.k" + std::to_string(a)));
    Tensor inj = scalar_mul(upsample(u_les), find(bound, base + ".inject"));
    Tensor c = conv(ops::add(u, inj), ks, false);
    Tensor f = ffn2(c, find(bound, base + ".ffn.w1"), find(bound, base + ".ffn.b1"),
                    find(bound, base + ".ffn.w2"), find(bound, base + ".ffn.b2"));
    return ops::add(u, f);
}

Tensor ModelRuntime::Impl::truncate(Tensor x) const {
    Tensor y = x;
    for (int a = 0; a < cfg.dim; ++a)
        y = ops::axis_apply(y, 4 + a, trunc_mat, cfg.les_modes);
    return y;
}

Tensor ModelRuntime::Impl::upsample(Tensor x) const {
    Tensor y = x;
    for (int a = 0; a < cfg.dim; ++a)
        y = ops::axis_apply(y, 4 + a, up_mat, cfg.sgs_modes);
    return y;
}

// ---------------------------------------------------------------------------
// Runtime public surface
// ---------------------------------------------------------------------------

ModelRuntime::ModelRuntime(const ModelConfig& cfg) : impl_(std::make_unique<Impl>()) {
    cfg.validate();
    impl_->cfg = cfg;
    impl_->sgs = make_sem_mesh(cfg.dim, cfg.basis, cfg.elems, cfg.sgs_modes, cfg.length);
    impl_->les = make_sem_mesh(cfg.dim, cfg.basis, cfg.elems, cfg.les_modes, cfg.length);

    impl_->sgs_plan.m_k = cfg.kernel_modes_sgs;
    impl_->les_plan.m_k = cfg.kernel_modes_les;
    for (int a = 0; a < cfg.dim; ++a) {
        impl_->sgs_plan.axis[static_cast<std::size_t>(a)] =
            build_axis_plan(*impl_->sgs, a, cfg.window, cfg.kernel_modes_sgs);
        impl_->les_plan.axis[static_cast<std::size_t>(a)] =
            build_axis_plan(*impl_->les, a, cfg.window, cfg.kernel_modes_les);
    }

    const int M = cfg.sgs_modes, k = cfg.les_modes;
    const std::vector<double> gather = mode_gather(k, M);
    // nodal fine -> modal fine -> kept modes -> nodal coarse, fused per axis
    std::vector<double> gm = mat_mul(gather, k, M, impl_->sgs->vand_inv, M);
    impl_->trunc_mat = mat_mul(impl_->les->vand, k, k, gm, M);
    // nodal coarse -> modal coarse -> embedded fine modes -> nodal fine
    std::vector<double> em = mat_mul(transpose(gather, k, M), M, k, impl_->les->vand_inv, k);
    impl_->up_mat = mat_mul(impl_->sgs->vand, M, M, em, k);

    impl_->specs = param_layout(cfg);
    for (const auto& s : impl_->specs) impl_->names.push_back(s.name);

    // Rotary phase tables on the coarse mesh: each head's channel pairs split
    // into one frequency group per axis; integer frequencies keep the
    // rotations 2*pi-periodic.
    impl_->rope_ok = cfg.head_dim % (2 * cfg.dim) == 0;
    if (impl_->rope_ok) {
        const SemMesh& lm = *impl_->les;
        const int pairs_per_head = cfg.head_dim / 2;
        const int group = cfg.head_dim / (2 * cfg.dim);
        const std::int64_t pairs = static_cast<std::int64_t>(cfg.heads) * pairs_per_head;
        const std::int64_t rows =
            static_cast<std::int64_t>(lm.n_elems()) * lm.nodes_per_elem();
        impl_->rope_cos.resize(static_cast<std::size_t>(rows * pairs));
        impl_->rope_sin.resize(static_cast<std::size_t>(rows * pairs));
        std::size_t r = 0;
        std::array<int, 3> h{}, n{};
        const std::array<int, 3> nmax{lm.dim > 0 ? lm.modes : 1,
                                      lm.dim > 1 ? lm.modes : 1,
                                      lm.dim > 2 ? lm.modes : 1};
        for (h[0] = 0; h[0] < lm.elems[0]; ++h[0])
            for (h[1] = 0; h[1] < lm.elems[1]; ++h[1])
                for (h[2] = 0; h[2] < lm.elems[2]; ++h[2])
                    for (n[0] = 0; n[0] < nmax[0]; ++n[0])
                        for (n[1] = 0; n[1] < nmax[1]; ++n[1])
                            for (n[2] = 0; n[2] < nmax[2]; ++n[2], ++r)
                                for (std::int64_t pi = 0; pi < pairs; ++pi) {
                                    const int q = static_cast<int>(pi) % pairs_per_head;
                                    const int axis = q / group;
                                    const int freq = q % group + 1;
                                    const double x = lm.node_coord(
                                        axis, h[static_cast<std::size_t>(axis)],
                                        n[static_cast<std::size_t>(axis)]);
                                    const std::size_t at =
                                        r * static_cast<std::size_t>(pairs) +
                                        static_cast<std::size_t>(pi);
                                    impl_->rope_cos[at] = std::cos(freq * x);
                                    impl_->rope_sin[at] = std::sin(freq * x);
                                }
    }

    if (cfg.attn_window > 0)
        impl_->mask = attention_mask(cfg.dim, cfg.elems, cfg.attn_window);
}

ModelRuntime::~ModelRuntime() = default;

const ModelConfig& ModelRuntime::config() const { return impl_->cfg; }
std::shared_ptr<const SemMesh> ModelRuntime::sgs_mesh() const { return impl_->sgs; }
std::shared_ptr<const SemMesh> ModelRuntime::les_mesh() const { return impl_->les; }
const std::vector<std::string>& ModelRuntime::param_names() const { return impl_->names; }

BoundParams ModelRuntime::bind(Tape& tape, const ModelParams& params) const {
    ensure(params.entries.size() == impl_->specs.size(),
           "parameter set does not match the model configuration");
    BoundParams bound;
    bound.leaves.reserve(params.entries.size());
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
        const auto& [name, value] = params.entries[i];
        ensure(name == impl_->specs[i].name, "parameter order mismatch at " + name);
        ensure(value.shape == impl_->specs[i].shape, "parameter shape mismatch at " + name);
        bound.leaves.push_back(
            tape.leaf(TensorData::from(tape.dtype(), value.shape, value.to_doubles())));
    }
    return bound;
}

Tensor ModelRuntime::param(const BoundParams& bound, std::string_view name) const {
    return impl_->find(bound, name);
}

Tensor ModelRuntime::grid_to_sem(Tape&, Tensor grid, bool les) const {
    const SemMesh& m = impl_->mesh(les);
    const auto sh = grid.shape();
    ensure(sh.size() == 5, "grid tensors are [B, g1, g2, g3, C]");
    std::array<int, 3> extent{static_cast<int>(sh[1]), static_cast<int>(sh[2]),
                              static_cast<int>(sh[3])};
    for (int a = m.dim; a < 3; ++a)
        ensure(extent[static_cast<std::size_t>(a)] == 1,
               "unused grid axes must have extent 1");
    const auto& mats = impl_->grid_mats(les, extent);

    Tensor x = grid;
    for (int a = 0; a < m.dim; ++a)
        x = ops::axis_apply(x, 1 + a, mats.to_sem[static_cast<std::size_t>(a)],
                            m.elems[a] * m.modes);
    const std::int64_t M1 = m.dim > 0 ? m.modes : 1, M2 = m.dim > 1 ? m.modes : 1,
                       M3 = m.dim > 2 ? m.modes : 1;
    x = ops::reshape(x, {sh[0], m.elems[0], M1, m.elems[1], M2, m.elems[2], M3, sh[4]});
    return ops::permute(x, {0, 1, 3, 5, 2, 4, 6, 7});
}

Tensor ModelRuntime::sem_to_grid(Tape&, Tensor x, std::array<int, 3> extent) const {
    const SemMesh& m = *impl_->sgs;
    for (int a = m.dim; a < 3; ++a)
        ensure(extent[static_cast<std::size_t>(a)] == 1,
               "unused grid axes must have extent 1");
    const auto& mats = impl_->grid_mats(false, extent);
    const auto sh = x.shape();
    Tensor y = ops::permute(x, {0, 1, 4, 2, 5, 3, 6, 7});
    y = ops::reshape(y, {sh[0], sh[1] * sh[4], sh[2] * sh[5], sh[3] * sh[6], sh[7]});
    for (int a = 0; a < m.dim; ++a)
        y = ops::axis_apply(y, 1 + a, mats.to_grid[static_cast<std::size_t>(a)],
                            extent[static_cast<std::size_t>(a)]);
    return y;
}

Tensor ModelRuntime::sem_conv(Tape&, Tensor x, std::span<const Tensor> kernels,
                              bool les) const {
    return impl_->conv(x, kernels, les);
}

Tensor ModelRuntime::rope_rotate(Tape&, Tensor x) const { return impl_->apply_rope(x); }

Tensor ModelRuntime::sem_attn(Tape& tape, Tensor x, const BoundParams& bound,
                              int layer) const {
    std::optional<Tensor> mask;
    if (!impl_->mask.empty()) {
        const auto sh = x.shape();
        mask = impl_->mask_tile(tape, sh[0] * sh[4] * sh[5] * sh[6] * impl_->cfg.heads);
    }
    return impl_->attn_impl(x, bound, layer, mask);
}

Tensor ModelRuntime::sgs_layer(Tape&, Tensor u, Tensor u_les, const BoundParams& bound,
                               int layer) const {
    return impl_->sgs_block(u, u_les, bound, layer);
}

Tensor ModelRuntime::les_layer(Tape& tape, Tensor u_les, const BoundParams& bound,
                               int layer) const {
    std::optional<Tensor> mask;
    if (!impl_->mask.empty()) {
        const auto sh = u_les.shape();
        mask = impl_->mask_tile(tape, sh[0] * sh[4] * sh[5] * sh[6] * impl_->cfg.heads);
    }
    return impl_->les_block(u_les, bound, layer, mask);
}

Tensor ModelRuntime::les_truncate(Tape&, Tensor x) const { return impl_->truncate(x); }

Tensor ModelRuntime::les_upsample(Tape&, Tensor x) const { return impl_->upsample(x); }

Tensor ModelRuntime::forward(Tape& tape, const BoundParams& bound, Tensor u_grid,
                             std::optional<Tensor> u_star_grid) const {
    const ModelConfig& c = impl_->cfg;
    const auto sh = u_grid.shape();
    ensure(sh.size() == 5, "grid tensors are [B, g1, g2, g3, C]");
    ensure(sh[4] == c.in_channels, "input channel count does not match the model");
    if (c.correction_input)
        ensure(u_star_grid.has_value(),
               "this model lifts (state, coarse prediction) pairs; u_star is required");
    else
        ensure(!u_star_grid.has_value(),
               "this model is configured for direct prediction; u_star is not accepted");

    Tensor x = u_grid;
    if (u_star_grid) {
        ensure(u_star_grid->shape() == sh, "u_star must match the input grid shape");
        x = ops::concat_lastaxis(u_grid, *u_star_grid);
    }

    Tensor h = pointwise_linear(grid_to_sem(tape, x, false),
                                impl_->find(bound, "w_in.weight"),
                                impl_->find(bound, "w_in.bias"));
    Tensor les = impl_->truncate(h);
    Tensor sgs = h;

    std::optional<Tensor> mask;
    if (!impl_->mask.empty()) {
        const auto ls = les.shape();
        mask = impl_->mask_tile(tape, ls[0] * ls[4] * ls[5] * ls[6] * c.heads);
    }

    for (int l = 0; l < c.layers; ++l) {
        Tensor les_in = les;
        if (c.streams != StreamMode::LesOnly)
            sgs = impl_->sgs_block(sgs, les_in, bound, l);
        if (c.streams != StreamMode::SgsOnly)
            les = impl_->les_block(les_in, bound, l, mask);
    }

    Tensor out;
    bool have = false;
    if (c.streams != StreamMode::SgsOnly) {
        out = pointwise_linear(impl_->upsample(les), impl_->find(bound, "w_les.weight"),
                               impl_->find(bound, "w_les.bias"));
        have = true;
    }
    if (c.streams != StreamMode::LesOnly) {
        Tensor o2 = pointwise_linear(sgs, impl_->find(bound, "w_sgs.weight"),
                                     impl_->find(bound, "w_sgs.bias"));
        out = have ? ops::add(out, o2) : o2;
    }

    std::array<int, 3> extent{static_cast<int>(sh[1]), static_cast<int>(sh[2]),
                              static_cast<int>(sh[3])};
    Tensor grid = sem_to_grid(tape, out, extent);
    Tensor result =
        u_star_grid ? ops::add(*u_star_grid, ops::scale(grid, c.alpha)) : grid;
    ensure_numeric(tape.val(result).finite(), "model forward produced a non-finite field");
    return result;
}

GridField ModelRuntime::predict(const ModelParams& params, const GridField& u_t,
                                const GridField* u_star, Dtype dtype) const {
    const ModelConfig& c = impl_->cfg;
    ensure(u_t.dim == c.dim, "input dimensionality does not match the model");
    ensure(u_t.channels == c.in_channels, "input channels do not match the model");
    for (int a = 0; a < c.dim; ++a)
        ensure(std::abs(u_t.length[static_cast<std::size_t>(a)] -
                        c.length[static_cast<std::size_t>(a)]) < 1e-12,
               "grid domain does not match the model domain");

    Tape tape(dtype);
    BoundParams bound = bind(tape, params);
    auto grid_tensor = [&](const GridField& g) {
        return tape.constant(TensorData::from(
            dtype, {1, g.extent[0], g.extent[1], g.extent[2], g.channels}, g.data));
    };
    Tensor u = grid_tensor(u_t);
    std::optional<Tensor> star;
    if (u_star) {
        ensure(u_star->extent == u_t.extent && u_star->channels == u_t.channels,
               "coarse prediction must match the input grid");
        star = grid_tensor(*u_star);
    }
    Tensor out = forward(tape, bound, u, star);

    GridField result = make_grid_field(c.dim, u_t.extent, u_t.length, u_t.channels);
    result.time = u_t.time;
    const auto vals = tape.val(out).to_doubles();
    std::copy(vals.begin(), vals.end(), result.data.begin());
    return result;
}

}  // namespace semflow
