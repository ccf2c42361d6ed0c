#include <doctest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "semflow/basis/transforms.hpp"
#include "semflow/core/rng.hpp"
#include "semflow/model/model.hpp"
#include "semflow/tensor/gradcheck.hpp"
#include "semflow/tensor/ops.hpp"

#include "../common/conv_oracle.hpp"

using namespace semflow;
namespace op = semflow::ops;

namespace {

constexpr double kPi = std::numbers::pi;

// --- configurations ---------------------------------------------------------

// Smallest config that exercises every block; head_dim divisible by 2*dim.
ModelConfig tiny_cfg() {
    ModelConfig c;
    c.dim = 2;
    c.layers = 1;
    c.hidden = 4;
    c.elems = {2, 2, 1};
    c.sgs_modes = 4;
    c.les_modes = 3;
    c.kernel_modes_sgs = 2;
    c.kernel_modes_les = 2;
    c.window = 0.8 * kPi;  // sigma = 0.8 elements
    c.heads = 2;
    c.head_dim = 4;
    c.alpha = 0.5;
    c.in_channels = 1;
    return c;
}

// A slightly larger config for invariance checks.
ModelConfig small_cfg() {
    ModelConfig c;
    c.dim = 2;
    c.layers = 2;
    c.hidden = 6;
    c.elems = {4, 4, 1};
    c.sgs_modes = 5;
    c.les_modes = 3;
    c.kernel_modes_sgs = 2;
    c.kernel_modes_les = 2;
    c.window = 0.6 * kPi;  // sigma = 1.2 elements
    c.heads = 2;
    c.head_dim = 4;
    c.alpha = 1e-2;
    c.in_channels = 1;
    return c;
}

// --- canonical-layout helpers ------------------------------------------------

std::vector<std::int64_t> canon_shape(const SemMesh& m, int C) {
    std::vector<std::int64_t> s{1, 1, 1, 1, 1, 1, 1, C};
    for (int a = 0; a < m.dim; ++a) {
        s[static_cast<std::size_t>(1 + a)] = m.elems[static_cast<std::size_t>(a)];
        s[static_cast<std::size_t>(4 + a)] = m.modes;
    }
    return s;
}

TensorData canon_td(const SemField& f) {
    return TensorData::from(Dtype::F64, canon_shape(*f.mesh, f.channels), f.data);
}

TensorData grid_td(const GridField& g) {
    return TensorData::from(
        Dtype::F64, {1, g.extent[0], g.extent[1], g.extent[2], g.channels}, g.data);
}

// Flat index into the canonical mesh layout [1,H1,H2,H3,N1,N2,N3,C].
std::size_t cidx(const SemMesh& m, int C, std::array<int, 3> h, std::array<int, 3> n,
                 int c) {
    const int M1 = m.dim > 0 ? m.modes : 1;
    const int M2 = m.dim > 1 ? m.modes : 1;
    const int M3 = m.dim > 2 ? m.modes : 1;
    std::size_t idx = (static_cast<std::size_t>(h[0]) * m.elems[1] + h[1]) * m.elems[2] + h[2];
    idx = ((idx * M1 + n[0]) * M2 + n[1]) * M3 + n[2];
    return idx * static_cast<std::size_t>(C) + static_cast<std::size_t>(c);
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Worst mismatch between duplicated interface nodes, normalized by the field
// magnitude.  Zero for a C0-continuous field.
double continuity_defect(const std::vector<double>& v, const SemMesh& m, int C) {
    const int M = m.modes;
    double worst = 0.0;
    for (int a = 0; a < m.dim; ++a) {
        std::array<int, 3> h{0, 0, 0};
        for (h[0] = 0; h[0] < m.elems[0]; ++h[0])
            for (h[1] = 0; h[1] < m.elems[1]; ++h[1])
                for (h[2] = 0; h[2] < m.elems[2]; ++h[2]) {
                    std::array<int, 3> h2 = h;
                    h2[a] = (h[a] + 1) % m.elems[a];
                    std::array<int, 3> lim{1, 1, 1};
                    for (int b = 0; b < m.dim; ++b) lim[b] = (b == a) ? 1 : M;
                    std::array<int, 3> t{0, 0, 0};
                    for (t[0] = 0; t[0] < lim[0]; ++t[0])
                        for (t[1] = 0; t[1] < lim[1]; ++t[1])
                            for (t[2] = 0; t[2] < lim[2]; ++t[2]) {
                                std::array<int, 3> n = t, n2 = t;
                                n[a] = M - 1;
                                n2[a] = 0;
                                for (int c = 0; c < C; ++c)
                                    worst = std::max(
                                        worst, std::abs(v[cidx(m, C, h, n, c)] -
                                                        v[cidx(m, C, h2, n2, c)]));
                            }
                }
    }
    const double scale = max_abs(v);
    return scale > 0.0 ? worst / scale : worst;
}

// --- data generators ----------------------------------------------------------

// Band-limited random periodic field sampled on a uniform grid; wavenumbers
// are cycles per domain so a tiled copy of the data remains a sample of the
// same function on the doubled domain.
GridField smooth_grid(int dim, std::array<int, 3> extent, std::array<double, 3> length,
                      int channels, std::uint64_t seed, int kmax = 3) {
    GridField g = make_grid_field(dim, extent, length, channels);
    Rng rng(seed);
    struct Mode {
        std::array<int, 3> k;
        double a, b;
    };
    std::vector<std::vector<Mode>> modes(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c)
        for (int k1 = -kmax; k1 <= kmax; ++k1)
            for (int k2 = (dim > 1 ? -kmax : 0); k2 <= (dim > 1 ? kmax : 0); ++k2)
                for (int k3 = (dim > 2 ? -kmax : 0); k3 <= (dim > 2 ? kmax : 0); ++k3)
                    modes[static_cast<std::size_t>(c)].push_back(
                        {{k1, k2, k3}, 0.25 * rng.normal(), 0.25 * rng.normal()});
    std::array<int, 3> i{0, 0, 0};
    for (i[0] = 0; i[0] < extent[0]; ++i[0])
        for (i[1] = 0; i[1] < extent[1]; ++i[1])
            for (i[2] = 0; i[2] < extent[2]; ++i[2])
                for (int c = 0; c < channels; ++c) {
                    double v = 0.0;
                    for (const Mode& md : modes[static_cast<std::size_t>(c)]) {
                        double ph = 0.0;
                        for (int a = 0; a < dim; ++a)
                            ph += md.k[a] * 2.0 * kPi * i[a] / extent[a];
                        v += md.a * std::cos(ph) + md.b * std::sin(ph);
                    }
                    g.at(i, c) = v;
                }
    return g;
}

// Continuous random field on a mesh (via trigonometric projection of a smooth
// grid sample), returned in the canonical tape layout.
TensorData smooth_canon(const std::shared_ptr<const SemMesh>& mesh, int C,
                        std::uint64_t seed) {
    std::array<int, 3> extent{1, 1, 1};
    for (int a = 0; a < mesh->dim; ++a)
        extent[static_cast<std::size_t>(a)] = 4 * mesh->elems[static_cast<std::size_t>(a)];
    GridField g = smooth_grid(mesh->dim, extent, mesh->length, C, seed);
    return canon_td(grid_to_sem(g, mesh));
}

TensorData randn_canon(const SemMesh& m, int C, std::uint64_t seed, double scale = 1.0) {
    TensorData t = TensorData::zeros(Dtype::F64, canon_shape(m, C));
    Rng rng(seed);
    for (double& v : t.f64) v = scale * rng.normal();
    return t;
}

TensorData randn_td(std::vector<std::int64_t> shape, std::uint64_t seed,
                    double scale = 1.0) {
    TensorData t = TensorData::zeros(Dtype::F64, std::move(shape));
    Rng rng(seed);
    for (double& v : t.f64) v = scale * rng.normal();
    return t;
}

// Healthy random parameters: O(scale) weights, gains and injection near 1.
ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed, double scale) {
    ModelParams p = init_params(cfg, seed);
    Rng rng(seed * 7919 + 1);
    for (auto& [name, td] : p.entries) {
        const bool unit = name.find("ln_gain") != std::string::npos ||
                          name.find("inject") != std::string::npos;
        for (double& v : td.f64) v = unit ? 1.0 + 0.1 * rng.normal() : scale * rng.normal();
    }
    return p;
}

// out[i] = in[i - r] along one grid axis (periodic).
GridField grid_roll(const GridField& g, int axis, int r) {
    GridField out = g;
    std::array<int, 3> i{0, 0, 0};
    for (i[0] = 0; i[0] < g.extent[0]; ++i[0])
        for (i[1] = 0; i[1] < g.extent[1]; ++i[1])
            for (i[2] = 0; i[2] < g.extent[2]; ++i[2])
                for (int c = 0; c < g.channels; ++c) {
                    std::array<int, 3> j = i;
                    j[axis] = ((i[axis] - r) % g.extent[axis] + g.extent[axis]) %
                              g.extent[axis];
                    out.at(i, c) = g.at(j, c);
                }
    return out;
}

// Same roll on the element axis of a canonical mesh tensor.
std::vector<double> canon_roll(const std::vector<double>& v, const SemMesh& m, int C,
                               int axis, int r) {
    std::vector<double> out(v.size());
    const int M = m.modes;
    std::array<int, 3> lim{1, 1, 1};
    for (int b = 0; b < m.dim; ++b) lim[b] = M;
    std::array<int, 3> h{0, 0, 0};
    for (h[0] = 0; h[0] < m.elems[0]; ++h[0])
        for (h[1] = 0; h[1] < m.elems[1]; ++h[1])
            for (h[2] = 0; h[2] < m.elems[2]; ++h[2]) {
                std::array<int, 3> hs = h;
                hs[axis] = ((h[axis] - r) % m.elems[axis] + m.elems[axis]) % m.elems[axis];
                std::array<int, 3> n{0, 0, 0};
                for (n[0] = 0; n[0] < lim[0]; ++n[0])
                    for (n[1] = 0; n[1] < lim[1]; ++n[1])
                        for (n[2] = 0; n[2] < lim[2]; ++n[2])
                            for (int c = 0; c < C; ++c)
                                out[cidx(m, C, h, n, c)] = v[cidx(m, C, hs, n, c)];
            }
    return out;
}

Tensor probe_loss(Tape& tape, Tensor out, std::uint64_t seed = 99) {
    Rng rng(seed);
    TensorData w = TensorData::zeros(tape.dtype(), tape.val(out).shape);
    for (double& v : w.f64) v = rng.normal();
    return op::sum_all(op::mul(out, tape.constant(w)));
}

std::vector<double> vals(Tape& t, Tensor x) { return t.val(x).to_doubles(); }

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("attention masks enumerate the periodic element window") {
    // Window equal to the element count: everything attends to everything.
    {
        auto m = attention_mask(2, {4, 4, 1}, 4);
        REQUIRE(m.size() == 256);
        for (auto v : m) CHECK(v == 1);
    }
    // Window of one: self-attention only.
    {
        auto m = attention_mask(2, {3, 3, 1}, 1);
        for (int h = 0; h < 9; ++h)
            for (int g = 0; g < 9; ++g) CHECK(int(m[h * 9 + g]) == (h == g ? 1 : 0));
    }
    // Even window: floor(w/2) behind, w/2 - 1 ahead, exactly w per axis.
    {
        const int n = 32, w = 16;
        auto m = attention_mask(2, {n, n, 1}, w);
        const int H = n * n;
        // row sums: w^2 allowed partners
        long sum = 0;
        for (int g = 0; g < H; ++g) sum += m[g];
        CHECK(sum == w * w);
        // membership along axis 0 from element (0,0): ahead 0..7, behind 24..31
        for (int b0 = 0; b0 < n; ++b0) {
            const bool want = (b0 <= 7) || (b0 >= 24);
            CHECK(int(m[static_cast<std::size_t>(b0) * n]) == (want ? 1 : 0));
        }
    }
    // Odd window: symmetric.
    {
        const int n = 9, w = 5;
        auto m = attention_mask(2, {n, n, 1}, w);
        const int H = n * n;
        const int a = (4 * n + 4);  // element (4,4)
        for (int b0 = 0; b0 < n; ++b0) {
            const bool want = std::abs(b0 - 4) <= 2;
            CHECK(int(m[static_cast<std::size_t>(a) * H + b0 * n + 4]) == (want ? 1 : 0));
        }
    }
    CHECK_THROWS_AS((void)attention_mask(2, {4, 4, 1}, 5), ValidationError);
    CHECK_THROWS_AS((void)attention_mask(2, {4, 4, 1}, 0), ValidationError);
}

TEST_CASE("configuration validation rejects inconsistent settings") {
    CHECK_NOTHROW(tiny_cfg().validate());
    CHECK_NOTHROW(ModelConfig::kolmogorov_2d().validate());
    CHECK_NOTHROW(ModelConfig::isotropic_3d().validate());
    CHECK_NOTHROW(ModelConfig::desk_2d().validate());

    auto bad = [](auto&& mutate) {
        ModelConfig c = tiny_cfg();
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ValidationError);
    };
    bad([](ModelConfig& c) { c.dim = 1; });
    bad([](ModelConfig& c) { c.layers = 0; });
    bad([](ModelConfig& c) { c.hidden = 0; });
    bad([](ModelConfig& c) { c.sgs_modes = 2; });
    bad([](ModelConfig& c) { c.les_modes = c.sgs_modes; });
    bad([](ModelConfig& c) { c.kernel_modes_sgs = 0; });
    bad([](ModelConfig& c) { c.window = 0.0; });
    bad([](ModelConfig& c) { c.window = 3 * kPi; });  // wider than the domain
    bad([](ModelConfig& c) { c.head_dim = 3; });      // odd
    bad([](ModelConfig& c) { c.heads = 0; });
    bad([](ModelConfig& c) { c.attn_window = 3; });   // > elems on a used axis
    bad([](ModelConfig& c) { c.alpha = 0.0; });
    bad([](ModelConfig& c) { c.elems = {2, 2, 2}; }); // unused axis must be 1
}

TEST_CASE("windowed convolution: zero kernels and constant kernels") {
    ModelConfig cfg = small_cfg();
    cfg.sgs_modes = 6;
    cfg.kernel_modes_sgs = 3;
    cfg.window = 1.0;
    ModelRuntime rt(cfg);
    const auto mesh = rt.sgs_mesh();

    const int cin = 2, cout = 3;
    Tape t(Dtype::F64);
    Tensor x = t.constant(randn_canon(*mesh, cin, 11));

    // all-zero kernels give an exactly zero field
    std::vector<Tensor> kz;
    for (int a = 0; a < 2; ++a)
        kz.push_back(t.constant(
            TensorData::zeros(Dtype::F64, {cfg.kernel_modes_sgs, 2, cin, cout})));
    for (double v : vals(t, rt.sem_conv(t, x, kz, false))) CHECK(v == 0.0);

    // constant field, constant kernel on axis 0 only: out = s * K^T u
    std::vector<double> uval{0.7, -0.3};
    TensorData xc = TensorData::zeros(Dtype::F64, canon_shape(*mesh, cin));
    for (std::size_t i = 0; i < xc.f64.size(); ++i)
        xc.f64[i] = uval[i % static_cast<std::size_t>(cin)];
    Tensor xcon = t.constant(xc);

    TensorData k0 = TensorData::zeros(Dtype::F64, {cfg.kernel_modes_sgs, 2, cin, cout});
    auto K = [&](int ci, int co) { return 0.5 + 0.25 * ci - 0.125 * co; };
    for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
            k0.f64[static_cast<std::size_t>((0 * 2 + 0) * cin + ci) * cout + co] = K(ci, co);
    std::vector<Tensor> kc{t.constant(k0),
                           t.constant(TensorData::zeros(
                               Dtype::F64, {cfg.kernel_modes_sgs, 2, cin, cout}))};
    const std::vector<double> out = vals(t, rt.sem_conv(t, xcon, kc, false));
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int co = static_cast<int>(i % static_cast<std::size_t>(cout));
        double want = 0.0;
        for (int ci = 0; ci < cin; ++ci) want += K(ci, co) * uval[static_cast<std::size_t>(ci)];
        want *= cfg.window;  // integral of a unit kernel over its support
        CHECK(std::abs(out[i] - want) < 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("windowed convolution matches the dense quadrature reference") {
    struct Case {
        int m_k;
        double window;
    };
    const double delta = 2.0 * kPi / 4.0;
    const std::vector<Case> cases{{3, 1.5 * delta}, {2, 0.6 * delta}, {4, 3.2 * delta}};

    int case_id = 0;
    for (const Case& cs : cases) {
        ModelConfig cfg = small_cfg();
        cfg.sgs_modes = 6;
        cfg.kernel_modes_sgs = cs.m_k;
        cfg.window = cs.window;
        ModelRuntime rt(cfg);
        const auto mesh = rt.sgs_mesh();
        const int M = mesh->modes;

        const int cin = 2, cout = 3;
        GridField g = smooth_grid(2, {16, 16, 1}, mesh->length, cin, 100 + case_id);
        SemField f = grid_to_sem(g, mesh);

        std::vector<std::vector<double>> kers;
        Rng rng(200 + case_id);
        for (int a = 0; a < 2; ++a) {
            std::vector<double> k(static_cast<std::size_t>(cs.m_k) * 2 * cin * cout);
            for (double& v : k) v = 0.5 * rng.normal();
            kers.push_back(std::move(k));
        }

        Tape t(Dtype::F64);
        Tensor x = t.constant(canon_td(f));
        std::vector<Tensor> kt;
        for (int a = 0; a < 2; ++a)
            kt.push_back(t.constant(
                TensorData::from(Dtype::F64, {cs.m_k, 2, cin, cout}, kers[a])));
        const std::vector<double> out = vals(t, rt.sem_conv(t, x, kt, false));

        const std::vector<std::pair<std::array<int, 3>, std::array<int, 3>>> probes{
            {{0, 0, 0}, {0, 0, 0}},         {{0, 0, 0}, {M - 1, 2, 0}},
            {{1, 2, 0}, {3, 0, 0}},         {{2, 3, 0}, {M - 1, M - 1, 0}},
            {{3, 1, 0}, {0, 4, 0}},         {{2, 0, 0}, {2, 2, 0}},
        };
        for (const auto& [h, n] : probes) {
            std::array<double, 3> pt{0.0, 0.0, 0.0};
            for (int a = 0; a < 2; ++a)
                pt[static_cast<std::size_t>(a)] = mesh->node_coord(a, h[a], n[a]);
            const std::vector<double> ref =
                testing::conv_reference(f, kers, cs.m_k, cout, cs.window, pt);
            for (int co = 0; co < cout; ++co) {
                const double got = out[cidx(*mesh, cout, h, n, co)];
                CHECK(std::abs(got - ref[static_cast<std::size_t>(co)]) <
                      1e-8 * std::max(1.0, std::abs(ref[static_cast<std::size_t>(co)])));
            }
        }
        ++case_id;
    }
}

TEST_CASE("coarsening and embedding match the basis transforms and invert") {
    ModelConfig cfg = small_cfg();
    ModelRuntime rt(cfg);
    const auto fine = rt.sgs_mesh();
    const auto coarse = rt.les_mesh();
    const int C = 3;

    GridField g = smooth_grid(2, {20, 20, 1}, fine->length, C, 31);
    SemField f = grid_to_sem(g, fine);

    Tape t(Dtype::F64);
    Tensor x = t.constant(canon_td(f));

    // truncation equals the host-side spectral coarsening
    SemField ht = les_truncate(f, cfg.les_modes);
    const std::vector<double> yt = vals(t, rt.les_truncate(t, x));
    CHECK(max_abs_diff(yt, ht.data) < 1e-12 * std::max(1.0, max_abs(ht.data)));

    // embedding equals the host-side upsample
    SemField hu = sem_upsample(ht, cfg.sgs_modes);
    Tensor yc = t.constant(canon_td(ht));
    const std::vector<double> yu = vals(t, rt.les_upsample(t, yc));
    CHECK(max_abs_diff(yu, hu.data) < 1e-12 * std::max(1.0, max_abs(hu.data)));

    // truncate(upsample(y)) == y for arbitrary coarse fields
    TensorData yr = randn_canon(*coarse, C, 77);
    Tensor roundtrip = rt.les_truncate(t, rt.les_upsample(t, t.constant(yr)));
    CHECK(max_abs_diff(vals(t, roundtrip), yr.f64) < 1e-12 * std::max(1.0, max_abs(yr.f64)));

    // the embedded field is band-limited: local coefficients outside the kept
    // mode set vanish on every axis
    Tensor up = rt.les_upsample(t, t.constant(yr));
    SemField uf = make_sem_field(fine, C, SemLayout::Nodal);
    uf.data = vals(t, up);
    SemField um = nodal_to_modal(uf);
    const double scale = max_abs(um.data);
    const int M = cfg.sgs_modes, k = cfg.les_modes;
    for (int hh = 0; hh < fine->n_elems(); ++hh)
        for (int n0 = 0; n0 < M; ++n0)
            for (int n1 = 0; n1 < M; ++n1) {
                const bool dead0 = (n0 >= k - 1 && n0 <= M - 2);
                const bool dead1 = (n1 >= k - 1 && n1 <= M - 2);
                if (!dead0 && !dead1) continue;
                for (int c = 0; c < C; ++c)
                    CHECK(std::abs(um.at(hh, n0 * M + n1, c)) < 1e-11 * scale);
            }
}

TEST_CASE("rotary rotation: identity at the origin, isometry, relative phases") {
    ModelConfig cfg = small_cfg();
    ModelRuntime rt(cfg);
    const auto coarse = rt.les_mesh();
    const int C = cfg.heads * cfg.head_dim;  // 8
    const int k = coarse->modes;

    // same channel vector at every token row
    std::vector<double> v0{0.9, -0.4, 0.3, 1.1, -0.7, 0.2, 0.5, -1.3};
    TensorData x = TensorData::zeros(Dtype::F64, canon_shape(*coarse, C));
    for (std::size_t i = 0; i < x.f64.size(); ++i)
        x.f64[i] = v0[i % static_cast<std::size_t>(C)];

    Tape t(Dtype::F64);
    const std::vector<double> out = vals(t, rt.rope_rotate(t, t.constant(x)));

    // the row at the origin is untouched
    for (int c = 0; c < C; ++c)
        CHECK(out[cidx(*coarse, C, {0, 0, 0}, {0, 0, 0}, c)] ==
              doctest::Approx(v0[static_cast<std::size_t>(c)]).epsilon(1e-13));

    // rotations preserve the per-row norm
    const double want_sq = [&] {
        double s = 0.0;
        for (double v : v0) s += v * v;
        return s;
    }();
    std::array<int, 3> h{0, 0, 0}, n{0, 0, 0};
    for (h[0] = 0; h[0] < 4; ++h[0])
        for (n[0] = 0; n[0] < k; ++n[0]) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) {
                const double vv = out[cidx(*coarse, C, h, n, c)];
                s += vv * vv;
            }
            CHECK(s == doctest::Approx(want_sq).epsilon(1e-12));
        }

    // scores depend only on coordinate differences: rotate a second constant
    // field and compare dot products one element apart at two locations
    std::vector<double> w0{0.2, 0.8, -0.6, 0.4, 1.0, -0.2, -0.9, 0.3};
    TensorData y = TensorData::zeros(Dtype::F64, canon_shape(*coarse, C));
    for (std::size_t i = 0; i < y.f64.size(); ++i)
        y.f64[i] = w0[i % static_cast<std::size_t>(C)];
    const std::vector<double> outw = vals(t, rt.rope_rotate(t, t.constant(y)));

    auto dot_rows = [&](std::array<int, 3> ha, std::array<int, 3> hb) {
        double s = 0.0;
        for (int c = 0; c < C; ++c)
            s += out[cidx(*coarse, C, ha, {0, 0, 0}, c)] *
                 outw[cidx(*coarse, C, hb, {0, 0, 0}, c)];
        return s;
    };
    CHECK(dot_rows({0, 1, 0}, {1, 1, 0}) ==
          doctest::Approx(dot_rows({2, 0, 0}, {3, 0, 0})).epsilon(1e-10));

    // head widths that cannot split evenly across axis pairs are rejected at
    // use, not at construction
    ModelConfig c2 = small_cfg();
    c2.head_dim = 6;
    ModelRuntime rt2(c2);
    Tape t2(Dtype::F64);
    Tensor bad = t2.constant(randn_canon(*rt2.les_mesh(), c2.heads * c2.head_dim, 5));
    CHECK_THROWS_AS((void)rt2.rope_rotate(t2, bad), ValidationError);
}

TEST_CASE("zero parameters make the residual blocks exact identities") {
    ModelConfig cfg = tiny_cfg();
    ModelRuntime rt(cfg);
    ModelParams zero = init_params(cfg, 1);
    for (auto& [name, td] : zero.entries) td.fill(0.0);

    Tape t(Dtype::F64);
    BoundParams bound = rt.bind(t, zero);
    Tensor u = t.constant(randn_canon(*rt.sgs_mesh(), cfg.hidden, 21));
    Tensor ul = t.constant(randn_canon(*rt.les_mesh(), cfg.hidden, 22));

    CHECK(max_abs_diff(vals(t, rt.sgs_layer(t, u, ul, bound, 0)), vals(t, u)) == 0.0);
    CHECK(max_abs_diff(vals(t, rt.les_layer(t, ul, bound, 0)), vals(t, ul)) == 0.0);

    // zero injection scale decouples the fine stream from the coarse input
    ModelParams p = random_params(cfg, 3, 0.3);
    p.at("sgs0.inject").fill(0.0);
    Tape t2(Dtype::F64);
    BoundParams b2 = rt.bind(t2, p);
    Tensor u2 = t2.constant(randn_canon(*rt.sgs_mesh(), cfg.hidden, 23));
    Tensor la = t2.constant(randn_canon(*rt.les_mesh(), cfg.hidden, 24));
    Tensor lb = t2.constant(randn_canon(*rt.les_mesh(), cfg.hidden, 25));
    CHECK(max_abs_diff(vals(t2, rt.sgs_layer(t2, u2, la, b2, 0)),
                       vals(t2, rt.sgs_layer(t2, u2, lb, b2, 0))) == 0.0);
}

TEST_CASE("single-element attention reduces to the projected value stream") {
    ModelConfig cfg = tiny_cfg();
    cfg.elems = {1, 1, 1};
    cfg.sgs_modes = 5;
    cfg.les_modes = 3;
    cfg.window = 0.5 * kPi;
    ModelRuntime rt(cfg);
    ModelParams p = random_params(cfg, 9, 0.3);

    Tape t(Dtype::F64);
    BoundParams bound = rt.bind(t, p);
    Tensor x = t.constant(randn_canon(*rt.les_mesh(), cfg.hidden, 41));

    Tensor attn = rt.sem_attn(t, x, bound, 0);

    // with a single element the softmax weight is one, so attention is just
    // the output projection of the value convolution
    std::vector<Tensor> vk{rt.param(bound, "les0.v.k0"), rt.param(bound, "les0.v.k1")};
    Tensor v = rt.sem_conv(t, x, vk, true);
    const auto sh = t.val(v).shape;
    std::int64_t rows = 1;
    for (std::size_t i = 0; i + 1 < sh.size(); ++i) rows *= sh[i];
    Tensor manual = op::bias_add(
        op::matmul(op::reshape(v, {rows, sh.back()}), rt.param(bound, "les0.attn_out.weight")),
        rt.param(bound, "les0.attn_out.bias"));
    manual = op::reshape(manual, t.val(attn).shape);

    const double scale = std::max(1.0, max_abs(vals(t, attn)));
    CHECK(max_abs_diff(vals(t, attn), vals(t, manual)) < 1e-12 * scale);
}

TEST_CASE("blocks preserve continuity on continuous inputs") {
    ModelConfig cfg = small_cfg();
    ModelRuntime rt(cfg);
    ModelParams p = random_params(cfg, 13, 0.3);

    Tape t(Dtype::F64);
    BoundParams bound = rt.bind(t, p);

    Tensor u = t.constant(smooth_canon(rt.sgs_mesh(), cfg.hidden, 51));
    CHECK(continuity_defect(vals(t, u), *rt.sgs_mesh(), cfg.hidden) < 1e-13);

    Tensor ul = rt.les_truncate(t, u);
    CHECK(continuity_defect(vals(t, ul), *rt.les_mesh(), cfg.hidden) < 1e-12);

    std::vector<Tensor> ks{rt.param(bound, "sgs0.conv.k0"), rt.param(bound, "sgs0.conv.k1")};
    CHECK(continuity_defect(vals(t, rt.sem_conv(t, u, ks, false)), *rt.sgs_mesh(),
                            cfg.hidden) < 1e-11);

    CHECK(continuity_defect(vals(t, rt.sgs_layer(t, u, ul, bound, 0)), *rt.sgs_mesh(),
                            cfg.hidden) < 1e-11);
    CHECK(continuity_defect(vals(t, rt.les_layer(t, ul, bound, 0)), *rt.les_mesh(),
                            cfg.hidden) < 1e-10);
    CHECK(continuity_defect(vals(t, rt.sem_attn(t, ul, bound, 0)), *rt.les_mesh(),
                            cfg.hidden) < 1e-10);
}

TEST_CASE("attention commutes with element shifts under full attention") {
    ModelConfig cfg = small_cfg();
    ModelRuntime rt(cfg);
    ModelParams p = random_params(cfg, 17, 0.3);

    Tape t(Dtype::F64);
    BoundParams bound = rt.bind(t, p);
    TensorData x = smooth_canon(rt.les_mesh(), cfg.hidden, 61);

    const std::vector<double> base = vals(t, rt.les_layer(t, t.constant(x), bound, 0));

    TensorData xs = x;
    xs.f64 = canon_roll(x.f64, *rt.les_mesh(), cfg.hidden, 0, 1);
    const std::vector<double> shifted =
        vals(t, rt.les_layer(t, t.constant(xs), bound, 0));

    const std::vector<double> want = canon_roll(base, *rt.les_mesh(), cfg.hidden, 0, 1);
    CHECK(max_abs_diff(shifted, want) < 1e-10 * std::max(1.0, max_abs(base)));
}

TEST_CASE("initialization is deterministic with near-identity behavior") {
    ModelConfig cfg = small_cfg();
    ModelParams a = init_params(cfg, 7);
    ModelParams b = init_params(cfg, 7);
    ModelParams c = init_params(cfg, 8);
    REQUIRE(a.entries.size() == b.entries.size());
    bool all_equal = true, any_diff_seed = false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].first == b.entries[i].first);
        if (a.entries[i].second.f64 != b.entries[i].second.f64) all_equal = false;
        if (a.entries[i].second.f64 != c.entries[i].second.f64) any_diff_seed = true;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    for (const auto& [name, td] : a.entries) {
        if (name.find(".k0") != std::string::npos || name.find(".k1") != std::string::npos ||
            name == "w_sgs.weight" || name == "w_les.weight")
            for (double v : td.f64) CHECK(std::abs(v) <= 1e-7);
        if (name.find("ln_gain") != std::string::npos || name.find("inject") != std::string::npos)
            for (double v : td.f64) CHECK(v == 1.0);
        if (name.find(".bias") != std::string::npos || name.find(".b1") != std::string::npos ||
            name.find(".b2") != std::string::npos)
            for (double v : td.f64) CHECK(v == 0.0);
    }

    // a freshly initialized direct model is a near-zero map
    ModelConfig dcfg = small_cfg();
    dcfg.sgs_modes = 8;
    dcfg.les_modes = 4;
    dcfg.hidden = 8;
    ModelRuntime rt(dcfg);
    ModelParams p = init_params(dcfg, 99);
    GridField u = smooth_grid(2, {16, 16, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 71);
    GridField out = rt.predict(p, u, nullptr);
    double nu = 0.0, no = 0.0;
    for (double v : u.data) nu += v * v;
    for (double v : out.data) no += v * v;
    CHECK(std::sqrt(no) < 1e-2 * std::sqrt(nu));

    // a freshly initialized correction model stays glued to the base guess
    ModelConfig ccfg = dcfg;
    ccfg.correction_input = true;
    ccfg.alpha = 1e-2;
    ModelRuntime rtc(ccfg);
    ModelParams pc = init_params(ccfg, 98);
    GridField ustar = smooth_grid(2, {16, 16, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 72);
    GridField hyb = rtc.predict(pc, u, &ustar);
    CHECK(hyb.time == u.time);
    double dn = 0.0, sn = 0.0;
    for (std::size_t i = 0; i < hyb.data.size(); ++i) {
        const double d = hyb.data[i] - ustar.data[i];
        dn += d * d;
        sn += ustar.data[i] * ustar.data[i];
    }
    CHECK(std::sqrt(dn) <= 10.0 * ccfg.alpha * std::sqrt(sn));
}

TEST_CASE("forward pass commutes with grid shifts by whole elements") {
    ModelConfig cfg = small_cfg();
    ModelRuntime rt(cfg);
    ModelParams p = random_params(cfg, 19, 0.2);

    GridField u = smooth_grid(2, {12, 12, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 81);
    GridField out = rt.predict(p, u, nullptr);

    for (int axis = 0; axis < 2; ++axis) {
        const int r = 3;  // 12 grid points / 4 elements = 3 points per element
        GridField us = grid_roll(u, axis, r);
        GridField outs = rt.predict(p, us, nullptr);
        GridField want = grid_roll(out, axis, r);
        CHECK(max_abs_diff(outs.data, want.data) < 1e-8 * std::max(1.0, max_abs(out.data)));
    }
}

TEST_CASE("forward pass tiles onto a doubled domain with a windowed mask") {
    ModelConfig base = small_cfg();
    base.hidden = 6;
    base.layers = 2;
    ModelRuntime rt_base(base);

    ModelConfig tiled = base;
    tiled.elems = {8, 8, 1};
    tiled.length = {4 * kPi, 4 * kPi, 1.0};
    tiled.attn_window = 4;  // the training-period element count
    ModelRuntime rt_tiled(tiled);

    ModelParams p = random_params(base, 23, 0.2);

    GridField u = smooth_grid(2, {12, 12, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 91);
    GridField ut = make_grid_field(2, {24, 24, 1}, {4 * kPi, 4 * kPi, 1.0}, 1);
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 24; ++j)
            ut.at({i, j, 0}, 0) = u.at({i % 12, j % 12, 0}, 0);

    GridField out = rt_base.predict(p, u, nullptr);
    GridField outt = rt_tiled.predict(p, ut, nullptr);

    const double scale = std::max(1.0, max_abs(out.data));
    double worst = 0.0;
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 24; ++j)
            worst = std::max(worst, std::abs(outt.at({i, j, 0}, 0) -
                                             out.at({i % 12, j % 12, 0}, 0)));
    CHECK(worst < 1e-6 * scale);
}

TEST_CASE("stream ablations and the coarse token count") {
    ModelConfig cfg = tiny_cfg();
    ModelParams p = random_params(cfg, 29, 0.3);
    GridField u = smooth_grid(2, {6, 6, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 95);

    ModelRuntime full(cfg);
    GridField of = full.predict(p, u, nullptr);

    ModelConfig cl = cfg;
    cl.streams = StreamMode::LesOnly;
    ModelConfig cs = cfg;
    cs.streams = StreamMode::SgsOnly;
    GridField ol = ModelRuntime(cl).predict(p, u, nullptr);
    GridField os = ModelRuntime(cs).predict(p, u, nullptr);
    CHECK(max_abs_diff(of.data, ol.data) > 0.0);
    CHECK(max_abs_diff(of.data, os.data) > 0.0);

    // the number of coarse attention tokens is set by the element grid alone
    ModelConfig hi = cfg;
    hi.sgs_modes = 8;
    hi.les_modes = 4;
    CHECK(ModelRuntime(cfg).les_mesh()->n_elems() == ModelRuntime(hi).les_mesh()->n_elems());

    // input contract checks
    Tape t(Dtype::F64);
    BoundParams bound = full.bind(t, p);
    Tensor ug = t.constant(grid_td(u));
    CHECK_THROWS_AS((void)full.forward(t, bound, ug, ug), ValidationError);  // direct + u_star

    ModelConfig cc = cfg;
    cc.correction_input = true;
    ModelRuntime rtc(cc);
    ModelParams pcp = random_params(cc, 30, 0.3);
    Tape t2(Dtype::F64);
    BoundParams b2 = rtc.bind(t2, pcp);
    Tensor ug2 = t2.constant(grid_td(u));
    CHECK_THROWS_AS((void)rtc.forward(t2, b2, ug2, std::nullopt), ValidationError);

    // binding rejects parameter sets from a different architecture
    Tape t3(Dtype::F64);
    CHECK_THROWS_AS((void)rtc.bind(t3, p), ValidationError);
}

TEST_CASE("every block differentiates correctly") {
    const ModelConfig cfg = tiny_cfg();
    ModelRuntime rt(cfg);
    const ModelParams p = random_params(cfg, 33, 0.3);
    const std::size_t np = p.entries.size();

    std::vector<TensorData> ptd;
    for (const auto& [name, td] : p.entries) ptd.push_back(td);

    auto with_params = [&](const std::vector<Tensor>& in, std::size_t first) {
        BoundParams b;
        b.leaves.assign(in.begin() + static_cast<std::ptrdiff_t>(first), in.end());
        return b;
    };

    // A single block only touches its own parameters, so only those become
    // differentiable leaves; the rest are bound as constants.
    auto subset_inputs = [&](const auto& pred) {
        std::vector<TensorData> out;
        for (const auto& [name, td] : p.entries)
            if (pred(name)) out.push_back(td);
        return out;
    };
    auto bind_subset = [&](Tape& t, const auto& pred, const std::vector<Tensor>& leaves,
                           std::size_t first) {
        BoundParams b;
        std::size_t j = first;
        for (const auto& [name, td] : p.entries)
            b.leaves.push_back(pred(name) ? leaves[j++] : t.constant(td));
        return b;
    };

    SUBCASE("windowed convolution") {
        std::vector<TensorData> in{randn_canon(*rt.sgs_mesh(), 2, 101, 0.8),
                                   randn_td({cfg.kernel_modes_sgs, 2, 2, 3}, 102, 0.5),
                                   randn_td({cfg.kernel_modes_sgs, 2, 2, 3}, 103, 0.5)};
        auto build = [&](Tape& t, const std::vector<Tensor>& leaves) {
            std::vector<Tensor> ks{leaves[1], leaves[2]};
            return probe_loss(t, rt.sem_conv(t, leaves[0], ks, false), 7);
        };
        auto rep = gradcheck(build, in, 8);
        CHECK(rep.max_rel_err < 1e-4);
    }

    SUBCASE("attention") {
        auto pred = [](const std::string& n) {
            return n.rfind("les0.q.", 0) == 0 || n.rfind("les0.k.", 0) == 0 ||
                   n.rfind("les0.v.", 0) == 0 || n.rfind("les0.attn_out.", 0) == 0;
        };
        std::vector<TensorData> in{randn_canon(*rt.les_mesh(), cfg.hidden, 111, 0.8)};
        for (auto& td : subset_inputs(pred)) in.push_back(std::move(td));
        auto build = [&](Tape& t, const std::vector<Tensor>& leaves) {
            return probe_loss(t, rt.sem_attn(t, leaves[0], bind_subset(t, pred, leaves, 1), 0),
                              8);
        };
        auto rep = gradcheck(build, in, 4);
        CHECK(rep.max_rel_err < 1e-4);
    }

    SUBCASE("fine-stream block") {
        auto pred = [](const std::string& n) { return n.rfind("sgs0.", 0) == 0; };
        std::vector<TensorData> in{randn_canon(*rt.sgs_mesh(), cfg.hidden, 121, 0.8),
                                   randn_canon(*rt.les_mesh(), cfg.hidden, 122, 0.8)};
        for (auto& td : subset_inputs(pred)) in.push_back(std::move(td));
        auto build = [&](Tape& t, const std::vector<Tensor>& leaves) {
            return probe_loss(
                t, rt.sgs_layer(t, leaves[0], leaves[1], bind_subset(t, pred, leaves, 2), 0),
                9);
        };
        auto rep = gradcheck(build, in, 4);
        CHECK(rep.max_rel_err < 1e-4);
    }

    SUBCASE("coarse-stream block") {
        auto pred = [](const std::string& n) { return n.rfind("les0.", 0) == 0; };
        std::vector<TensorData> in{randn_canon(*rt.les_mesh(), cfg.hidden, 131, 0.8)};
        for (auto& td : subset_inputs(pred)) in.push_back(std::move(td));
        auto build = [&](Tape& t, const std::vector<Tensor>& leaves) {
            return probe_loss(t, rt.les_layer(t, leaves[0], bind_subset(t, pred, leaves, 1), 0),
                              10);
        };
        auto rep = gradcheck(build, in, 4);
        CHECK(rep.max_rel_err < 1e-4);
    }

    SUBCASE("full forward, direct") {
        GridField u = smooth_grid(2, {6, 6, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 141);
        GridField tgt = smooth_grid(2, {6, 6, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 142);
        const TensorData tgt_td = grid_td(tgt);
        std::vector<TensorData> in{grid_td(u)};
        for (const auto& td : ptd) in.push_back(td);
        auto build = [&](Tape& t, const std::vector<Tensor>& leaves) {
            Tensor out = rt.forward(t, with_params(leaves, 1), leaves[0], std::nullopt);
            return op::rel_l2(out, t.constant(tgt_td));
        };
        auto rep = gradcheck(build, in, 3);
        CHECK(rep.max_rel_err < 1e-4);
        CHECK(np == ptd.size());
    }

    SUBCASE("full forward, correction") {
        ModelConfig cc = tiny_cfg();
        cc.correction_input = true;
        cc.alpha = 0.5;
        ModelRuntime rtc(cc);
        ModelParams pc = random_params(cc, 35, 0.3);

        GridField u = smooth_grid(2, {6, 6, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 151);
        GridField us = smooth_grid(2, {6, 6, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 152);
        GridField tgt = smooth_grid(2, {6, 6, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 153);
        const TensorData tgt_td = grid_td(tgt);
        std::vector<TensorData> in{grid_td(u), grid_td(us)};
        for (const auto& [name, td] : pc.entries) in.push_back(td);
        auto build = [&](Tape& t, const std::vector<Tensor>& leaves) {
            Tensor out = rtc.forward(t, with_params(leaves, 2), leaves[0], leaves[1]);
            return op::rel_l2(out, t.constant(tgt_td));
        };
        auto rep = gradcheck(build, in, 3);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("host prediction matches a manual tape evaluation") {
    ModelConfig cfg = tiny_cfg();
    ModelRuntime rt(cfg);
    ModelParams p = random_params(cfg, 43, 0.3);
    GridField u = smooth_grid(2, {6, 6, 1}, {2 * kPi, 2 * kPi, 1.0}, 1, 161);
    u.time = 2.5;

    GridField out = rt.predict(p, u, nullptr);
    CHECK(out.time == 2.5);
    CHECK(out.extent == u.extent);

    Tape t(Dtype::F64);
    BoundParams bound = rt.bind(t, p);
    Tensor y = rt.forward(t, bound, t.constant(grid_td(u)), std::nullopt);
    CHECK(max_abs_diff(vals(t, y), out.data) == 0.0);
}
