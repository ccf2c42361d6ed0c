#include "semflow/basis/transforms.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "semflow/basis/polynomials.hpp"
#include "semflow/core/error.hpp"

namespace semflow {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

// Applies the m_out x m_in matrix B (row-major) along one local axis of
// every element.  dims holds the current per-axis local sizes; the caller
// updates dims[axis] afterwards.
std::vector<double> apply_local(const std::vector<double>& data, int n_elems,
                                const std::array<int, 3>& dims, int dim, int channels,
                                int axis, const double* B, int m_out, int m_in) {
    int pre = 1, post = channels;
    for (int a = 0; a < axis; ++a) pre *= dims[a];
    for (int a = axis + 1; a < dim; ++a) post *= dims[a];

    std::vector<double> out(static_cast<std::size_t>(n_elems) * pre * m_out * post);
    MapConst mb(B, m_out, m_in);
    const std::size_t in_elem = static_cast<std::size_t>(pre) * m_in * post;
    const std::size_t out_elem = static_cast<std::size_t>(pre) * m_out * post;
    for (int h = 0; h < n_elems; ++h) {
        for (int p = 0; p < pre; ++p) {
            MapConst src(data.data() + h * in_elem + static_cast<std::size_t>(p) * m_in * post,
                         m_in, post);
            MapMat dst(out.data() + h * out_elem + static_cast<std::size_t>(p) * m_out * post,
                       m_out, post);
            dst.noalias() = mb * src;
        }
    }
    return out;
}

SemField change_basis(const SemField& f, const std::vector<double>& B, SemLayout to) {
    const SemMesh& mesh = *f.mesh;
    const int M = mesh.modes;
    SemField out = f;
    out.layout = to;
    std::array<int, 3> dims{M, M, M};
    for (int a = 0; a < mesh.dim; ++a)
        out.data = apply_local(out.data, mesh.n_elems(), dims, mesh.dim, f.channels, a,
                               B.data(), M, M);
    return out;
}

// Periodic cardinal interpolation kernel for n uniformly spaced samples.
// For even n the interpolant takes the Nyquist mode as a pure cosine, which
// keeps real data real.
double trig_kernel(int n, double delta) {
    const double d = std::remainder(delta, kTwoPi);
    if (std::abs(d) < 1e-14) return 1.0;
    if (n % 2 == 0) return std::sin(0.5 * n * d) / (n * std::tan(0.5 * d));
    return std::sin(0.5 * n * d) / (n * std::sin(0.5 * d));
}

}  // namespace

SemField nodal_to_modal(const SemField& f) {
    ensure(f.layout == SemLayout::Nodal, "nodal_to_modal expects a nodal field");
    return change_basis(f, f.mesh->vand_inv, SemLayout::Modal);
}

SemField modal_to_nodal(const SemField& f) {
    ensure(f.layout == SemLayout::Modal, "modal_to_nodal expects a modal field");
    return change_basis(f, f.mesh->vand, SemLayout::Nodal);
}

void enforce_continuity(SemField& f) {
    ensure(f.layout == SemLayout::Nodal, "enforce_continuity expects a nodal field");
    const SemMesh& mesh = *f.mesh;
    const int M = mesh.modes;
    const int C = f.channels;
    // One averaging sweep per axis: later sweeps average pairs that earlier
    // sweeps already made equal, so the result is consistent at corners too.
    for (int axis = 0; axis < mesh.dim; ++axis) {
        std::array<int, 3> h{0, 0, 0};
        std::array<int, 3> n{0, 0, 0};
        const std::array<int, 3> lim{mesh.elems[0], mesh.elems[1], mesh.elems[2]};
        for (h[0] = 0; h[0] < lim[0]; ++h[0])
            for (h[1] = 0; h[1] < lim[1]; ++h[1])
                for (h[2] = 0; h[2] < lim[2]; ++h[2]) {
                    std::array<int, 3> hn = h;
                    hn[axis] = (h[axis] + 1) % mesh.elems[axis];
                    const int e0 = mesh.elem_index(h);
                    const int e1 = mesh.elem_index(hn);
                    // All transverse nodes on the shared face.
                    std::array<int, 3> t{0, 0, 0};
                    const int ta = (axis + 1) % 3;
                    const int tb = (axis + 2) % 3;
                    const int la = ta < mesh.dim ? M : 1;
                    const int lb = tb < mesh.dim ? M : 1;
                    for (t[ta] = 0; t[ta] < la; ++t[ta])
                        for (t[tb] = 0; t[tb] < lb; ++t[tb]) {
                            n = t;
                            n[axis] = M - 1;
                            const int n0 = mesh.node_index(n);
                            n[axis] = 0;
                            const int n1 = mesh.node_index(n);
                            for (int c = 0; c < C; ++c) {
                                const double avg = 0.5 * (f.at(e0, n0, c) + f.at(e1, n1, c));
                                f.at(e0, n0, c) = avg;
                                f.at(e1, n1, c) = avg;
                            }
                        }
                }
    }
}

SemField grid_to_sem(const GridField& g, std::shared_ptr<const SemMesh> mesh) {
    ensure(mesh != nullptr, "grid_to_sem needs a mesh");
    ensure(g.dim == mesh->dim, "grid/mesh dimension mismatch");
    for (int a = 0; a < g.dim; ++a)
        ensure(std::abs(g.length[a] - mesh->length[a]) <= 1e-9 * mesh->length[a],
               "grid/mesh domain lengths differ");
    ensure(g.data.size() == g.points() * g.channels, "grid data size mismatch");

    const int dim = g.dim;
    const int M = mesh->modes;
    const int C = g.channels;

    // Interpolation matrices grid -> distinct collocation points, one per axis.
    std::array<RowMat, 3> T;
    std::array<int, 3> dist{1, 1, 1};
    for (int a = 0; a < dim; ++a) {
        const int n = g.extent[a];
        dist[a] = mesh->distinct(a);
        T[a].resize(dist[a], n);
        for (int h = 0; h < mesh->elems[a]; ++h)
            for (int m = 0; m < M - 1; ++m) {
                const double theta = kTwoPi * mesh->node_coord(a, h, m) / mesh->length[a];
                const int t = h * (M - 1) + m;
                for (int gidx = 0; gidx < n; ++gidx)
                    T[a](t, gidx) = trig_kernel(n, theta - kTwoPi * gidx / n);
            }
    }

    // Contract axis by axis; the buffer keeps layout [x1][x2][x3][C].
    std::vector<double> buf = g.data;
    std::array<int, 3> cur{g.extent[0], g.extent[1], g.extent[2]};
    for (int a = 0; a < dim; ++a) {
        int pre = 1, post = C;
        for (int b = 0; b < a; ++b) pre *= cur[b];
        for (int b = a + 1; b < 3; ++b) post *= cur[b];
        std::vector<double> next(static_cast<std::size_t>(pre) * dist[a] * post);
        for (int p = 0; p < pre; ++p) {
            MapConst src(buf.data() + static_cast<std::size_t>(p) * cur[a] * post, cur[a], post);
            MapMat dst(next.data() + static_cast<std::size_t>(p) * dist[a] * post, dist[a], post);
            dst.noalias() = T[a] * src;
        }
        buf = std::move(next);
        cur[a] = dist[a];
    }

    // Duplicate interface nodes back into the per-element layout.
    SemField f = make_sem_field(mesh, C);
    f.time = g.time;
    std::array<std::vector<int>, 3> node_map;  // (h, m) -> distinct index
    for (int a = 0; a < dim; ++a) {
        node_map[a].resize(static_cast<std::size_t>(mesh->elems[a]) * M);
        for (int h = 0; h < mesh->elems[a]; ++h)
            for (int m = 0; m < M; ++m)
                node_map[a][h * M + m] =
                    m == M - 1 ? ((h + 1) % mesh->elems[a]) * (M - 1) : h * (M - 1) + m;
    }
    std::array<int, 3> h{0, 0, 0}, n{0, 0, 0};
    for (h[0] = 0; h[0] < mesh->elems[0]; ++h[0])
        for (h[1] = 0; h[1] < mesh->elems[1]; ++h[1])
            for (h[2] = 0; h[2] < mesh->elems[2]; ++h[2]) {
                const int e = mesh->elem_index(h);
                const int lim2 = dim > 2 ? M : 1;
                for (n[0] = 0; n[0] < M; ++n[0])
                    for (n[1] = 0; n[1] < M; ++n[1])
                        for (n[2] = 0; n[2] < lim2; ++n[2]) {
                            std::size_t t = 0;
                            for (int a = 0; a < dim; ++a)
                                t = t * dist[a] + node_map[a][h[a] * M + n[a]];
                            const double* src = buf.data() + (t * C);
                            double* dst = &f.at(e, mesh->node_index(n), 0);
                            std::memcpy(dst, src, sizeof(double) * C);
                        }
            }
    return f;
}

std::vector<double> sem_eval(const SemField& f, std::span<const double> points) {
    const SemMesh& mesh = *f.mesh;
    const int dim = mesh.dim;
    ensure(points.size() % dim == 0, "flattened point list size must be a multiple of dim");
    const std::size_t npts = points.size() / dim;
    const int M = mesh.modes;
    const int C = f.channels;

    SemField modal_store;
    const SemField* fm = &f;
    if (f.layout == SemLayout::Nodal) {
        modal_store = nodal_to_modal(f);
        fm = &modal_store;
    }

    std::vector<double> out(npts * C, 0.0);
    std::array<std::vector<double>, 3> basis;
    for (int a = 0; a < dim; ++a) basis[a].resize(M);
    std::array<int, 3> h{0, 0, 0};

    for (std::size_t i = 0; i < npts; ++i) {
        for (int a = 0; a < dim; ++a) {
            double x = points[i * dim + a];
            const double L = mesh.length[a];
            x -= L * std::floor(x / L);  // periodic wrap into [0, L)
            if (x >= L) x = 0.0;
            const double d = mesh.delta(a);
            int e = static_cast<int>(std::floor(x / d));
            if (e >= mesh.elems[a]) e = mesh.elems[a] - 1;
            double xi = x / d - e;
            if (xi < 0.0) xi = 0.0;
            if (xi > 1.0) xi = 1.0;
            h[a] = e;
            modal_basis_eval_all(mesh.kind, M, xi, basis[a]);
        }
        const int e = mesh.elem_index(h);
        double* dst = out.data() + i * C;
        if (dim == 2) {
            for (int m1 = 0; m1 < M; ++m1)
                for (int m2 = 0; m2 < M; ++m2) {
                    const double w = basis[0][m1] * basis[1][m2];
                    const double* src = &fm->at(e, m1 * M + m2, 0);
                    for (int c = 0; c < C; ++c) dst[c] += w * src[c];
                }
        } else {
            for (int m1 = 0; m1 < M; ++m1)
                for (int m2 = 0; m2 < M; ++m2) {
                    const double w12 = basis[0][m1] * basis[1][m2];
                    for (int m3 = 0; m3 < M; ++m3) {
                        const double w = w12 * basis[2][m3];
                        const double* src = &fm->at(e, (m1 * M + m2) * M + m3, 0);
                        for (int c = 0; c < C; ++c) dst[c] += w * src[c];
                    }
                }
        }
    }
    return out;
}

GridField sem_to_grid(const SemField& f, std::array<int, 3> extent) {
    const SemMesh& mesh = *f.mesh;
    GridField g = make_grid_field(mesh.dim, extent, mesh.length, f.channels);
    g.time = f.time;
    std::vector<double> pts;
    pts.reserve(g.points() * mesh.dim);
    std::array<int, 3> i{0, 0, 0};
    for (i[0] = 0; i[0] < g.extent[0]; ++i[0])
        for (i[1] = 0; i[1] < g.extent[1]; ++i[1])
            for (i[2] = 0; i[2] < g.extent[2]; ++i[2])
                for (int a = 0; a < mesh.dim; ++a) pts.push_back(g.coord(a, i[a]));
    g.data = sem_eval(f, pts);
    return g;
}

namespace {

// 0/1 gather matrix for the spectral coarsening: rows pick modes
// 0..k-2 and the upper hat M-1.
std::vector<double> truncate_matrix(int k, int M) {
    std::vector<double> B(static_cast<std::size_t>(k) * M, 0.0);
    for (int m = 0; m + 1 < k; ++m) B[m * M + m] = 1.0;
    B[(k - 1) * M + (M - 1)] = 1.0;
    return B;
}

}  // namespace

SemField les_truncate(const SemField& f, int k_max) {
    const SemMesh& mesh = *f.mesh;
    ensure(k_max >= 3 && k_max <= mesh.modes, "les_truncate needs 3 <= k_max <= M");
    const bool was_nodal = f.layout == SemLayout::Nodal;
    SemField modal = was_nodal ? nodal_to_modal(f) : f;

    auto coarse = make_sem_mesh(mesh.dim, mesh.kind, mesh.elems, k_max, mesh.length);
    SemField out = make_sem_field(coarse, f.channels, SemLayout::Modal);
    out.time = f.time;

    const std::vector<double> B = truncate_matrix(k_max, mesh.modes);
    std::array<int, 3> dims{mesh.modes, mesh.modes, mesh.modes};
    std::vector<double> buf = std::move(modal.data);
    for (int a = 0; a < mesh.dim; ++a) {
        buf = apply_local(buf, mesh.n_elems(), dims, mesh.dim, f.channels, a, B.data(), k_max,
                          mesh.modes);
        dims[a] = k_max;
    }
    out.data = std::move(buf);
    return was_nodal ? modal_to_nodal(out) : out;
}

SemField sem_upsample(const SemField& f, int modes) {
    const SemMesh& mesh = *f.mesh;
    ensure(modes >= mesh.modes, "sem_upsample target order must be >= source order");
    const bool was_nodal = f.layout == SemLayout::Nodal;
    SemField modal = was_nodal ? nodal_to_modal(f) : f;

    auto fine = make_sem_mesh(mesh.dim, mesh.kind, mesh.elems, modes, mesh.length);
    SemField out = make_sem_field(fine, f.channels, SemLayout::Modal);
    out.time = f.time;

    // Transpose of the coarsening gather: an exact embedding.
    std::vector<double> G = truncate_matrix(mesh.modes, modes);
    std::vector<double> B(static_cast<std::size_t>(modes) * mesh.modes, 0.0);
    for (int r = 0; r < mesh.modes; ++r)
        for (int c = 0; c < modes; ++c) B[c * mesh.modes + r] = G[r * modes + c];

    std::array<int, 3> dims{mesh.modes, mesh.modes, mesh.modes};
    std::vector<double> buf = std::move(modal.data);
    for (int a = 0; a < mesh.dim; ++a) {
        buf = apply_local(buf, mesh.n_elems(), dims, mesh.dim, f.channels, a, B.data(), modes,
                          mesh.modes);
        dims[a] = modes;
    }
    out.data = std::move(buf);
    return was_nodal ? modal_to_nodal(out) : out;
}

}  // namespace semflow
