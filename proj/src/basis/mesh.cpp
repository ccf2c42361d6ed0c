#include "semflow/basis/mesh.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "semflow/basis/field.hpp"
#include "semflow/basis/polynomials.hpp"
#include "semflow/core/error.hpp"

namespace semflow {

std::shared_ptr<const SemMesh> make_sem_mesh(int dim, BasisKind kind,
                                             std::array<int, 3> elems, int modes,
                                             std::array<double, 3> length) {
    ensure(dim == 2 || dim == 3, "mesh dimension must be 2 or 3");
    ensure(modes >= 3, "mesh needs at least 3 modes per axis");
    for (int a = 0; a < dim; ++a) {
        ensure(elems[a] >= 1, "element count must be positive");
        ensure(length[a] > 0.0, "domain length must be positive");
    }
    for (int a = dim; a < 3; ++a) {
        elems[a] = 1;
        length[a] = 1.0;
    }

    auto mesh = std::make_shared<SemMesh>();
    mesh->dim = dim;
    mesh->kind = kind;
    mesh->elems = elems;
    mesh->modes = modes;
    mesh->length = length;
    mesh->rule = quadrature_rule(kind, modes);

    const int M = modes;
    Eigen::MatrixXd V(M, M);
    std::vector<double> row(M);
    for (int n = 0; n < M; ++n) {
        modal_basis_eval_all(kind, M, mesh->rule.nodes[n], row);
        for (int m = 0; m < M; ++m) V(n, m) = row[m];
    }

    // The modal basis must be safely invertible at the collocation points;
    // a blow-up here means the order/family combination is unusable.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(V);
    const double cond =
        svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
    ensure_numeric(std::isfinite(cond) && cond <= 1e12,
                   "modal basis is ill-conditioned at this order");

    Eigen::MatrixXd Vinv = V.partialPivLu().inverse();
    mesh->vand.resize(static_cast<std::size_t>(M) * M);
    mesh->vand_inv.resize(static_cast<std::size_t>(M) * M);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) {
            mesh->vand[i * M + j] = V(i, j);
            mesh->vand_inv[i * M + j] = Vinv(i, j);
        }
    return mesh;
}

SemField make_sem_field(std::shared_ptr<const SemMesh> mesh, int channels, SemLayout layout) {
    ensure(mesh != nullptr, "field needs a mesh");
    ensure(channels >= 1, "field needs at least one channel");
    SemField f;
    f.mesh = std::move(mesh);
    f.layout = layout;
    f.channels = channels;
    f.data.assign(f.expected_size(), 0.0);
    return f;
}

GridField make_grid_field(int dim, std::array<int, 3> extent, std::array<double, 3> length,
                          int channels) {
    ensure(dim == 2 || dim == 3, "grid dimension must be 2 or 3");
    ensure(channels >= 1, "grid needs at least one channel");
    for (int a = 0; a < dim; ++a) {
        ensure(extent[a] >= 1, "grid extent must be positive");
        ensure(length[a] > 0.0, "grid length must be positive");
    }
    for (int a = dim; a < 3; ++a) {
        extent[a] = 1;
        length[a] = 1.0;
    }
    GridField g;
    g.dim = dim;
    g.extent = extent;
    g.length = length;
    g.channels = channels;
    g.data.assign(g.points() * channels, 0.0);
    return g;
}

}  // namespace semflow
