#pragma once

#include <array>
#include <memory>
#include <vector>

#include "semflow/basis/quadrature.hpp"

namespace semflow {

/// Spectral-element mesh: a periodic box [0,L1) x ... split into uniform
/// elements with M collocation nodes per axis in every element.  Unused
/// trailing axes have one element of length 1 so 2D and 3D share indexing.
struct SemMesh {
    int dim = 2;
    BasisKind kind = BasisKind::Chebyshev;
    std::array<int, 3> elems{1, 1, 1};
    int modes = 0;  // M, shared by all axes
    std::array<double, 3> length{1.0, 1.0, 1.0};
    QuadratureRule rule;

    // Nodal<->modal change of basis on one axis: vand[n*M+m] = phi_m(xi_n),
    // vand_inv is its inverse.  Row-major M x M.
    std::vector<double> vand;
    std::vector<double> vand_inv;

    int n_elems() const { return elems[0] * elems[1] * elems[2]; }
    int nodes_per_elem() const {
        int p = 1;
        for (int a = 0; a < dim; ++a) p *= modes;
        return p;
    }
    double delta(int axis) const { return length[axis] / elems[axis]; }
    /// Distinct collocation points along an axis once shared interface
    /// nodes are counted only once.
    int distinct(int axis) const { return elems[axis] * (modes - 1); }

    int elem_index(const std::array<int, 3>& h) const {
        return (h[0] * elems[1] + h[1]) * elems[2] + h[2];
    }
    int node_index(const std::array<int, 3>& n) const {
        int idx = n[0];
        for (int a = 1; a < dim; ++a) idx = idx * modes + n[a];
        return idx;
    }
    /// Global coordinate of node n of element h along `axis`.
    double node_coord(int axis, int h, int n) const {
        return (static_cast<double>(h) + rule.nodes[n]) * delta(axis);
    }

    bool same_layout(const SemMesh& o) const {
        return dim == o.dim && kind == o.kind && elems == o.elems &&
               modes == o.modes && length == o.length;
    }
};

/// Builds a mesh and its (checked) change-of-basis matrices.
/// dim in {2,3}, modes >= 3, elems >= 1 per used axis, lengths > 0.
std::shared_ptr<const SemMesh> make_sem_mesh(int dim, BasisKind kind,
                                             std::array<int, 3> elems, int modes,
                                             std::array<double, 3> length);

}  // namespace semflow
