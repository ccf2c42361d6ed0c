#pragma once

#include <array>
#include <memory>
#include <vector>

#include "semflow/basis/mesh.hpp"

namespace semflow {

enum class SemLayout { Nodal, Modal };

/// Field on a spectral-element mesh, stored densely per element:
/// data[(h * P + n) * C + c] with P = M^dim local nodes (or modal
/// coefficients, depending on layout).  Interface nodes are duplicated in
/// the nodal layout; a continuous field carries identical values there.
struct SemField {
    std::shared_ptr<const SemMesh> mesh;
    SemLayout layout = SemLayout::Nodal;
    int channels = 0;
    double time = 0.0;
    std::vector<double> data;

    std::size_t expected_size() const {
        return static_cast<std::size_t>(mesh->n_elems()) * mesh->nodes_per_elem() * channels;
    }
    double& at(int h, int n, int c) {
        return data[(static_cast<std::size_t>(h) * mesh->nodes_per_elem() + n) * channels + c];
    }
    const double& at(int h, int n, int c) const {
        return data[(static_cast<std::size_t>(h) * mesh->nodes_per_elem() + n) * channels + c];
    }
};

/// Allocates a zero field; validates channels >= 1.
SemField make_sem_field(std::shared_ptr<const SemMesh> mesh, int channels,
                        SemLayout layout = SemLayout::Nodal);

/// Uniform periodic grid sample of a field: data[(((i1*n2)+i2)*n3+i3)*C+c],
/// point i along axis a sits at x = i * length[a] / extent[a].
struct GridField {
    int dim = 2;
    std::array<int, 3> extent{1, 1, 1};
    std::array<double, 3> length{1.0, 1.0, 1.0};
    int channels = 0;
    double time = 0.0;
    std::vector<double> data;

    std::size_t points() const {
        return static_cast<std::size_t>(extent[0]) * extent[1] * extent[2];
    }
    double coord(int axis, int i) const { return i * length[axis] / extent[axis]; }
    double& at(const std::array<int, 3>& i, int c) {
        return data[((static_cast<std::size_t>(i[0]) * extent[1] + i[1]) * extent[2] + i[2]) *
                        channels + c];
    }
    const double& at(const std::array<int, 3>& i, int c) const {
        return data[((static_cast<std::size_t>(i[0]) * extent[1] + i[1]) * extent[2] + i[2]) *
                        channels + c];
    }
};

GridField make_grid_field(int dim, std::array<int, 3> extent,
                          std::array<double, 3> length, int channels);

}  // namespace semflow
