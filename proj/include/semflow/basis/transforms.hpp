#pragma once

#include <span>

#include "semflow/basis/field.hpp"

namespace semflow {

/// Change of representation per element, axis by axis.  Exact inverses of
/// each other (up to roundoff); layouts must match the direction.
SemField nodal_to_modal(const SemField& f);
SemField modal_to_nodal(const SemField& f);

/// Averages duplicated interface values so shared nodes become bit-identical
/// along every axis.  Nodal layout only.
void enforce_continuity(SemField& f);

/// Projects a periodic uniform-grid sample onto the mesh by trigonometric
/// interpolation at the collocation points.  Exact (to roundoff) for fields
/// band-limited below the grid Nyquist.  Grid and mesh lengths must agree.
SemField grid_to_sem(const GridField& g, std::shared_ptr<const SemMesh> mesh);

/// Evaluates the field at arbitrary points (periodic wrap).  points is
/// flattened [n][dim]; the result is flattened [n][channels].
std::vector<double> sem_eval(const SemField& f, std::span<const double> points);

/// Samples the field on a uniform periodic grid of the given extent.
GridField sem_to_grid(const SemField& f, std::array<int, 3> extent);

/// Spectral coarsening: keeps modal coefficients 0..k_max-2 plus the upper
/// hat (which moves to slot k_max-1) on every axis, yielding a field with
/// the same elements but only k_max modes.  Requires 3 <= k_max <= M.
SemField les_truncate(const SemField& f, int k_max);

/// Exact embedding of a coarse-mode field into a finer modal space on the
/// same element grid (inverse direction of les_truncate's gather).
/// Returns a *nodal* field with `modes` modes per axis.
SemField sem_upsample(const SemField& f, int modes);

}  // namespace semflow
