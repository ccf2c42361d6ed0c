#pragma once

#include <functional>

#include "semflow/core/rng.hpp"
#include "semflow/tensor/tensor.hpp"

namespace semflow {

struct GradCheckReport {
    double max_rel_err = 0.0;   // worst probed entry
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int probes = 0;
};

/// Central-difference validation of reverse-mode gradients, in double.
/// `build` must construct a rank-0 loss from leaves created on the given
/// tape in the order of `inputs`.  A random subset of entries per input is
/// probed; the relative error uses a floor tied to the gradient scale so
/// negligible components cannot dominate the verdict.
GradCheckReport gradcheck(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& build,
    const std::vector<TensorData>& inputs, int probes_per_input = 24, double eps = 1e-5,
    std::uint64_t seed = 12345);

}  // namespace semflow
