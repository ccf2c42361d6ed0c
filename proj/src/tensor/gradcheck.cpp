#include "semflow/tensor/gradcheck.hpp"

#include <cmath>

namespace semflow {

namespace {

double eval_loss(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& build,
                 const std::vector<TensorData>& inputs) {
    Tape tape(Dtype::F64);
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
    Tensor loss = build(tape, leaves);
    return tape.val(loss).scalar();
}

}  // namespace

GradCheckReport gradcheck(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& build,
    const std::vector<TensorData>& inputs, int probes_per_input, double eps,
    std::uint64_t seed) {
    for (const auto& in : inputs)
        ensure(in.dtype == Dtype::F64, "gradcheck runs in double precision only");

    // One reverse sweep gives every analytic gradient.
    Tape tape(Dtype::F64);
    std::vector<Tensor> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
    Tensor loss = build(tape, leaves);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (Tensor l : leaves) analytic.push_back(tape.grad(l).to_doubles());

    GradCheckReport rep;
    Rng rng(seed);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const std::size_t n = inputs[t].numel();
        if (n == 0) continue;
        double gscale = 0.0;
        for (double g : analytic[t]) gscale = std::max(gscale, std::abs(g));
        const double floor = 1e-7 * (1.0 + gscale);

        const int probes = std::min<std::size_t>(probes_per_input, n);
        for (int k = 0; k < probes; ++k) {
            const std::size_t i =
                probes == static_cast<int>(n) ? k : static_cast<std::size_t>(rng.below(n));
            std::vector<TensorData> work = inputs;
            const double x0 = work[t].f64[i];
            const double h = eps * std::max(1.0, std::abs(x0));
            work[t].f64[i] = x0 + h;
            const double fp = eval_loss(build, work);
            work[t].f64[i] = x0 - h;
            const double fm = eval_loss(build, work);
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(fd), floor});
            const double rel = std::abs(a - fd) / denom;
            ++rep.probes;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_analytic = a;
                rep.worst_numeric = fd;
            }
        }
    }
    return rep;
}

}  // namespace semflow
