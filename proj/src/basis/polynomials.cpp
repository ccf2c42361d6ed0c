#include "semflow/basis/polynomials.hpp"

#include "semflow/core/error.hpp"

namespace semflow {

namespace {

void check_point(double x) {
    ensure(x >= -1e-12 && x <= 1.0 + 1e-12, "polynomial argument outside [0,1]");
}

}  // namespace

void orthopoly_eval_all(BasisKind kind, int m_max, double x, std::span<double> out) {
    ensure(m_max >= 0, "polynomial order must be >= 0");
    ensure(out.size() == static_cast<std::size_t>(m_max) + 1, "output span size mismatch");
    check_point(x);
    const double y = 2.0 * x - 1.0;
    out[0] = 1.0;
    if (m_max == 0) return;
    out[1] = y;
    if (kind == BasisKind::Chebyshev) {
        for (int m = 1; m < m_max; ++m) out[m + 1] = 2.0 * y * out[m] - out[m - 1];
    } else {
        for (int m = 1; m < m_max; ++m)
            out[m + 1] = ((2.0 * m + 1.0) * y * out[m] - m * out[m - 1]) / (m + 1.0);
    }
}

double orthopoly_eval(BasisKind kind, int m, double x) {
    ensure(m >= 0, "polynomial order must be >= 0");
    check_point(x);
    const double y = 2.0 * x - 1.0;
    double pm1 = 1.0;  // p_0
    if (m == 0) return pm1;
    double pm = y;  // p_1
    for (int k = 1; k < m; ++k) {
        double next;
        if (kind == BasisKind::Chebyshev) {
            next = 2.0 * y * pm - pm1;
        } else {
            next = ((2.0 * k + 1.0) * y * pm - k * pm1) / (k + 1.0);
        }
        pm1 = pm;
        pm = next;
    }
    return pm;
}

void modal_basis_eval_all(BasisKind kind, int M, double x, std::span<double> out) {
    ensure(M >= 2, "modal basis needs at least the two hat functions");
    ensure(out.size() == static_cast<std::size_t>(M), "output span size mismatch");
    check_point(x);
    out[0] = 1.0 - x;
    out[M - 1] = x;
    if (M == 2) return;
    const double bubble = x - x * x;
    // Interior mode m multiplies the bubble by p_{m-1}, m = 1..M-2.
    const double y = 2.0 * x - 1.0;
    double pm1 = 1.0;
    double pm = y;
    out[1] = bubble * pm1;
    for (int m = 2; m <= M - 2; ++m) {
        out[m] = bubble * pm;
        double next;
        if (kind == BasisKind::Chebyshev) {
            next = 2.0 * y * pm - pm1;
        } else {
            const int k = m - 1;
            next = ((2.0 * k + 1.0) * y * pm - k * pm1) / (k + 1.0);
        }
        pm1 = pm;
        pm = next;
    }
}

double modal_basis_eval(BasisKind kind, int M, int m, double x) {
    ensure(M >= 2, "modal basis needs at least the two hat functions");
    ensure(m >= 0 && m < M, "modal index out of range");
    check_point(x);
    if (m == 0) return 1.0 - x;
    if (m == M - 1) return x;
    return (x - x * x) * orthopoly_eval(kind, m - 1, x);
}

}  // namespace semflow
