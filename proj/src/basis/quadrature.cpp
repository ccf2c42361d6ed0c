#include "semflow/basis/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "semflow/core/error.hpp"

namespace semflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

// P_n and P'_n on [-1,1] at an interior point.
void legendre_pair(int n, double x, double& p, double& dp) {
    double pm1 = 1.0, pm = x;
    if (n == 0) { p = 1.0; dp = 0.0; return; }
    for (int k = 1; k < n; ++k) {
        const double next = ((2.0 * k + 1.0) * x * pm - k * pm1) / (k + 1.0);
        pm1 = pm;
        pm = next;
    }
    p = pm;
    if (std::abs(x * x - 1.0) < 1e-300) {
        const double sign = (x > 0.0 || n % 2 == 1) ? 1.0 : -1.0;
        dp = sign * n * (n + 1.0) / 2.0;
    } else {
        dp = n * (x * pm - pm1) / (x * x - 1.0);
    }
}

// Clenshaw-Curtis weights on [-1,1] for nodes y_j = cos(pi j / n), found by
// solving the Chebyshev moment system.  In this basis the Vandermonde is a
// cosine matrix and the solve is benign for every order we use.
Eigen::VectorXd clenshaw_curtis_weights(int n) {
    const int m = n + 1;
    Eigen::MatrixXd A(m, m);
    Eigen::VectorXd b(m);
    for (int k = 0; k < m; ++k) {
        for (int j = 0; j < m; ++j) A(k, j) = std::cos(kPi * k * j / n);
        b(k) = (k % 2 == 0) ? 2.0 / (1.0 - static_cast<double>(k) * k) : 0.0;
    }
    b(0) = 2.0;
    return A.colPivHouseholderQr().solve(b);
}

}  // namespace

QuadratureRule quadrature_rule(BasisKind kind, int M) {
    ensure(M >= 2, "quadrature rule needs at least 2 nodes");
    const int n = M - 1;
    QuadratureRule rule;
    rule.kind = kind;
    rule.nodes.resize(M);
    rule.weights.resize(M);

    if (kind == BasisKind::Chebyshev) {
        const Eigen::VectorXd w = clenshaw_curtis_weights(n);
        for (int j = 0; j < M; ++j) {
            // Increasing on [0,1]; node j here is cos(pi (n-j)/n) on [-1,1],
            // and the weights are symmetric.
            rule.nodes[j] = 0.5 * (1.0 - std::cos(kPi * j / n));
            rule.weights[j] = 0.5 * w(n - j);
        }
    } else {
        // Gauss-Lobatto-Legendre: interior nodes are the roots of P'_n.
        rule.nodes[0] = 0.0;
        rule.nodes[M - 1] = 1.0;
        for (int j = 1; j < n; ++j) {
            double x = -std::cos(kPi * j / n);  // CGL starting guess
            for (int it = 0; it < 100; ++it) {
                double p, dp;
                legendre_pair(n, x, p, dp);
                const double d2p = (2.0 * x * dp - n * (n + 1.0) * p) / (1.0 - x * x);
                const double step = dp / d2p;
                x -= step;
                if (std::abs(step) < 1e-15) break;
            }
            rule.nodes[j] = 0.5 * (x + 1.0);
        }
        const double scale = 2.0 / (n * (n + 1.0));
        for (int j = 0; j < M; ++j) {
            double p, dp;
            legendre_pair(n, 2.0 * rule.nodes[j] - 1.0, p, dp);
            rule.weights[j] = 0.5 * scale / (p * p);
        }
    }

    for (int j = 1; j < M; ++j)
        ensure_numeric(rule.nodes[j] > rule.nodes[j - 1], "quadrature nodes not increasing");
    return rule;
}

}  // namespace semflow
