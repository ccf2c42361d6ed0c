#pragma once

#include <vector>

#include "semflow/basis/polynomials.hpp"

namespace semflow {

/// Collocation rule on [0, 1].  Nodes are strictly increasing and include
/// both endpoints; weights are positive and sum to 1.
struct QuadratureRule {
    BasisKind kind;
    std::vector<double> nodes;
    std::vector<double> weights;

    int size() const { return static_cast<int>(nodes.size()); }
};

/// Clenshaw-Curtis on Chebyshev-Gauss-Lobatto points (exact through degree
/// M-1) or Gauss-Lobatto-Legendre (exact through degree 2M-3).  M >= 2.
QuadratureRule quadrature_rule(BasisKind kind, int M);

}  // namespace semflow
