#pragma once

#include <complex>

#include "semflow/tensor/tensor.hpp"

namespace semflow::ops {

// Elementwise; shapes must match exactly.
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);

Tensor neg(Tensor a);
Tensor scale(Tensor a, double s);          // constant factor
Tensor add_scalar(Tensor a, double s);     // constant offset
Tensor gelu(Tensor a);                     // exact erf form
Tensor sin(Tensor a);
Tensor cos(Tensor a);
Tensor exp(Tensor a);
Tensor sqrt(Tensor a);

/// x [..., C] + b [C], broadcast over all leading axes.
Tensor bias_add(Tensor x, Tensor b);

Tensor sum_all(Tensor a);  // rank-0
Tensor mean_all(Tensor a);

/// Softmax along the last axis.
Tensor softmax_lastaxis(Tensor x);

/// Layer normalization over the last axis with learnable gain/bias [C].
Tensor layer_norm_lastaxis(Tensor x, Tensor gain, Tensor bias, double eps);

/// [m, k] x [k, n] -> [m, n]; both sides differentiable.
Tensor matmul(Tensor a, Tensor b);

/// Batched matmul on rank-3 tensors [B, ., .]; optional transposes apply to
/// the trailing two axes.
Tensor bmm(Tensor a, Tensor b, bool trans_a = false, bool trans_b = false);

/// Contracts `axis` of x (size m_in) with a constant m_out x m_in matrix
/// (row-major span copied at call time).
Tensor axis_apply(Tensor x, int axis, std::span<const double> matrix, int m_out);

Tensor reshape(Tensor x, std::vector<std::int64_t> shape);
Tensor permute(Tensor x, std::vector<int> perm);

/// Gathers slices of `axis` by a constant index list (repeats allowed; the
/// adjoint scatter-adds).
Tensor index_select(Tensor x, int axis, std::vector<std::int64_t> indices);

Tensor concat_lastaxis(Tensor a, Tensor b);
Tensor slice_lastaxis(Tensor x, std::int64_t start, std::int64_t len);

/// Rotates channel pairs: x viewed as [N, d] with d even; cos/sin are
/// constant [N, d/2] tables.  Pair k of row i turns by the angle whose
/// cosine/sine sit at (i, k).
Tensor rope(Tensor x, const TensorData& cos_tab, const TensorData& sin_tab);

/// 2D complex FFT of x [n1, n2, 2] (interleaved re/im).  Forward is
/// unnormalized, inverse divides by n1*n2; both are exact adjoint pairs up
/// to that scale, which backward accounts for.
Tensor fft2(Tensor x, bool forward);

Tensor real_part(Tensor x);    // [..., 2] -> [...]
Tensor make_complex(Tensor r); // [...] -> [..., 2], zero imaginary lane

/// Pointwise multiply by a constant complex field c [...] given as
/// interleaved doubles of the same leading shape as x [..., 2].
Tensor cmul_const(Tensor x, std::span<const std::complex<double>> c);

/// sqrt(sum((a-b)^2)) / sqrt(sum(b^2)) as a rank-0 tensor; b is typically a
/// constant target.  The denominator gets a small floor to stay finite.
Tensor rel_l2(Tensor a, Tensor b);

}  // namespace semflow::ops
