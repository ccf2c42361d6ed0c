#include "semflow/tensor/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "semflow/core/fft.hpp"

namespace semflow::ops {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tape& tp(Tensor t) {
    ensure(t.valid(), "operation on an empty tensor handle");
    return *t.tape;
}

void same_tape(Tensor a, Tensor b) {
    ensure(a.tape == b.tape, "operands live on different tapes");
}

void same_shape(Tensor a, Tensor b) {
    ensure(a.shape() == b.shape(), "operand shapes differ");
}

std::size_t outer_product(const std::vector<std::int64_t>& shape, int upto) {
    std::size_t n = 1;
    for (int i = 0; i < upto; ++i) n *= static_cast<std::size_t>(shape[i]);
    return n;
}

template <class T>
using RowMatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

enum class Bin { Add, Sub, Mul, Div };

Tensor binary(Tensor a, Tensor b, Bin op) {
    same_tape(a, b);
    same_shape(a, b);
    Tape& t = tp(a);
    TensorData out = TensorData::zeros(t.dtype(), a.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto x = t.val(a).span<T>();
        auto y = t.val(b).span<T>();
        auto z = out.span<T>();
        switch (op) {
            case Bin::Add: for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i]; break;
            case Bin::Sub: for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i]; break;
            case Bin::Mul: for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i]; break;
            case Bin::Div: for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] / y[i]; break;
        }
    });
    return t.emit(std::move(out), {a.id, b.id}, [op](Tape& t, int self) {
        const auto& ps = t.parents(self);
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            const std::size_t n = g.size();
            if (t.needs_grad(ps[0])) {
                auto da = t.grad_buffer(ps[0]).span<T>();
                switch (op) {
                    case Bin::Add:
                    case Bin::Sub: for (std::size_t i = 0; i < n; ++i) da[i] += g[i]; break;
                    case Bin::Mul: {
                        auto y = t.val(ps[1]).span<T>();
                        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * y[i];
                        break;
                    }
                    case Bin::Div: {
                        auto y = t.val(ps[1]).span<T>();
                        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] / y[i];
                        break;
                    }
                }
            }
            if (t.needs_grad(ps[1])) {
                auto db = t.grad_buffer(ps[1]).span<T>();
                switch (op) {
                    case Bin::Add: for (std::size_t i = 0; i < n; ++i) db[i] += g[i]; break;
                    case Bin::Sub: for (std::size_t i = 0; i < n; ++i) db[i] -= g[i]; break;
                    case Bin::Mul: {
                        auto x = t.val(ps[0]).span<T>();
                        for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * x[i];
                        break;
                    }
                    case Bin::Div: {
                        auto z = t.val(self).span<T>();
                        auto y = t.val(ps[1]).span<T>();
                        for (std::size_t i = 0; i < n; ++i) db[i] -= g[i] * z[i] / y[i];
                        break;
                    }
                }
            }
        });
    });
}

enum class Un { Neg, Gelu, Sin, Cos, Exp, Sqrt };

Tensor unary(Tensor a, Un op) {
    Tape& t = tp(a);
    TensorData out = TensorData::zeros(t.dtype(), a.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto x = t.val(a).span<T>();
        auto z = out.span<T>();
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double v = static_cast<double>(x[i]);
            double r = 0.0;
            switch (op) {
                case Un::Neg: r = -v; break;
                case Un::Gelu: r = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); break;
                case Un::Sin: r = std::sin(v); break;
                case Un::Cos: r = std::cos(v); break;
                case Un::Exp: r = std::exp(v); break;
                case Un::Sqrt: r = std::sqrt(v); break;
            }
            z[i] = static_cast<T>(r);
        }
    });
    return t.emit(std::move(out), {a.id}, [op](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            auto x = t.val(p).span<T>();
            auto y = t.val(self).span<T>();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = static_cast<double>(x[i]);
                double slope = 0.0;
                switch (op) {
                    case Un::Neg: slope = -1.0; break;
                    case Un::Gelu:
                        slope = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
                                v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
                        break;
                    case Un::Sin: slope = std::cos(v); break;
                    case Un::Cos: slope = -std::sin(v); break;
                    case Un::Exp: slope = static_cast<double>(y[i]); break;
                    case Un::Sqrt: slope = 0.5 / static_cast<double>(y[i]); break;
                }
                d[i] += g[i] * static_cast<T>(slope);
            }
        });
    });
}

}  // namespace

Tensor add(Tensor a, Tensor b) { return binary(a, b, Bin::Add); }
Tensor sub(Tensor a, Tensor b) { return binary(a, b, Bin::Sub); }
Tensor mul(Tensor a, Tensor b) { return binary(a, b, Bin::Mul); }
Tensor div(Tensor a, Tensor b) { return binary(a, b, Bin::Div); }
Tensor neg(Tensor a) { return unary(a, Un::Neg); }
Tensor gelu(Tensor a) { return unary(a, Un::Gelu); }
Tensor sin(Tensor a) { return unary(a, Un::Sin); }
Tensor cos(Tensor a) { return unary(a, Un::Cos); }
Tensor exp(Tensor a) { return unary(a, Un::Exp); }
Tensor sqrt(Tensor a) { return unary(a, Un::Sqrt); }

Tensor scale(Tensor a, double s) {
    Tape& t = tp(a);
    TensorData out = TensorData::zeros(t.dtype(), a.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto x = t.val(a).span<T>();
        auto z = out.span<T>();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<T>(s) * x[i];
    });
    return t.emit(std::move(out), {a.id}, [s](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += static_cast<T>(s) * g[i];
        });
    });
}

Tensor add_scalar(Tensor a, double s) {
    Tape& t = tp(a);
    TensorData out = TensorData::zeros(t.dtype(), a.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto x = t.val(a).span<T>();
        auto z = out.span<T>();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + static_cast<T>(s);
    });
    return t.emit(std::move(out), {a.id}, [](Tape& t, int self) {
        const int p = t.parents(self)[0];
        accumulate_grad(t, p, t.grad_buffer(self));
    });
}

Tensor bias_add(Tensor x, Tensor b) {
    same_tape(x, b);
    Tape& t = tp(x);
    ensure(b.shape().size() == 1 && !x.shape().empty() && x.shape().back() == b.shape()[0],
           "bias_add needs x [..., C] and b [C]");
    const std::size_t C = static_cast<std::size_t>(b.shape()[0]);
    const std::size_t rows = x.numel() / C;
    TensorData out = TensorData::zeros(t.dtype(), x.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto bs = t.val(b).span<T>();
        auto z = out.span<T>();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < C; ++c) z[r * C + c] = xs[r * C + c] + bs[c];
    });
    return t.emit(std::move(out), {x.id, b.id}, [rows, C](Tape& t, int self) {
        const auto& ps = t.parents(self);
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            if (t.needs_grad(ps[0])) {
                auto dx = t.grad_buffer(ps[0]).span<T>();
                for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
            }
            if (t.needs_grad(ps[1])) {
                auto db = t.grad_buffer(ps[1]).span<T>();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < C; ++c) db[c] += g[r * C + c];
            }
        });
    });
}

Tensor sum_all(Tensor a) {
    Tape& t = tp(a);
    double acc = 0.0;
    dispatch(t.dtype(), [&]<class T>() {
        for (T v : t.val(a).span<T>()) acc += static_cast<double>(v);
    });
    return t.emit(TensorData::scalar_value(t.dtype(), acc), {a.id}, [](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            const T g = t.grad_buffer(self).span<T>()[0];
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
        });
    });
}

Tensor mean_all(Tensor a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Tensor softmax_lastaxis(Tensor x) {
    Tape& t = tp(x);
    ensure(!x.shape().empty(), "softmax needs rank >= 1");
    const std::size_t n = static_cast<std::size_t>(x.shape().back());
    const std::size_t rows = x.numel() / n;
    TensorData out = TensorData::zeros(t.dtype(), x.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto z = out.span<T>();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xi = xs.data() + r * n;
            T* zi = z.data() + r * n;
            double m = static_cast<double>(xi[0]);
            for (std::size_t i = 1; i < n; ++i) m = std::max(m, static_cast<double>(xi[i]));
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(static_cast<double>(xi[i]) - m);
                zi[i] = static_cast<T>(e);
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::size_t i = 0; i < n; ++i) zi[i] = static_cast<T>(zi[i] * inv);
        }
    });
    return t.emit(std::move(out), {x.id}, [rows, n](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto y = t.val(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gi = g.data() + r * n;
                const T* yi = y.data() + r * n;
                T* di = d.data() + r * n;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    dot += static_cast<double>(gi[i]) * static_cast<double>(yi[i]);
                for (std::size_t i = 0; i < n; ++i)
                    di[i] += static_cast<T>(yi[i] * (gi[i] - static_cast<T>(dot)));
            }
        });
    });
}

Tensor layer_norm_lastaxis(Tensor x, Tensor gain, Tensor bias, double eps) {
    same_tape(x, gain);
    same_tape(x, bias);
    Tape& t = tp(x);
    ensure(!x.shape().empty() && gain.shape().size() == 1 && bias.shape().size() == 1,
           "layer_norm needs x [..., C], gain [C], bias [C]");
    const std::size_t C = static_cast<std::size_t>(x.shape().back());
    ensure(gain.numel() == C && bias.numel() == C, "layer_norm parameter size mismatch");
    const std::size_t rows = x.numel() / C;
    TensorData out = TensorData::zeros(t.dtype(), x.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto gs = t.val(gain).span<T>();
        auto bs = t.val(bias).span<T>();
        auto z = out.span<T>();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xi = xs.data() + r * C;
            T* zi = z.data() + r * C;
            double mu = 0.0;
            for (std::size_t c = 0; c < C; ++c) mu += xi[c];
            mu /= static_cast<double>(C);
            double var = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double d = xi[c] - mu;
                var += d * d;
            }
            var /= static_cast<double>(C);
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t c = 0; c < C; ++c)
                zi[c] = static_cast<T>(((xi[c] - mu) * inv) * gs[c] + bs[c]);
        }
    });
    return t.emit(std::move(out), {x.id, gain.id, bias.id}, [rows, C, eps](Tape& t, int self) {
        const auto& ps = t.parents(self);
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto xs = t.val(ps[0]).span<T>();
            auto gn = t.val(ps[1]).span<T>();
            std::vector<double> xhat(C), dxh(C);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xi = xs.data() + r * C;
                const T* gi = g.data() + r * C;
                double mu = 0.0;
                for (std::size_t c = 0; c < C; ++c) mu += xi[c];
                mu /= static_cast<double>(C);
                double var = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double d = xi[c] - mu;
                    var += d * d;
                }
                var /= static_cast<double>(C);
                const double inv = 1.0 / std::sqrt(var + eps);
                for (std::size_t c = 0; c < C; ++c) xhat[c] = (xi[c] - mu) * inv;

                if (t.needs_grad(ps[1])) {
                    auto dg = t.grad_buffer(ps[1]).span<T>();
                    for (std::size_t c = 0; c < C; ++c)
                        dg[c] += static_cast<T>(static_cast<double>(gi[c]) * xhat[c]);
                }
                if (t.needs_grad(ps[2])) {
                    auto db = t.grad_buffer(ps[2]).span<T>();
                    for (std::size_t c = 0; c < C; ++c) db[c] += gi[c];
                }
                if (t.needs_grad(ps[0])) {
                    auto dx = t.grad_buffer(ps[0]).span<T>();
                    double mean_dxh = 0.0, mean_dxh_xhat = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        dxh[c] = static_cast<double>(gi[c]) * static_cast<double>(gn[c]);
                        mean_dxh += dxh[c];
                        mean_dxh_xhat += dxh[c] * xhat[c];
                    }
                    mean_dxh /= static_cast<double>(C);
                    mean_dxh_xhat /= static_cast<double>(C);
                    T* di = dx.data() + r * C;
                    for (std::size_t c = 0; c < C; ++c)
                        di[c] += static_cast<T>(inv * (dxh[c] - mean_dxh - xhat[c] * mean_dxh_xhat));
                }
            }
        });
    });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

Tensor matmul(Tensor a, Tensor b) {
    same_tape(a, b);
    Tape& t = tp(a);
    ensure(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
           "matmul needs [m,k] x [k,n]");
    const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    TensorData out = TensorData::zeros(t.dtype(), {m, n});
    dispatch(t.dtype(), [&]<class T>() {
        Eigen::Map<const RowMatT<T>> A(t.val(a).span<T>().data(), m, k);
        Eigen::Map<const RowMatT<T>> B(t.val(b).span<T>().data(), k, n);
        Eigen::Map<RowMatT<T>> Z(out.span<T>().data(), m, n);
        Z.noalias() = A * B;
    });
    return t.emit(std::move(out), {a.id, b.id}, [m, k, n](Tape& t, int self) {
        const auto& ps = t.parents(self);
        dispatch(t.dtype(), [&]<class T>() {
            Eigen::Map<const RowMatT<T>> G(t.grad_buffer(self).span<T>().data(), m, n);
            Eigen::Map<const RowMatT<T>> A(t.val(ps[0]).span<T>().data(), m, k);
            Eigen::Map<const RowMatT<T>> B(t.val(ps[1]).span<T>().data(), k, n);
            if (t.needs_grad(ps[0])) {
                Eigen::Map<RowMatT<T>> dA(t.grad_buffer(ps[0]).span<T>().data(), m, k);
                dA.noalias() += G * B.transpose();
            }
            if (t.needs_grad(ps[1])) {
                Eigen::Map<RowMatT<T>> dB(t.grad_buffer(ps[1]).span<T>().data(), k, n);
                dB.noalias() += A.transpose() * G;
            }
        });
    });
}

Tensor bmm(Tensor a, Tensor b, bool trans_a, bool trans_b) {
    same_tape(a, b);
    Tape& t = tp(a);
    ensure(a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[0] == b.shape()[0],
           "bmm needs rank-3 tensors with a shared batch axis");
    const auto B = a.shape()[0];
    const auto m = trans_a ? a.shape()[2] : a.shape()[1];
    const auto ka = trans_a ? a.shape()[1] : a.shape()[2];
    const auto kb = trans_b ? b.shape()[2] : b.shape()[1];
    const auto n = trans_b ? b.shape()[1] : b.shape()[2];
    ensure(ka == kb, "bmm inner dimensions differ");
    TensorData out = TensorData::zeros(t.dtype(), {B, m, n});
    const std::size_t sa = static_cast<std::size_t>(a.shape()[1]) * a.shape()[2];
    const std::size_t sb = static_cast<std::size_t>(b.shape()[1]) * b.shape()[2];
    const std::size_t sc = static_cast<std::size_t>(m) * n;
    dispatch(t.dtype(), [&]<class T>() {
        auto av = t.val(a).span<T>();
        auto bv = t.val(b).span<T>();
        auto zv = out.span<T>();
        for (std::int64_t i = 0; i < B; ++i) {
            Eigen::Map<const RowMatT<T>> A(av.data() + i * sa, a.shape()[1], a.shape()[2]);
            Eigen::Map<const RowMatT<T>> Bm(bv.data() + i * sb, b.shape()[1], b.shape()[2]);
            Eigen::Map<RowMatT<T>> Z(zv.data() + i * sc, m, n);
            if (!trans_a && !trans_b) Z.noalias() = A * Bm;
            else if (trans_a && !trans_b) Z.noalias() = A.transpose() * Bm;
            else if (!trans_a && trans_b) Z.noalias() = A * Bm.transpose();
            else Z.noalias() = A.transpose() * Bm.transpose();
        }
    });
    const auto a1 = a.shape()[1], a2 = a.shape()[2], b1 = b.shape()[1], b2 = b.shape()[2];
    return t.emit(std::move(out), {a.id, b.id},
                  [B, m, n, sa, sb, sc, a1, a2, b1, b2, trans_a, trans_b](Tape& t, int self) {
        const auto& ps = t.parents(self);
        dispatch(t.dtype(), [&]<class T>() {
            auto gv = t.grad_buffer(self).span<T>();
            auto av = t.val(ps[0]).span<T>();
            auto bv = t.val(ps[1]).span<T>();
            for (std::int64_t i = 0; i < B; ++i) {
                Eigen::Map<const RowMatT<T>> G(gv.data() + i * sc, m, n);
                Eigen::Map<const RowMatT<T>> A(av.data() + i * sa, a1, a2);
                Eigen::Map<const RowMatT<T>> Bm(bv.data() + i * sb, b1, b2);
                if (t.needs_grad(ps[0])) {
                    Eigen::Map<RowMatT<T>> dA(t.grad_buffer(ps[0]).span<T>().data() + i * sa,
                                              a1, a2);
                    if (!trans_a && !trans_b) dA.noalias() += G * Bm.transpose();
                    else if (!trans_a && trans_b) dA.noalias() += G * Bm;
                    else if (trans_a && !trans_b) dA.noalias() += Bm * G.transpose();
                    else dA.noalias() += Bm.transpose() * G.transpose();
                }
                if (t.needs_grad(ps[1])) {
                    Eigen::Map<RowMatT<T>> dB(t.grad_buffer(ps[1]).span<T>().data() + i * sb,
                                              b1, b2);
                    if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
                    else if (trans_a && !trans_b) dB.noalias() += A * G;
                    else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
                    else dB.noalias() += G.transpose() * A.transpose();
                }
            }
        });
    });
}

namespace {

template <class T>
void apply_axis_matrix(const T* src, T* dst, const std::vector<T>& mat, std::size_t pre,
                       std::size_t m_out, std::size_t m_in, std::size_t post) {
    Eigen::Map<const RowMatT<T>> B(mat.data(), m_out, m_in);
    for (std::size_t p = 0; p < pre; ++p) {
        Eigen::Map<const RowMatT<T>> S(src + p * m_in * post, m_in, post);
        Eigen::Map<RowMatT<T>> D(dst + p * m_out * post, m_out, post);
        D.noalias() += B * S;
    }
}

}  // namespace

Tensor axis_apply(Tensor x, int axis, std::span<const double> matrix, int m_out) {
    Tape& t = tp(x);
    const auto& shape = x.shape();
    ensure(axis >= 0 && axis < static_cast<int>(shape.size()), "axis_apply axis out of range");
    const std::size_t m_in = static_cast<std::size_t>(shape[axis]);
    ensure(matrix.size() == static_cast<std::size_t>(m_out) * m_in,
           "axis_apply matrix size mismatch");
    const std::size_t pre = outer_product(shape, axis);
    std::size_t post = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) post *= shape[i];

    std::vector<std::int64_t> out_shape = shape;
    out_shape[axis] = m_out;
    TensorData out = TensorData::zeros(t.dtype(), std::move(out_shape));

    return dispatch(t.dtype(), [&]<class T>() -> Tensor {
        auto fwd = std::make_shared<std::vector<T>>(matrix.begin(), matrix.end());
        // Transposed copy for the pullback.
        auto bwd = std::make_shared<std::vector<T>>(matrix.size());
        for (std::size_t r = 0; r < static_cast<std::size_t>(m_out); ++r)
            for (std::size_t c = 0; c < m_in; ++c)
                (*bwd)[c * m_out + r] = static_cast<T>(matrix[r * m_in + c]);

        apply_axis_matrix<T>(t.val(x).span<T>().data(), out.span<T>().data(), *fwd, pre,
                             m_out, m_in, post);
        return t.emit(std::move(out), {x.id},
                      [bwd, pre, m_out, m_in, post](Tape& t, int self) {
            const int p = t.parents(self)[0];
            if (!t.needs_grad(p)) return;
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            apply_axis_matrix<T>(g.data(), d.data(), *bwd, pre, m_in, m_out, post);
        });
    });
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Tensor reshape(Tensor x, std::vector<std::int64_t> shape) {
    Tape& t = tp(x);
    TensorData out = t.val(x);
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    ensure(n == x.numel(), "reshape changes the element count");
    out.shape = std::move(shape);
    return t.emit(std::move(out), {x.id}, [](Tape& t, int self) {
        accumulate_grad(t, t.parents(self)[0], t.grad_buffer(self));
    });
}

namespace {

std::vector<std::size_t> row_strides(const std::vector<std::int64_t>& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[i] = s[i + 1] * static_cast<std::size_t>(shape[i + 1]);
    return s;
}

}  // namespace

Tensor permute(Tensor x, std::vector<int> perm) {
    Tape& t = tp(x);
    const auto& shape = x.shape();
    const int rank = static_cast<int>(shape.size());
    ensure(static_cast<int>(perm.size()) == rank, "permute rank mismatch");
    std::vector<bool> seen(rank, false);
    for (int p : perm) {
        ensure(p >= 0 && p < rank && !seen[p], "permute is not a permutation");
        seen[p] = true;
    }
    std::vector<std::int64_t> out_shape(rank);
    for (int i = 0; i < rank; ++i) out_shape[i] = shape[perm[i]];
    const auto in_strides = row_strides(shape);
    TensorData out = TensorData::zeros(t.dtype(), out_shape);

    // For each output position, the matching input offset.
    auto build_map = [&]() {
        std::vector<std::size_t> map(x.numel());
        std::vector<std::int64_t> idx(rank, 0);
        for (std::size_t o = 0; o < map.size(); ++o) {
            std::size_t in_off = 0;
            for (int i = 0; i < rank; ++i) in_off += idx[i] * in_strides[perm[i]];
            map[o] = in_off;
            for (int i = rank - 1; i >= 0; --i) {
                if (++idx[i] < out_shape[i]) break;
                idx[i] = 0;
            }
        }
        return map;
    };
    auto map = std::make_shared<std::vector<std::size_t>>(build_map());
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto z = out.span<T>();
        for (std::size_t o = 0; o < z.size(); ++o) z[o] = xs[(*map)[o]];
    });
    return t.emit(std::move(out), {x.id}, [map](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t o = 0; o < g.size(); ++o) d[(*map)[o]] += g[o];
        });
    });
}

Tensor index_select(Tensor x, int axis, std::vector<std::int64_t> indices) {
    Tape& t = tp(x);
    const auto& shape = x.shape();
    ensure(axis >= 0 && axis < static_cast<int>(shape.size()), "index_select axis out of range");
    const std::int64_t n_axis = shape[axis];
    for (auto i : indices) ensure(i >= 0 && i < n_axis, "index_select index out of range");
    const std::size_t pre = outer_product(shape, axis);
    std::size_t post = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) post *= shape[i];
    std::vector<std::int64_t> out_shape = shape;
    out_shape[axis] = static_cast<std::int64_t>(indices.size());
    TensorData out = TensorData::zeros(t.dtype(), std::move(out_shape));
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(indices));
    const std::size_t K = idx->size();

    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto z = out.span<T>();
        for (std::size_t p = 0; p < pre; ++p)
            for (std::size_t k = 0; k < K; ++k) {
                const T* src = xs.data() + (p * n_axis + (*idx)[k]) * post;
                T* dst = z.data() + (p * K + k) * post;
                for (std::size_t q = 0; q < post; ++q) dst[q] = src[q];
            }
    });
    return t.emit(std::move(out), {x.id}, [idx, pre, post, n_axis, K](Tape& t, int self) {
        const int p0 = t.parents(self)[0];
        if (!t.needs_grad(p0)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p0).span<T>();
            for (std::size_t p = 0; p < pre; ++p)
                for (std::size_t k = 0; k < K; ++k) {
                    const T* src = g.data() + (p * K + k) * post;
                    T* dst = d.data() + (p * n_axis + (*idx)[k]) * post;
                    for (std::size_t q = 0; q < post; ++q) dst[q] += src[q];
                }
        });
    });
}

Tensor concat_lastaxis(Tensor a, Tensor b) {
    same_tape(a, b);
    Tape& t = tp(a);
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    ensure(sa.size() == sb.size() && !sa.empty(), "concat rank mismatch");
    for (std::size_t i = 0; i + 1 < sa.size(); ++i)
        ensure(sa[i] == sb[i], "concat leading shapes differ");
    const std::size_t ca = static_cast<std::size_t>(sa.back());
    const std::size_t cb = static_cast<std::size_t>(sb.back());
    const std::size_t rows = a.numel() / ca;
    std::vector<std::int64_t> out_shape = sa;
    out_shape.back() = static_cast<std::int64_t>(ca + cb);
    TensorData out = TensorData::zeros(t.dtype(), std::move(out_shape));
    dispatch(t.dtype(), [&]<class T>() {
        auto xa = t.val(a).span<T>();
        auto xb = t.val(b).span<T>();
        auto z = out.span<T>();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < ca; ++c) z[r * (ca + cb) + c] = xa[r * ca + c];
            for (std::size_t c = 0; c < cb; ++c) z[r * (ca + cb) + ca + c] = xb[r * cb + c];
        }
    });
    return t.emit(std::move(out), {a.id, b.id}, [rows, ca, cb](Tape& t, int self) {
        const auto& ps = t.parents(self);
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            if (t.needs_grad(ps[0])) {
                auto da = t.grad_buffer(ps[0]).span<T>();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < ca; ++c) da[r * ca + c] += g[r * (ca + cb) + c];
            }
            if (t.needs_grad(ps[1])) {
                auto db = t.grad_buffer(ps[1]).span<T>();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cb; ++c)
                        db[r * cb + c] += g[r * (ca + cb) + ca + c];
            }
        });
    });
}

Tensor slice_lastaxis(Tensor x, std::int64_t start, std::int64_t len) {
    Tape& t = tp(x);
    const auto& shape = x.shape();
    ensure(!shape.empty(), "slice needs rank >= 1");
    const std::int64_t C = shape.back();
    ensure(start >= 0 && len >= 1 && start + len <= C, "slice range out of bounds");
    const std::size_t rows = x.numel() / static_cast<std::size_t>(C);
    std::vector<std::int64_t> out_shape = shape;
    out_shape.back() = len;
    TensorData out = TensorData::zeros(t.dtype(), std::move(out_shape));
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto z = out.span<T>();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < len; ++c)
                z[r * len + c] = xs[r * C + start + c];
    });
    return t.emit(std::move(out), {x.id}, [rows, C, start, len](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < len; ++c)
                    d[r * C + start + c] += g[r * len + c];
        });
    });
}

Tensor rope(Tensor x, const TensorData& cos_tab, const TensorData& sin_tab) {
    Tape& t = tp(x);
    ensure(x.shape().size() == 2 && x.shape()[1] % 2 == 0, "rope needs x [N, d] with even d");
    const std::size_t N = static_cast<std::size_t>(x.shape()[0]);
    const std::size_t half = static_cast<std::size_t>(x.shape()[1]) / 2;
    ensure(cos_tab.numel() == N * half && sin_tab.numel() == N * half,
           "rope angle tables must be [N, d/2]");
    auto ct = std::make_shared<std::vector<double>>(cos_tab.to_doubles());
    auto st = std::make_shared<std::vector<double>>(sin_tab.to_doubles());
    TensorData out = TensorData::zeros(t.dtype(), x.shape());
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto z = out.span<T>();
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < half; ++k) {
                const double c = (*ct)[i * half + k], s = (*st)[i * half + k];
                const double xr = xs[i * 2 * half + 2 * k];
                const double xi = xs[i * 2 * half + 2 * k + 1];
                z[i * 2 * half + 2 * k] = static_cast<T>(xr * c - xi * s);
                z[i * 2 * half + 2 * k + 1] = static_cast<T>(xr * s + xi * c);
            }
    });
    return t.emit(std::move(out), {x.id}, [ct, st, N, half](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t k = 0; k < half; ++k) {
                    const double c = (*ct)[i * half + k], s = (*st)[i * half + k];
                    const double gr = g[i * 2 * half + 2 * k];
                    const double gi = g[i * 2 * half + 2 * k + 1];
                    d[i * 2 * half + 2 * k] += static_cast<T>(gr * c + gi * s);
                    d[i * 2 * half + 2 * k + 1] += static_cast<T>(-gr * s + gi * c);
                }
        });
    });
}

// ---------------------------------------------------------------------------
// Complex / spectral
// ---------------------------------------------------------------------------

namespace {

void run_fft2(const TensorData& in, TensorData& out, std::array<int, 2> n, bool forward) {
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1];
    std::vector<std::complex<double>> buf(total);
    const auto src = in.to_doubles();
    for (std::size_t i = 0; i < total; ++i) buf[i] = {src[2 * i], src[2 * i + 1]};
    fft::c2c_2d(n, buf.data(), buf.data(), forward);
    dispatch(out.dtype, [&]<class T>() {
        auto z = out.span<T>();
        for (std::size_t i = 0; i < total; ++i) {
            z[2 * i] = static_cast<T>(buf[i].real());
            z[2 * i + 1] = static_cast<T>(buf[i].imag());
        }
    });
}

}  // namespace

Tensor fft2(Tensor x, bool forward) {
    Tape& t = tp(x);
    const auto& shape = x.shape();
    ensure(shape.size() == 3 && shape[2] == 2, "fft2 needs [n1, n2, 2]");
    const std::array<int, 2> n{static_cast<int>(shape[0]), static_cast<int>(shape[1])};
    TensorData out = TensorData::zeros(t.dtype(), shape);
    run_fft2(t.val(x), out, n, forward);
    return t.emit(std::move(out), {x.id}, [n, forward](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        // The adjoint of the unnormalized forward DFT is the unnormalized
        // inverse; with our normalized inverse that is a factor n1*n2.
        const double total = static_cast<double>(n[0]) * n[1];
        TensorData tmp = TensorData::zeros(t.dtype(), t.grad_buffer(self).shape);
        run_fft2(t.grad_buffer(self), tmp, n, !forward);
        dispatch(t.dtype(), [&]<class T>() {
            auto d = t.grad_buffer(p).span<T>();
            auto s = tmp.span<T>();
            const T f = static_cast<T>(forward ? total : 1.0 / total);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += f * s[i];
        });
    });
}

Tensor real_part(Tensor x) {
    Tape& t = tp(x);
    const auto& shape = x.shape();
    ensure(shape.size() >= 2 && shape.back() == 2, "real_part needs [..., 2]");
    std::vector<std::int64_t> out_shape(shape.begin(), shape.end() - 1);
    TensorData out = TensorData::zeros(t.dtype(), std::move(out_shape));
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto z = out.span<T>();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = xs[2 * i];
    });
    return t.emit(std::move(out), {x.id}, [](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t i = 0; i < g.size(); ++i) d[2 * i] += g[i];
        });
    });
}

Tensor make_complex(Tensor r) {
    Tape& t = tp(r);
    std::vector<std::int64_t> out_shape = r.shape();
    out_shape.push_back(2);
    TensorData out = TensorData::zeros(t.dtype(), std::move(out_shape));
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(r).span<T>();
        auto z = out.span<T>();
        for (std::size_t i = 0; i < xs.size(); ++i) z[2 * i] = xs[i];
    });
    return t.emit(std::move(out), {r.id}, [](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[2 * i];
        });
    });
}

Tensor cmul_const(Tensor x, std::span<const std::complex<double>> c) {
    Tape& t = tp(x);
    const auto& shape = x.shape();
    ensure(shape.size() >= 2 && shape.back() == 2, "cmul_const needs [..., 2]");
    ensure(c.size() == x.numel() / 2, "cmul_const factor count mismatch");
    auto fac = std::make_shared<std::vector<std::complex<double>>>(c.begin(), c.end());
    TensorData out = TensorData::zeros(t.dtype(), shape);
    dispatch(t.dtype(), [&]<class T>() {
        auto xs = t.val(x).span<T>();
        auto z = out.span<T>();
        for (std::size_t i = 0; i < fac->size(); ++i) {
            const double cr = (*fac)[i].real(), ci = (*fac)[i].imag();
            const double xr = xs[2 * i], xi = xs[2 * i + 1];
            z[2 * i] = static_cast<T>(cr * xr - ci * xi);
            z[2 * i + 1] = static_cast<T>(cr * xi + ci * xr);
        }
    });
    return t.emit(std::move(out), {x.id}, [fac](Tape& t, int self) {
        const int p = t.parents(self)[0];
        if (!t.needs_grad(p)) return;
        dispatch(t.dtype(), [&]<class T>() {
            auto g = t.grad_buffer(self).span<T>();
            auto d = t.grad_buffer(p).span<T>();
            for (std::size_t i = 0; i < fac->size(); ++i) {
                const double cr = (*fac)[i].real(), ci = (*fac)[i].imag();
                const double gr = g[2 * i], gi = g[2 * i + 1];
                d[2 * i] += static_cast<T>(cr * gr + ci * gi);
                d[2 * i + 1] += static_cast<T>(-ci * gr + cr * gi);
            }
        });
    });
}

Tensor rel_l2(Tensor a, Tensor b) {
    // Small floor keeps the square roots differentiable at exactly zero.
    constexpr double kFloor = 1e-12;
    Tensor d = sub(a, b);
    Tensor num = sqrt(add_scalar(sum_all(mul(d, d)), kFloor));
    Tensor den = sqrt(add_scalar(sum_all(mul(b, b)), kFloor));
    return div(num, den);
}

}  // namespace semflow::ops
