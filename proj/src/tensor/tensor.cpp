#include "semflow/tensor/tensor.hpp"

#include <cmath>

namespace semflow {

TensorData TensorData::zeros(Dtype dt, std::vector<std::int64_t> shape) {
    TensorData t;
    t.dtype = dt;
    t.shape = std::move(shape);
    const std::size_t n = t.numel();
    if (dt == Dtype::F32)
        t.f32.assign(n, 0.0f);
    else
        t.f64.assign(n, 0.0);
    return t;
}

TensorData TensorData::from(Dtype dt, std::vector<std::int64_t> shape,
                            std::span<const double> values) {
    TensorData t = zeros(dt, std::move(shape));
    ensure(values.size() == t.numel(), "tensor literal size does not match its shape");
    if (dt == Dtype::F32) {
        for (std::size_t i = 0; i < values.size(); ++i) t.f32[i] = static_cast<float>(values[i]);
    } else {
        t.f64.assign(values.begin(), values.end());
    }
    return t;
}

TensorData TensorData::scalar_value(Dtype dt, double v) {
    return from(dt, {}, std::span<const double>(&v, 1));
}

double TensorData::scalar() const {
    ensure(numel() == 1, "scalar() on a tensor with more than one element");
    return dtype == Dtype::F32 ? static_cast<double>(f32[0]) : f64[0];
}

std::vector<double> TensorData::to_doubles() const {
    if (dtype == Dtype::F64) return f64;
    return std::vector<double>(f32.begin(), f32.end());
}

void TensorData::fill(double v) {
    if (dtype == Dtype::F32)
        std::fill(f32.begin(), f32.end(), static_cast<float>(v));
    else
        std::fill(f64.begin(), f64.end(), v);
}

bool TensorData::finite() const {
    if (dtype == Dtype::F32) {
        for (float v : f32)
            if (!std::isfinite(v)) return false;
    } else {
        for (double v : f64)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

const std::vector<std::int64_t>& Tensor::shape() const { return tape->val(*this).shape; }
std::size_t Tensor::numel() const { return tape->val(*this).numel(); }

Tensor Tape::leaf(const TensorData& v) {
    ensure(v.dtype == dtype_, "leaf dtype does not match the tape");
    Node n;
    n.val = v;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::constant(const TensorData& v) {
    ensure(v.dtype == dtype_, "constant dtype does not match the tape");
    Node n;
    n.val = v;
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::emit(TensorData val, std::vector<int> parents, std::function<void(Tape&, int)> bwd) {
    ensure(val.dtype == dtype_, "op result dtype does not match the tape");
    Node n;
    n.val = std::move(val);
    for (int p : parents) {
        ensure(p >= 0 && p < static_cast<int>(nodes_.size()), "op parent is not on this tape");
        n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
    }
    n.parents = std::move(parents);
    if (n.needs_grad) n.bwd = std::move(bwd);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

TensorData& Tape::grad_buffer(int id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
        n.grad = TensorData::zeros(dtype_, n.val.shape);
        n.grad_live = true;
    }
    return n.grad;
}

const TensorData& Tape::grad(Tensor t) const {
    const Node& n = nodes_[t.id];
    ensure(n.grad_live, "gradient was never produced for this node");
    return n.grad;
}

void Tape::backward(Tensor loss, double seed) {
    ensure(loss.tape == this, "loss lives on a different tape");
    ensure(val(loss).numel() == 1, "backward needs a rank-0 loss");
    grad_buffer(loss.id).fill(seed);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || !n.bwd || !n.grad_live) continue;
        n.bwd(*this, id);
    }
}

void Tape::reset() { nodes_.clear(); }

void accumulate_grad(Tape& tape, int id, const TensorData& src) {
    if (!tape.needs_grad(id)) return;
    TensorData& dst = tape.grad_buffer(id);
    ensure(dst.numel() == src.numel(), "gradient shape mismatch");
    dispatch(src.dtype, [&]<class T>() {
        auto d = dst.span<T>();
        auto s = src.span<T>();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    });
}

}  // namespace semflow
