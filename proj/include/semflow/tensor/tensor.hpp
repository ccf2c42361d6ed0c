#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "semflow/core/error.hpp"

namespace semflow {

enum class Dtype { F32, F64 };

/// Dense row-major tensor storage.  Exactly one of the two buffers is in
/// use, matching `dtype`; rank-0 tensors hold a single value.
struct TensorData {
    Dtype dtype = Dtype::F64;
    std::vector<std::int64_t> shape;
    std::vector<float> f32;
    std::vector<double> f64;

    static TensorData zeros(Dtype dt, std::vector<std::int64_t> shape);
    /// Builds from doubles, converting if dt is F32.
    static TensorData from(Dtype dt, std::vector<std::int64_t> shape,
                           std::span<const double> values);
    static TensorData scalar_value(Dtype dt, double v);

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
    template <class T> std::span<T> span();
    template <class T> std::span<const T> span() const;

    double scalar() const;                  // rank-0 (or single-element) read
    std::vector<double> to_doubles() const;  // converting copy for host code
    void fill(double v);
    bool finite() const;
};

template <> inline std::span<float> TensorData::span<float>() { return {f32}; }
template <> inline std::span<double> TensorData::span<double>() { return {f64}; }
template <> inline std::span<const float> TensorData::span<float>() const { return {f32}; }
template <> inline std::span<const double> TensorData::span<double>() const { return {f64}; }

/// Runs f.template operator()<T>() with T matching the dtype.
template <class F> decltype(auto) dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::F64) return f.template operator()<double>();
    return f.template operator()<float>();
}

class Tape;

/// Lightweight handle to a node on a tape.
struct Tensor {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const std::vector<std::int64_t>& shape() const;
    std::size_t numel() const;
};

/// Dynamic reverse-mode tape.  Nodes are created in topological order by
/// construction; backward() walks them in reverse.  All nodes share the
/// tape's dtype.  One tape per sample: build, backward, harvest, reset.
class Tape {
public:
    explicit Tape(Dtype dt) : dtype_(dt) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Dtype dtype() const { return dtype_; }

    /// Differentiable input (parameters, state carried between steps).
    Tensor leaf(const TensorData& v);
    /// Non-differentiable input (targets, masks, precomputed factors).
    Tensor constant(const TensorData& v);

    /// Extension point every op funnels through.  `bwd` receives the tape
    /// and the node id and must scatter into the parents' grad buffers.
    Tensor emit(TensorData val, std::vector<int> parents,
                std::function<void(Tape&, int)> bwd);

    const TensorData& val(Tensor t) const { return nodes_[t.id].val; }
    TensorData& val_mut(Tensor t) { return nodes_[t.id].val; }
    const TensorData& val(int id) const { return nodes_[id].val; }

    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    /// Lazily allocated, zero-initialized gradient buffer.
    TensorData& grad_buffer(int id);
    const TensorData& grad(Tensor t) const;
    const std::vector<int>& parents(int id) const { return nodes_[id].parents; }

    /// Seeds d(loss)/d(loss) = seed and propagates.  loss must be rank-0.
    void backward(Tensor loss, double seed = 1.0);

    /// Drops every node (values, grads, closures).
    void reset();

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        TensorData val;
        TensorData grad;  // empty until touched
        bool needs_grad = false;
        bool grad_live = false;
        std::vector<int> parents;
        std::function<void(Tape&, int)> bwd;
    };

    Dtype dtype_;
    std::vector<Node> nodes_;
};

/// Accumulates `src` into the grad buffer of node `id` (no-op when the node
/// does not require grad).  Shapes must match.
void accumulate_grad(Tape& tape, int id, const TensorData& src);

}  // namespace semflow
