// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ssom/tensor.hpp"

namespace ssom {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records operations in execution order and replays their adjoints in reverse.
///
/// A tape is meant to live for one training step. Values recorded from a
/// Parameter stay bound to it: backward() adds their gradient into
/// Parameter::grad, so repeated passes accumulate. Frozen parameters enter
/// the graph as constants and never receive gradient.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value);
    Var param(Parameter& p);

    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op);

    void backward(Var loss);

    /// Gradient accumulated on a leaf created by leaf(); zero tensor if never reached.
    const Tensor& grad(Var leaf) const;

    // Used by backward rules.
    bool needs_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
    void accumulate(const Var& v, const Tensor& g);
    template <class Fn>
    void accumulate_with(const Var& v, Fn&& fn) {
        if (!needs_grad(v)) return;
        auto& n = nodes_[v.id()];
        if (n.grad.empty()) n.grad = Tensor(n.value.shape());
        fn(n.grad);
    }

    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;        // per-pass adjoint, cleared at the start of backward()
        Tensor leaf_total;  // leaf() nodes only: accumulated over passes
        bool requires_grad = false;
        bool is_leaf = false;
        Parameter* param = nullptr;
        BackwardFn backward;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Every op validates shapes (ShapeError) and rejects
// non-finite results (NumericError).

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double c);

/// a[m x n] + row broadcast over all m rows; row has shape [n] or [1 x n].
Var add_row(Var a, Var row);
/// out[i,j] = a[i,j] * v[i] for a[r x m], v[r].
Var scale_rows(Var a, Var v);

Var sigmoid(Var a);
Var gelu(Var a);
Var log(Var a);
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
Var frobenius_norm_sq(Var a);

Var softmax_rows(Var a);
/// Per-row normalisation to zero mean / unit variance, then gamma * x + beta.
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var reshape(Var a, Shape shape);
/// out.flat[i] = a.flat[index[i]]; gradient scatters back additively.
Var gather(Var a, std::vector<std::size_t> index, Shape shape);

// ---------------------------------------------------------------------------
// Tape-free kernels shared by forward and backward rules.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);
}  // namespace kernels

}  // namespace ssom
