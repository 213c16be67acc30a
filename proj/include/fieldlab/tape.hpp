#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fieldlab/tensor.hpp"

namespace fieldlab::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    std::int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
};

enum class Op : std::uint8_t {
    leaf,         // constant or tracked input
    param,        // leaf bound to a slice of a flat parameter vector
    add,
    sub,
    neg,
    mul,          // elementwise, same shape
    scale,        // by a fixed double
    add_rowvec,   // [m x n] + broadcast [n]
    mul_rowvec,   // [m x n] * broadcast [n]
    add_scalar,   // tensor + scalar var (broadcast)
    scale_var,    // tensor * scalar var (broadcast)
    matmul,
    tanh_fn,
    exp_fn,
    dot_fn,       // -> scalar
    sum_fn,       // -> scalar
    mean_fn,      // -> scalar
    concat_cols,  // n-ary, along columns of 2-D tensors
    reshape,
    shift_cols,   // periodic column shift of a 2-D tensor
    where_pos,    // select(s > 0, a, b); no gradient into s
    log_softmax,  // row-wise
    softmax_xent, // fused mean cross-entropy with integer labels
};

/// Single-writer record of an eager forward computation. Nodes are stored
/// in topological order by construction; backward() walks them in reverse.
/// Every op validates shapes and raises on non-finite outputs so a NaN is
/// caught at its source rather than polluting downstream metrics.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves ----
    Var constant(Tensor value);
    /// Leaf bound to theta[offset .. offset + numel); flat_grad() scatters here.
    Var param(std::span<const double> theta, std::int64_t offset, Shape shape);

    // ---- operations ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var neg(Var a);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_rowvec(Var mat, Var v);
    Var mul_rowvec(Var mat, Var v);
    Var add_scalar(Var a, Var s);
    Var scale_var(Var a, Var s);
    Var matmul(Var a, Var b);
    Var tanh(Var a);
    Var exp(Var a);
    Var dot(Var a, Var b);
    Var sum(Var a);
    Var mean(Var a);
    Var concat_cols(const std::vector<Var>& xs);
    Var reshape(Var a, Shape s);
    Var shift_cols(Var a, std::int64_t k);
    Var where_pos(Var s, Var a, Var b);
    Var log_softmax(Var a);
    Var softmax_xent(Var logits, const std::vector<std::int64_t>& labels);

    // conveniences
    Var sum_sq(Var a) { return sum(mul(a, a)); }
    Var zeros_like(Var a) { return constant(Tensor::zeros(a.shape())); }

    // ---- reverse pass ----
    /// Reverse-mode sweep from a scalar loss. Gradients for every node are
    /// retained until the next backward()/clear().
    void backward(Var loss);
    /// Gradient of the last backward()'s loss w.r.t. the flat parameter
    /// vector of length n_params, assembled from all param leaves.
    Tensor flat_grad(std::int64_t n_params) const;
    /// Gradient at an arbitrary node (zeros if the loss does not reach it).
    Tensor grad_at(Var v) const;

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    std::size_t size() const { return nodes_.size(); }
    void clear();

  private:
    struct Node {
        Op op;
        std::vector<std::int32_t> inputs;
        Tensor value;
        Tensor saved;                      // op-specific (softmax probs, ...)
        std::vector<std::int64_t> iaux;    // labels, shift offset, col splits, param offset
        double daux = 0.0;                 // scale factor
    };

    Var push(Node n);
    void accumulate(std::int32_t id, const Tensor& g);
    Tensor& grad_slot(std::int32_t id, const Shape& shape);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool has_grads_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// infix sugar for same-tape vars
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

}  // namespace fieldlab::ad
