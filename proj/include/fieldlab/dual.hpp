#pragma once

#include "fieldlab/tape.hpp"

namespace fieldlab::ad {

/// Forward-mode pair living on a tape: value and directional tangent.
/// Because both halves are ordinary tape nodes, a scalar built from
/// tangents can be differentiated in reverse — that is the whole
/// second-order story this library needs (grad of JVP norms).
struct Dual {
    Var v;  // value
    Var t;  // tangent

    Tape& tape() const { return *v.tape; }
};

inline Dual make_dual(Tape& tp, Tensor value, Tensor tangent) {
    check_same_shape(value, tangent, "make_dual");
    return Dual{tp.constant(std::move(value)), tp.constant(std::move(tangent))};
}

/// Dual with zero tangent (a constant w.r.t. the perturbation direction).
inline Dual dual_const(Var v) { return Dual{v, v.tape->constant(Tensor::zeros(v.shape()))}; }

inline Dual dadd(Dual a, Dual b) { return Dual{a.v + b.v, a.t + b.t}; }
inline Dual dsub(Dual a, Dual b) { return Dual{a.v - b.v, a.t - b.t}; }
inline Dual dscale(Dual a, double c) { return Dual{a.tape().scale(a.v, c), a.tape().scale(a.t, c)}; }
inline Dual dmul(Dual a, Dual b) {
    return Dual{a.v * b.v, a.tape().add(a.t * b.v, a.v * b.t)};
}

/// a . W where W carries no tangent (parameters are constants of the JVP).
inline Dual dmatmul(Dual a, Var w) {
    return Dual{a.tape().matmul(a.v, w), a.tape().matmul(a.t, w)};
}

inline Dual dadd_rowvec(Dual a, Var w) {
    return Dual{a.tape().add_rowvec(a.v, w), a.t};
}

inline Dual dmul_rowvec(Dual a, Var w) {
    return Dual{a.tape().mul_rowvec(a.v, w), a.tape().mul_rowvec(a.t, w)};
}

inline Dual dscale_var(Dual a, Var s) {
    return Dual{a.tape().scale_var(a.v, s), a.tape().scale_var(a.t, s)};
}

inline Dual dtanh(Dual a) {
    Tape& tp = a.tape();
    Var y = tp.tanh(a.v);
    Var ones = tp.constant(Tensor::full(y.shape(), 1.0));
    Var deriv = ones - y * y;
    return Dual{y, a.t * deriv};
}

/// Appends constant columns (e.g. a time channel); the tangent gets zeros there.
inline Dual dconcat_cols(Dual a, Var extra) {
    Tape& tp = a.tape();
    Var zeros = tp.constant(Tensor::zeros(extra.shape()));
    return Dual{tp.concat_cols({a.v, extra}), tp.concat_cols({a.t, zeros})};
}

}  // namespace fieldlab::ad
