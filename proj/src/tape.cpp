#include "fieldlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fieldlab::ad {

namespace {

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::param: return "param";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::neg: return "neg";
        case Op::mul: return "mul";
        case Op::scale: return "scale";
        case Op::add_rowvec: return "add_rowvec";
        case Op::mul_rowvec: return "mul_rowvec";
        case Op::add_scalar: return "add_scalar";
        case Op::scale_var: return "scale_var";
        case Op::matmul: return "matmul";
        case Op::tanh_fn: return "tanh";
        case Op::exp_fn: return "exp";
        case Op::dot_fn: return "dot";
        case Op::sum_fn: return "sum";
        case Op::mean_fn: return "mean";
        case Op::concat_cols: return "concat_cols";
        case Op::reshape: return "reshape";
        case Op::shift_cols: return "shift_cols";
        case Op::where_pos: return "where_pos";
        case Op::log_softmax: return "log_softmax";
        case Op::softmax_xent: return "softmax_xent";
    }
    return "?";
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_2d(const Tensor& t, const char* op) {
    require(t.shape.size() == 2, std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape));
}

}  // namespace

Var Tape::push(Node n) {
    if (!n.value.all_finite())
        throw std::runtime_error(std::string("non-finite value produced by op '") + op_name(n.op) + "'");
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
    has_grads_ = false;
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::param(std::span<const double> theta, std::int64_t offset, Shape shape) {
    std::int64_t len = shape_numel(shape);
    require(offset >= 0 && offset + len <= static_cast<std::int64_t>(theta.size()),
            "param: slice [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                ") outside parameter vector of length " + std::to_string(theta.size()));
    Node n;
    n.op = Op::param;
    n.value = Tensor(std::move(shape),
                     std::vector<double>(theta.begin() + offset, theta.begin() + offset + len));
    n.iaux = {offset};
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    check_same_shape(value(a), value(b), "add");
    Node n;
    n.op = Op::add;
    n.inputs = {a.id, b.id};
    n.value = fieldlab::add(value(a), value(b));
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "sub");
    Node n;
    n.op = Op::sub;
    n.inputs = {a.id, b.id};
    n.value = fieldlab::sub(value(a), value(b));
    return push(std::move(n));
}

Var Tape::neg(Var a) {
    Node n;
    n.op = Op::neg;
    n.inputs = {a.id};
    n.value = fieldlab::scale(value(a), -1.0);
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "mul");
    Node n;
    n.op = Op::mul;
    n.inputs = {a.id, b.id};
    n.value = hadamard(value(a), value(b));
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    Node n;
    n.op = Op::scale;
    n.inputs = {a.id};
    n.daux = c;
    n.value = fieldlab::scale(value(a), c);
    return push(std::move(n));
}

Var Tape::add_rowvec(Var mat, Var v) {
    const Tensor& m = value(mat);
    const Tensor& w = value(v);
    require_2d(m, "add_rowvec");
    require(w.shape.size() == 1 && w.numel() == m.cols(),
            "add_rowvec: vector " + shape_str(w.shape) + " does not match columns of " + shape_str(m.shape));
    Node n;
    n.op = Op::add_rowvec;
    n.inputs = {mat.id, v.id};
    n.value = m;
    for (std::int64_t r = 0; r < m.rows(); ++r)
        for (std::int64_t c = 0; c < m.cols(); ++c) n.value.at(r, c) += w.at(c);
    return push(std::move(n));
}

Var Tape::mul_rowvec(Var mat, Var v) {
    const Tensor& m = value(mat);
    const Tensor& w = value(v);
    require_2d(m, "mul_rowvec");
    require(w.shape.size() == 1 && w.numel() == m.cols(),
            "mul_rowvec: vector " + shape_str(w.shape) + " does not match columns of " + shape_str(m.shape));
    Node n;
    n.op = Op::mul_rowvec;
    n.inputs = {mat.id, v.id};
    n.value = m;
    for (std::int64_t r = 0; r < m.rows(); ++r)
        for (std::int64_t c = 0; c < m.cols(); ++c) n.value.at(r, c) *= w.at(c);
    return push(std::move(n));
}

Var Tape::add_scalar(Var a, Var s) {
    require(value(s).is_scalar(), "add_scalar: second operand must be scalar");
    Node n;
    n.op = Op::add_scalar;
    n.inputs = {a.id, s.id};
    n.value = value(a);
    double c = value(s).at(0);
    for (auto& x : n.value.data) x += c;
    return push(std::move(n));
}

Var Tape::scale_var(Var a, Var s) {
    require(value(s).is_scalar(), "scale_var: second operand must be scalar");
    Node n;
    n.op = Op::scale_var;
    n.inputs = {a.id, s.id};
    n.value = fieldlab::scale(value(a), value(s).at(0));
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = Op::matmul;
    n.inputs = {a.id, b.id};
    n.value = matmul_eager(value(a), value(b));
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    Node n;
    n.op = Op::tanh_fn;
    n.inputs = {a.id};
    n.value = value(a);
    for (auto& x : n.value.data) x = std::tanh(x);
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    Node n;
    n.op = Op::exp_fn;
    n.inputs = {a.id};
    n.value = value(a);
    for (auto& x : n.value.data) x = std::exp(x);
    return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
    check_same_shape(value(a), value(b), "dot");
    Node n;
    n.op = Op::dot_fn;
    n.inputs = {a.id, b.id};
    n.value = Tensor::scalar(fieldlab::dot(value(a), value(b)));
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::sum_fn;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : value(a).data) s += v;
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

Var Tape::mean(Var a) {
    Node n;
    n.op = Op::mean_fn;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : value(a).data) s += v;
    n.value = Tensor::scalar(s / static_cast<double>(value(a).numel()));
    return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
    require(!xs.empty(), "concat_cols: empty input list");
    std::int64_t rows = value(xs[0]).rows();
    std::int64_t total = 0;
    Node n;
    n.op = Op::concat_cols;
    for (Var x : xs) {
        require_2d(value(x), "concat_cols");
        require(value(x).rows() == rows, "concat_cols: row count mismatch");
        n.inputs.push_back(x.id);
        n.iaux.push_back(value(x).cols());
        total += value(x).cols();
    }
    n.value = Tensor::zeros({rows, total});
    std::int64_t base = 0;
    for (Var x : xs) {
        const Tensor& t = value(x);
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < t.cols(); ++c) n.value.at(r, base + c) = t.at(r, c);
        base += t.cols();
    }
    return push(std::move(n));
}

Var Tape::reshape(Var a, Shape s) {
    require(shape_numel(s) == value(a).numel(),
            "reshape: element count mismatch " + shape_str(value(a).shape) + " -> " + shape_str(s));
    Node n;
    n.op = Op::reshape;
    n.inputs = {a.id};
    n.value = Tensor(std::move(s), value(a).data);
    return push(std::move(n));
}

Var Tape::shift_cols(Var a, std::int64_t k) {
    const Tensor& t = value(a);
    require_2d(t, "shift_cols");
    std::int64_t nc = t.cols();
    std::int64_t kk = ((k % nc) + nc) % nc;
    Node n;
    n.op = Op::shift_cols;
    n.inputs = {a.id};
    n.iaux = {kk};
    n.value = Tensor::zeros(t.shape);
    for (std::int64_t r = 0; r < t.rows(); ++r)
        for (std::int64_t c = 0; c < nc; ++c) n.value.at(r, c) = t.at(r, (c + kk) % nc);
    return push(std::move(n));
}

Var Tape::where_pos(Var s, Var a, Var b) {
    check_same_shape(value(s), value(a), "where_pos");
    check_same_shape(value(s), value(b), "where_pos");
    Node n;
    n.op = Op::where_pos;
    n.inputs = {s.id, a.id, b.id};
    n.value = value(a);
    const Tensor& sv = value(s);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < n.value.data.size(); ++i)
        if (!(sv.data[i] > 0.0)) n.value.data[i] = bv.data[i];
    return push(std::move(n));
}

Var Tape::log_softmax(Var a) {
    const Tensor& t = value(a);
    require_2d(t, "log_softmax");
    Node n;
    n.op = Op::log_softmax;
    n.inputs = {a.id};
    n.value = t;
    for (std::int64_t r = 0; r < t.rows(); ++r) {
        double mx = t.at(r, 0);
        for (std::int64_t c = 1; c < t.cols(); ++c) mx = std::max(mx, t.at(r, c));
        double lse = 0.0;
        for (std::int64_t c = 0; c < t.cols(); ++c) lse += std::exp(t.at(r, c) - mx);
        lse = mx + std::log(lse);
        for (std::int64_t c = 0; c < t.cols(); ++c) n.value.at(r, c) = t.at(r, c) - lse;
    }
    return push(std::move(n));
}

Var Tape::softmax_xent(Var logits, const std::vector<std::int64_t>& labels) {
    const Tensor& t = value(logits);
    require_2d(t, "softmax_xent");
    require(static_cast<std::int64_t>(labels.size()) == t.rows(),
            "softmax_xent: label count " + std::to_string(labels.size()) + " != batch rows " +
                std::to_string(t.rows()));
    Node n;
    n.op = Op::softmax_xent;
    n.inputs = {logits.id};
    n.iaux = labels;
    n.saved = t;  // becomes row-wise softmax probabilities
    double loss = 0.0;
    for (std::int64_t r = 0; r < t.rows(); ++r) {
        require(labels[static_cast<std::size_t>(r)] >= 0 && labels[static_cast<std::size_t>(r)] < t.cols(),
                "softmax_xent: label out of range");
        double mx = t.at(r, 0);
        for (std::int64_t c = 1; c < t.cols(); ++c) mx = std::max(mx, t.at(r, c));
        double lse = 0.0;
        for (std::int64_t c = 0; c < t.cols(); ++c) lse += std::exp(t.at(r, c) - mx);
        lse = mx + std::log(lse);
        for (std::int64_t c = 0; c < t.cols(); ++c) n.saved.at(r, c) = std::exp(t.at(r, c) - lse);
        loss -= t.at(r, labels[static_cast<std::size_t>(r)]) - lse;
    }
    n.value = Tensor::scalar(loss / static_cast<double>(t.rows()));
    return push(std::move(n));
}

// ---------------------------------------------------------------------------

Tensor& Tape::grad_slot(std::int32_t id, const Shape& shape) {
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.data.empty()) g = Tensor::zeros(shape);
    return g;
}

void Tape::accumulate(std::int32_t id, const Tensor& g) {
    Tensor& slot = grad_slot(id, g.shape);
    for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
}

void Tape::backward(Var loss) {
    require(loss.valid() && loss.tape == this, "backward: var not on this tape");
    require(value(loss).is_scalar(), "backward: loss must be scalar, got " + shape_str(value(loss).shape));
    grads_.assign(nodes_.size(), Tensor{});
    has_grads_ = true;
    grads_[static_cast<std::size_t>(loss.id)] = Tensor::scalar(1.0);

    for (std::int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        const Tensor& g = grads_[static_cast<std::size_t>(i)];
        if (g.data.empty()) continue;
        switch (n.op) {
            case Op::leaf:
            case Op::param:
                break;
            case Op::add:
                accumulate(n.inputs[0], g);
                accumulate(n.inputs[1], g);
                break;
            case Op::sub: {
                accumulate(n.inputs[0], g);
                accumulate(n.inputs[1], fieldlab::scale(g, -1.0));
                break;
            }
            case Op::neg:
                accumulate(n.inputs[0], fieldlab::scale(g, -1.0));
                break;
            case Op::mul: {
                accumulate(n.inputs[0], hadamard(g, nodes_[n.inputs[1]].value));
                accumulate(n.inputs[1], hadamard(g, nodes_[n.inputs[0]].value));
                break;
            }
            case Op::scale:
                accumulate(n.inputs[0], fieldlab::scale(g, n.daux));
                break;
            case Op::add_rowvec: {
                accumulate(n.inputs[0], g);
                const Tensor& gv = g;
                Tensor gvec = Tensor::zeros(nodes_[n.inputs[1]].value.shape);
                for (std::int64_t r = 0; r < gv.rows(); ++r)
                    for (std::int64_t c = 0; c < gv.cols(); ++c) gvec.at(c) += gv.at(r, c);
                accumulate(n.inputs[1], gvec);
                break;
            }
            case Op::mul_rowvec: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& w = nodes_[n.inputs[1]].value;
                Tensor ga = g;
                for (std::int64_t r = 0; r < ga.rows(); ++r)
                    for (std::int64_t c = 0; c < ga.cols(); ++c) ga.at(r, c) *= w.at(c);
                accumulate(n.inputs[0], ga);
                Tensor gw = Tensor::zeros(w.shape);
                for (std::int64_t r = 0; r < g.rows(); ++r)
                    for (std::int64_t c = 0; c < g.cols(); ++c) gw.at(c) += g.at(r, c) * a.at(r, c);
                accumulate(n.inputs[1], gw);
                break;
            }
            case Op::add_scalar: {
                accumulate(n.inputs[0], g);
                double s = 0.0;
                for (double v : g.data) s += v;
                accumulate(n.inputs[1], Tensor::scalar(s));
                break;
            }
            case Op::scale_var: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                double s = nodes_[n.inputs[1]].value.at(0);
                accumulate(n.inputs[0], fieldlab::scale(g, s));
                accumulate(n.inputs[1], Tensor::scalar(fieldlab::dot(g, a)));
                break;
            }
            case Op::matmul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                // ga = g . b^T
                Tensor ga = Tensor::zeros(a.shape);
                for (std::int64_t r = 0; r < a.rows(); ++r)
                    for (std::int64_t j = 0; j < b.cols(); ++j) {
                        double gv = g.at(r, j);
                        if (gv == 0.0) continue;
                        for (std::int64_t c = 0; c < a.cols(); ++c) ga.at(r, c) += gv * b.at(c, j);
                    }
                accumulate(n.inputs[0], ga);
                // gb = a^T . g
                Tensor gb = Tensor::zeros(b.shape);
                for (std::int64_t r = 0; r < a.rows(); ++r)
                    for (std::int64_t c = 0; c < a.cols(); ++c) {
                        double av = a.at(r, c);
                        if (av == 0.0) continue;
                        for (std::int64_t j = 0; j < b.cols(); ++j) gb.at(c, j) += av * g.at(r, j);
                    }
                accumulate(n.inputs[1], gb);
                break;
            }
            case Op::tanh_fn: {
                Tensor ga = g;
                for (std::size_t k = 0; k < ga.data.size(); ++k) {
                    double y = n.value.data[k];
                    ga.data[k] *= 1.0 - y * y;
                }
                accumulate(n.inputs[0], ga);
                break;
            }
            case Op::exp_fn:
                accumulate(n.inputs[0], hadamard(g, n.value));
                break;
            case Op::dot_fn: {
                double g0 = g.at(0);
                accumulate(n.inputs[0], fieldlab::scale(nodes_[n.inputs[1]].value, g0));
                accumulate(n.inputs[1], fieldlab::scale(nodes_[n.inputs[0]].value, g0));
                break;
            }
            case Op::sum_fn:
                accumulate(n.inputs[0], Tensor::full(nodes_[n.inputs[0]].value.shape, g.at(0)));
                break;
            case Op::mean_fn: {
                const Tensor& in = nodes_[n.inputs[0]].value;
                accumulate(n.inputs[0], Tensor::full(in.shape, g.at(0) / static_cast<double>(in.numel())));
                break;
            }
            case Op::concat_cols: {
                std::int64_t base = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    std::int64_t w = n.iaux[k];
                    Tensor gk = Tensor::zeros({g.rows(), w});
                    for (std::int64_t r = 0; r < g.rows(); ++r)
                        for (std::int64_t c = 0; c < w; ++c) gk.at(r, c) = g.at(r, base + c);
                    accumulate(n.inputs[k], gk);
                    base += w;
                }
                break;
            }
            case Op::reshape: {
                Tensor ga(nodes_[n.inputs[0]].value.shape, g.data);
                accumulate(n.inputs[0], ga);
                break;
            }
            case Op::shift_cols: {
                std::int64_t nc = g.cols();
                std::int64_t kk = n.iaux[0];
                Tensor ga = Tensor::zeros(g.shape);
                for (std::int64_t r = 0; r < g.rows(); ++r)
                    for (std::int64_t c = 0; c < nc; ++c) ga.at(r, (c + kk) % nc) += g.at(r, c);
                accumulate(n.inputs[0], ga);
                break;
            }
            case Op::where_pos: {
                const Tensor& s = nodes_[n.inputs[0]].value;
                Tensor ga = Tensor::zeros(g.shape);
                Tensor gb = Tensor::zeros(g.shape);
                for (std::size_t k = 0; k < g.data.size(); ++k) {
                    if (s.data[k] > 0.0)
                        ga.data[k] = g.data[k];
                    else
                        gb.data[k] = g.data[k];
                }
                accumulate(n.inputs[1], ga);
                accumulate(n.inputs[2], gb);
                break;
            }
            case Op::log_softmax: {
                // ga = g - softmax * rowsum(g)
                Tensor ga = g;
                for (std::int64_t r = 0; r < g.rows(); ++r) {
                    double rs = 0.0;
                    for (std::int64_t c = 0; c < g.cols(); ++c) rs += g.at(r, c);
                    for (std::int64_t c = 0; c < g.cols(); ++c) ga.at(r, c) -= std::exp(n.value.at(r, c)) * rs;
                }
                accumulate(n.inputs[0], ga);
                break;
            }
            case Op::softmax_xent: {
                const Tensor& probs = n.saved;
                double g0 = g.at(0) / static_cast<double>(probs.rows());
                Tensor gl = fieldlab::scale(probs, g0);
                for (std::int64_t r = 0; r < probs.rows(); ++r)
                    gl.at(r, n.iaux[static_cast<std::size_t>(r)]) -= g0;
                accumulate(n.inputs[0], gl);
                break;
            }
        }
    }
}

Tensor Tape::flat_grad(std::int64_t n_params) const {
    require(has_grads_, "flat_grad: call backward() first");
    Tensor out = Tensor::zeros({n_params});
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op != Op::param) continue;
        const Tensor& g = grads_[i];
        if (g.data.empty()) continue;
        std::int64_t off = n.iaux[0];
        require(off + n.value.numel() <= n_params,
                "flat_grad: parameter slice outside registered vector (unregistered parameter?)");
        for (std::int64_t k = 0; k < n.value.numel(); ++k) out.at(off + k) += g.at(k);
    }
    return out;
}

Tensor Tape::grad_at(Var v) const {
    require(has_grads_, "grad_at: call backward() first");
    const Tensor& g = grads_[static_cast<std::size_t>(v.id)];
    if (g.data.empty()) return Tensor::zeros(value(v).shape);
    return g;
}

}  // namespace fieldlab::ad
