#include "fieldlab/fieldlosses.hpp"

#include <cmath>
#include <stdexcept>

namespace fieldlab::fieldlosses {

using ad::Dual;
using ad::Tape;
using ad::Var;

void LossWeights::validate() const {
    for (double w : {lambda_r, lambda_s, lambda_j, alpha, beta, gamma, lambda_fpr, lambda_h, lambda_j_fpr})
        if (w < 0.0) throw std::invalid_argument("loss weights must be non-negative");
}

Var loss_task(Tape& tp, Var logits, const std::vector<std::int64_t>& labels) {
    return tp.softmax_xent(logits, labels);
}

Var reveal_pair_loss(Tape& tp, Var h_p, Var h_q, Var o_p, Var o_q) {
    double inv_b = 1.0 / static_cast<double>(h_p.shape()[0]);
    Var hidden = tp.scale(tp.sum_sq(h_p - h_q), inv_b);
    Var lp = tp.log_softmax(o_p);
    Var lq = tp.log_softmax(o_q);
    Var kl = tp.scale(tp.sum(tp.exp(lp) * (lp - lq)), inv_b);
    return hidden + kl;
}

Var loss_reveal(Tape& tp, const netzoo::RevealFlowModel& m, const std::vector<Tensor>& views_p,
                const std::vector<Tensor>& views_q) {
    if (views_p.empty() || views_q.empty())
        throw std::invalid_argument("loss_reveal: needs two reveal paths");
    auto trp = m.trace_schedule(tp, views_p);
    auto trq = m.trace_schedule(tp, views_q);
    return reveal_pair_loss(tp, trp.states.back(), trq.states.back(), trp.logits, trq.logits);
}

Var loss_solver(Tape& tp, const netzoo::FieldModel& m, const Tensor& x, const odesolve::SolverSpec& s1,
                const odesolve::SolverSpec& s2) {
    auto t1 = m.trace(tp, x, s1);
    auto t2 = m.trace(tp, x, s2);
    double inv_b = 1.0 / static_cast<double>(x.rows());
    Var dh = tp.sum_sq(t1.states.back() - t2.states.back());
    Var dl = tp.sum_sq(t1.logits - t2.logits);
    return tp.scale(dh + dl, inv_b);
}

Var loss_jac(Tape& tp, const netzoo::FieldModel& m, const Tensor& x, std::int64_t probes, Rng& rng,
             double eps) {
    if (m.depth() < 2)
        throw std::invalid_argument("loss_jac: needs at least two layers to compare adjacent operators");
    if (probes < 1) throw std::invalid_argument("loss_jac: probe count must be >= 1");
    auto tr = m.trace(tp, x);
    auto ctx = m.ctx(tp);
    std::int64_t d = m.state_dim();
    std::int64_t b = x.rows();
    double denom = static_cast<double>(d) + eps;  // Rademacher rows: ||d||^2 = d exactly
    Var acc = tp.constant(Tensor::scalar(0.0));
    for (std::int64_t p = 0; p < probes; ++p) {
        Tensor delta = rng.rademacher_tensor({b, d});
        Var delta_v = tp.constant(delta);
        std::vector<Var> tangents;
        for (std::int64_t l = 0; l < m.depth(); ++l) {
            Dual dh{tr.states[static_cast<std::size_t>(l)], delta_v};
            tangents.push_back(m.dual_step(ctx, dh, l).t);
        }
        for (std::int64_t l = 1; l < m.depth(); ++l) {
            Var diff = tangents[static_cast<std::size_t>(l)] - tangents[static_cast<std::size_t>(l - 1)];
            acc = acc + tp.sum_sq(diff);
        }
    }
    double norm = 1.0 / (denom * static_cast<double>(probes * (m.depth() - 1) * b));
    return tp.scale(acc, norm);
}

Var loss_jac_reveal(Tape& tp, const netzoo::RevealFlowModel& m, const std::vector<Tensor>& views,
                    std::int64_t probes, Rng& rng, double eps) {
    if (views.size() < 2)
        throw std::invalid_argument("loss_jac_reveal: needs at least two reveal steps");
    if (probes < 1) throw std::invalid_argument("loss_jac_reveal: probe count must be >= 1");
    auto tr = m.trace_schedule(tp, views);
    auto ctx = m.ctx(tp);
    std::int64_t d = m.config().hidden_dim;
    std::int64_t b = views.front().rows();
    double denom = static_cast<double>(d) + eps;
    std::int64_t steps = static_cast<std::int64_t>(views.size());
    Var acc = tp.constant(Tensor::scalar(0.0));
    for (std::int64_t p = 0; p < probes; ++p) {
        Var delta_v = tp.constant(rng.rademacher_tensor({b, d}));
        std::vector<Var> tangents;
        for (std::int64_t l = 0; l < steps; ++l) {
            Dual dh{tr.states[static_cast<std::size_t>(l)], delta_v};
            tangents.push_back(m.dual_step(ctx, dh, views[static_cast<std::size_t>(l)]).t);
        }
        for (std::int64_t l = 1; l < steps; ++l)
            acc = acc + tp.sum_sq(tangents[static_cast<std::size_t>(l)] -
                                  tangents[static_cast<std::size_t>(l - 1)]);
    }
    double norm = 1.0 / (denom * static_cast<double>(probes * (steps - 1) * b));
    return tp.scale(acc, norm);
}

namespace {

Var sum_sq_gaps(Tape& tp, const std::vector<Var>& pred, const std::vector<Tensor>& target,
                const char* op) {
    if (pred.size() != target.size())
        throw std::invalid_argument(std::string(op) + ": prediction/target count mismatch");
    if (pred.empty()) throw std::invalid_argument(std::string(op) + ": empty sequence");
    double inv_b = 1.0 / static_cast<double>(pred.front().shape()[0]);
    Var acc = tp.constant(Tensor::scalar(0.0));
    for (std::size_t k = 0; k < pred.size(); ++k)
        acc = acc + tp.sum_sq(pred[k] - tp.constant(target[k]));
    return tp.scale(acc, inv_b);
}

}  // namespace

Var loss_traj(Tape& tp, const std::vector<Var>& pred_states, const std::vector<Tensor>& teacher_states) {
    return sum_sq_gaps(tp, pred_states, teacher_states, "loss_traj");
}

Var loss_deriv(Tape& tp, const std::vector<Var>& field_pred, const std::vector<Tensor>& field_true) {
    return sum_sq_gaps(tp, field_pred, field_true, "loss_deriv");
}

Var loss_fpr(Tape& tp, const netzoo::FieldModel& frozen_old, const netzoo::FieldModel& m_new,
             const Tensor& anchors, double lambda_h, double lambda_j, std::int64_t probes, Rng& rng,
             double eps, std::int64_t layer_lo, std::int64_t layer_hi) {
    if (anchors.shape.size() != 2 || anchors.rows() < 1)
        throw std::invalid_argument("loss_fpr: anchor set is empty");
    if (frozen_old.depth() != m_new.depth() || frozen_old.state_dim() != m_new.state_dim())
        throw std::invalid_argument("loss_fpr: models are not layer-comparable");
    std::int64_t L = m_new.depth();
    if (layer_hi < 0) layer_hi = L;
    if (layer_lo < 0 || layer_lo >= layer_hi || layer_hi > L)
        throw std::invalid_argument("loss_fpr: bad layer range");

    auto old_fwd = frozen_old.forward_with_trajectory(anchors);
    auto tr = m_new.trace(tp, anchors);
    auto ctx = m_new.ctx(tp);
    std::int64_t b = anchors.rows();
    std::int64_t d = m_new.state_dim();

    Var total = tp.constant(Tensor::scalar(0.0));
    if (lambda_h > 0.0) {
        // states indexed 0..L; the protected slice covers [layer_lo, layer_hi]
        Var acc = tp.constant(Tensor::scalar(0.0));
        std::int64_t states = 0;
        for (std::int64_t l = layer_lo; l <= layer_hi; ++l) {
            Var diff = tr.states[static_cast<std::size_t>(l)] -
                       tp.constant(old_fwd.states[static_cast<std::size_t>(l)]);
            acc = acc + tp.sum_sq(diff);
            ++states;
        }
        total = total + tp.scale(acc, lambda_h / static_cast<double>(b * states));
    }
    if (lambda_j > 0.0) {
        if (probes < 1) throw std::invalid_argument("loss_fpr: probe count must be >= 1");
        double denom = static_cast<double>(d) + eps;
        Var acc = tp.constant(Tensor::scalar(0.0));
        std::int64_t terms = 0;
        for (std::int64_t p = 0; p < probes; ++p) {
            Tensor delta = rng.rademacher_tensor({b, d});
            Var delta_v = tp.constant(delta);
            for (std::int64_t l = layer_lo; l < layer_hi; ++l) {
                Tensor j_old = frozen_old.layer_jvp(anchors, l, delta);
                Dual dh{tr.states[static_cast<std::size_t>(l)], delta_v};
                Var j_new = m_new.dual_step(ctx, dh, l).t;
                acc = acc + tp.sum_sq(j_new - tp.constant(j_old));
                ++terms;
            }
        }
        total = total + tp.scale(acc, lambda_j / (denom * static_cast<double>(terms) *
                                                  static_cast<double>(b)));
    }
    return total;
}

double rep_variance(const Tensor& h_final) {
    std::int64_t b = h_final.rows(), d = h_final.cols();
    double acc = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::int64_t r = 0; r < b; ++r) mean += h_final.at(r, c);
        mean /= static_cast<double>(b);
        double var = 0.0;
        for (std::int64_t r = 0; r < b; ++r) {
            double dlt = h_final.at(r, c) - mean;
            var += dlt * dlt;
        }
        acc += var / static_cast<double>(b);
    }
    return acc / static_cast<double>(d);
}

CollapseFlags collapse_check(const Tensor& h_final, const Tensor& logits,
                             const CollapseThresholds& thresholds) {
    if (h_final.rows() != logits.rows() || h_final.rows() < 1)
        throw std::invalid_argument("collapse_check: empty or mismatched evaluation batch");
    CollapseFlags flags;
    flags.rep_variance = rep_variance(h_final);

    std::int64_t b = logits.rows(), c = logits.cols();
    std::vector<double> mean_soft(static_cast<std::size_t>(c), 0.0);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(c), 0);
    for (std::int64_t r = 0; r < b; ++r) {
        double mx = logits.at(r, 0);
        std::int64_t arg = 0;
        for (std::int64_t j = 1; j < c; ++j)
            if (logits.at(r, j) > mx) {
                mx = logits.at(r, j);
                arg = j;
            }
        double z = 0.0;
        for (std::int64_t j = 0; j < c; ++j) z += std::exp(logits.at(r, j) - mx);
        for (std::int64_t j = 0; j < c; ++j)
            mean_soft[static_cast<std::size_t>(j)] += std::exp(logits.at(r, j) - mx) / z;
        counts[static_cast<std::size_t>(arg)] += 1;
    }
    double entropy = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
        double p = mean_soft[static_cast<std::size_t>(j)] / static_cast<double>(b);
        if (p > 0.0) entropy -= p * std::log(p);
    }
    flags.prediction_entropy = entropy;
    std::int64_t top = 0;
    for (std::int64_t j = 0; j < c; ++j) top = std::max(top, counts[static_cast<std::size_t>(j)]);
    flags.class_balance = static_cast<double>(top) / static_cast<double>(b);
    flags.collapsed = (flags.rep_variance < thresholds.rep_variance_floor) ||
                      (flags.class_balance > thresholds.class_share_cap);
    return flags;
}

CollapseFlags collapse_check(const netzoo::FieldModel& m, const Tensor& x,
                             const CollapseThresholds& thresholds) {
    auto fwd = m.forward_with_trajectory(x);
    return collapse_check(fwd.states.back(), fwd.logits, thresholds);
}

}  // namespace fieldlab::fieldlosses
