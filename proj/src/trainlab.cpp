#include "fieldlab/trainlab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "fieldlab/fieldlosses.hpp"

namespace fieldlab::trainlab {

using ad::Tape;
using ad::Var;
using teacherflow::LatentFlowModel;
using teacherflow::TeacherDataset;

Optimizer optimizer_from_string(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

void Sgd::step(std::vector<double>& theta, const Tensor& grad) {
    if (static_cast<std::int64_t>(theta.size()) != grad.numel())
        throw std::invalid_argument("sgd: gradient length mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * grad.at(static_cast<std::int64_t>(i));
}

void Adam::step(std::vector<double>& theta, const Tensor& grad) {
    if (static_cast<std::int64_t>(theta.size()) != grad.numel())
        throw std::invalid_argument("adam: gradient length mismatch");
    if (m_.empty()) {
        m_.assign(theta.size(), 0.0);
        v_.assign(theta.size(), 0.0);
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = grad.at(static_cast<std::int64_t>(i));
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        theta[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
}

double cosine(const Tensor& a, const Tensor& b) {
    double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

Tensor pcgrad_combine(const Tensor& g_task, const Tensor& g_field) {
    double inner = dot(g_task, g_field);
    if (inner >= 0.0) return add(g_task, g_field);
    double nt2 = squared_norm(g_task), nf2 = squared_norm(g_field);
    Tensor t_proj = g_task, f_proj = g_field;
    if (nf2 > 0.0) t_proj = sub(g_task, scale(g_field, inner / nf2));
    if (nt2 > 0.0) f_proj = sub(g_field, scale(g_task, inner / nt2));
    return add(t_proj, f_proj);
}

Tensor mgda_combine(const Tensor& g_task, const Tensor& g_field) {
    // single-objective degenerations keep training alive
    if (squared_norm(g_field) == 0.0) return g_task;
    if (squared_norm(g_task) == 0.0) return g_field;
    Tensor diff = sub(g_field, g_task);
    double denom = squared_norm(diff);
    if (denom < 1e-24) return g_task;  // coincident gradients: any w works
    double w = dot(diff, g_field) / denom;
    w = std::clamp(w, 0.0, 1.0);
    return add(scale(g_task, w), scale(g_field, 1.0 - w));
}

Tensor projected_task_step(const Tensor& g_task, const Tensor& g_field) {
    double nf2 = squared_norm(g_field);
    if (nf2 == 0.0) return g_task;
    double inner = dot(g_task, g_field);
    if (inner >= 0.0) return g_task;
    return sub(g_task, scale(g_field, inner / nf2));
}

const char* algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::fullbptt: return "fullbptt";
        case Algorithm::segment_shooting: return "segment_shooting";
        case Algorithm::local_field_match: return "local_field_match";
        case Algorithm::pcgrad: return "pcgrad";
        case Algorithm::mgda: return "mgda";
        case Algorithm::curriculum: return "curriculum";
        case Algorithm::alternating: return "alternating";
        case Algorithm::projected_task: return "projected_task";
    }
    return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
    for (Algorithm a : {Algorithm::fullbptt, Algorithm::segment_shooting, Algorithm::local_field_match,
                        Algorithm::pcgrad, Algorithm::mgda, Algorithm::curriculum, Algorithm::alternating,
                        Algorithm::projected_task})
        if (s == algorithm_name(a)) return a;
    throw std::invalid_argument("unknown training algorithm '" + s + "'");
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
        throw std::invalid_argument("train config: field weights must be >= 0");
    if (shooting_segments < 1) throw std::invalid_argument("train config: segments must be >= 1");
}

void ConflictLog::finalize() {
    if (cosines.empty()) return;
    mean = std::accumulate(cosines.begin(), cosines.end(), 0.0) / static_cast<double>(cosines.size());
    min = *std::min_element(cosines.begin(), cosines.end());
    double neg = 0.0;
    for (double c : cosines)
        if (c < 0.0) neg += 1.0;
    negative_fraction = neg / static_cast<double>(cosines.size());
}

namespace {

struct BatchView {
    Tensor x;
    std::vector<std::int64_t> labels;
    std::vector<Tensor> traj;   // teacher states at sample times [b x n]
    std::vector<Tensor> deriv;  // teacher field at those states
};

BatchView gather(const TeacherDataset& ds, const std::vector<std::int64_t>& idx) {
    std::int64_t b = static_cast<std::int64_t>(idx.size());
    std::int64_t D = ds.x.cols(), n = ds.z0.cols();
    BatchView out;
    out.x = Tensor::zeros({b, D});
    for (std::int64_t r = 0; r < b; ++r)
        for (std::int64_t c = 0; c < D; ++c) out.x.at(r, c) = ds.x.at(idx[static_cast<std::size_t>(r)], c);
    for (auto i : idx) out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    for (const auto& zk : ds.traj) {
        Tensor t = Tensor::zeros({b, n});
        for (std::int64_t r = 0; r < b; ++r)
            for (std::int64_t c = 0; c < n; ++c) t.at(r, c) = zk.at(idx[static_cast<std::size_t>(r)], c);
        out.traj.push_back(std::move(t));
    }
    for (const auto& dk : ds.deriv) {
        Tensor t = Tensor::zeros({b, n});
        for (std::int64_t r = 0; r < b; ++r)
            for (std::int64_t c = 0; c < n; ++c) t.at(r, c) = dk.at(idx[static_cast<std::size_t>(r)], c);
        out.deriv.push_back(std::move(t));
    }
    return out;
}

/// Teacher-aligned field losses on an existing trace: alpha L_traj + beta
/// L_deriv (+ gamma L_solver handled separately, it needs extra passes).
Var field_terms(Tape& tp, const LatentFlowModel& m, const LatentFlowModel::Trace& tr,
                netzoo::TapeCtx& ctx, const BatchView& batch, const TeacherDataset& ds,
                const TrainConfig& cfg) {
    std::int64_t K = ds.spec.sample_times;
    std::int64_t stride = m.config().solver.steps / K;
    Var total = tp.constant(Tensor::scalar(0.0));
    if (cfg.alpha > 0.0) {
        std::vector<Var> pred;
        std::vector<Tensor> target;
        for (std::int64_t k = 1; k <= K; ++k) {
            pred.push_back(tr.states[static_cast<std::size_t>(k * stride)]);
            target.push_back(batch.traj[static_cast<std::size_t>(k)]);
        }
        total = total + tp.scale(fieldlosses::loss_traj(tp, pred, target), cfg.alpha);
    }
    if (cfg.beta > 0.0) {
        std::vector<Var> pred;
        std::vector<Tensor> target;
        for (std::int64_t k = 1; k <= K; ++k) {
            Var zk = tr.states[static_cast<std::size_t>(k * stride)];
            pred.push_back(m.field_on_tape(ctx, zk, ds.sample_time(k)));
            target.push_back(batch.deriv[static_cast<std::size_t>(k)]);
        }
        total = total + tp.scale(fieldlosses::loss_deriv(tp, pred, target), cfg.beta);
    }
    return total;
}

/// gamma-weighted solver-consistency loss: the model's own spec vs doubled
/// steps, gradients through both unrolled integrations.
Var solver_term(Tape& tp, const LatentFlowModel& m, netzoo::TapeCtx& ctx, const Tensor& x,
                const LatentFlowModel::Trace& base_tr, const TrainConfig& cfg) {
    odesolve::SolverSpec fine = m.config().solver;
    fine.steps *= 2;
    Var z0 = base_tr.states.front();
    auto states2 = odesolve::integrate(
        [&](Var z, double t) { return m.field_on_tape(ctx, z, t); }, z0, fine);
    Var logits2 = tp.add_rowvec(tp.matmul(states2.back(), ctx.p("head.W")), ctx.p("head.b"));
    double inv_b = 1.0 / static_cast<double>(x.rows());
    Var gap = tp.sum_sq(base_tr.states.back() - states2.back()) +
              tp.sum_sq(base_tr.logits - logits2);
    return tp.scale(gap, cfg.gamma * inv_b);
}

/// Shooting objective: the first segment starts from the model's own encoded
/// state, later segments restart from the teacher state at their left
/// boundary; every segment is penalized against the teacher state at its
/// right boundary. With one segment this is exactly the terminal trajectory
/// loss.
Var shooting_terms(Tape& tp, const LatentFlowModel& m, netzoo::TapeCtx& ctx,
                   const LatentFlowModel::Trace& tr, const BatchView& batch, const TeacherDataset& ds,
                   const TrainConfig& cfg) {
    std::int64_t K = ds.spec.sample_times;
    std::int64_t S = cfg.shooting_segments;
    if (K % S != 0)
        throw std::invalid_argument("segment_shooting: K must be divisible by the segment count");
    std::int64_t steps = m.config().solver.steps;
    if (steps % S != 0)
        throw std::invalid_argument("segment_shooting: solver steps must be divisible by the segment count");
    std::int64_t kn = K / S;          // sample intervals per segment
    std::int64_t sn = steps / S;      // solver steps per segment
    double seg_t = ds.spec.horizon / static_cast<double>(S);

    double inv_b = 1.0 / static_cast<double>(batch.x.rows());
    Var acc = tp.constant(Tensor::scalar(0.0));
    for (std::int64_t s = 0; s < S; ++s) {
        Var start = (s == 0) ? tr.states.front()
                             : tp.constant(batch.traj[static_cast<std::size_t>(s * kn)]);
        odesolve::SolverSpec spec = m.config().solver;
        spec.steps = sn;
        spec.t0 = seg_t * static_cast<double>(s);
        spec.t1 = seg_t * static_cast<double>(s + 1);
        auto states = odesolve::integrate(
            [&](Var z, double t) { return m.field_on_tape(ctx, z, t); }, start, spec);
        Var diff = states.back() - tp.constant(batch.traj[static_cast<std::size_t>((s + 1) * kn)]);
        acc = acc + tp.sum_sq(diff);
    }
    return tp.scale(acc, cfg.alpha * inv_b);
}

}  // namespace

double shooting_penalty_value(const LatentFlowModel& model, const TeacherDataset& ds,
                              std::int64_t segments, double alpha) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(ds.size()));
    std::iota(idx.begin(), idx.end(), 0);
    BatchView batch = gather(ds, idx);
    TrainConfig cfg;
    cfg.shooting_segments = segments;
    cfg.alpha = alpha;
    Tape tp;
    auto ctx = model.ctx(tp);
    auto tr = model.trace(tp, batch.x);
    return tp.value(shooting_terms(tp, model, ctx, tr, batch, ds, cfg)).at(0);
}

TrainResult train(LatentFlowModel& model, const TeacherDataset& train_data,
                  const TeacherDataset& eval_data, const TrainConfig& cfg) {
    cfg.validate();
    if (model.config().solver.steps % train_data.spec.sample_times != 0)
        throw std::invalid_argument("train: solver steps must be a multiple of the teacher sample times");
    auto t_start = std::chrono::steady_clock::now();

    Adam adam(cfg.lr);
    double live_lr = cfg.lr;
    auto apply = [&](const Tensor& g) {
        if (cfg.optimizer == Optimizer::adam)
            adam.step(model.theta(), g);
        else
            Sgd(live_lr).step(model.theta(), g);
    };

    bool has_field = cfg.alpha > 0.0 || cfg.beta > 0.0 || cfg.gamma > 0.0;
    std::int64_t field_epochs = 0;
    if (cfg.algorithm == Algorithm::curriculum && has_field) field_epochs = cfg.epochs / 2;

    // builds the (task, field) pair on one tape; which parts get used depends
    // on the algorithm
    auto build_losses = [&](const BatchView& batch) {
        struct Built {
            Tape tp;
            Var task;
            Var field;
        };
        auto out = std::make_unique<Built>();
        auto ctx = model.ctx(out->tp);
        auto tr = model.trace(out->tp, batch.x);
        out->task = fieldlosses::loss_task(out->tp, tr.logits, batch.labels);
        if (cfg.algorithm == Algorithm::segment_shooting) {
            out->field = shooting_terms(out->tp, model, ctx, tr, batch, train_data, cfg);
        } else if (cfg.algorithm == Algorithm::local_field_match) {
            std::int64_t K = train_data.spec.sample_times;
            std::vector<Var> pred;
            std::vector<Tensor> target;
            for (std::int64_t k = 0; k <= K; ++k) {
                Var zk = out->tp.constant(batch.traj[static_cast<std::size_t>(k)]);
                pred.push_back(model.field_on_tape(ctx, zk, train_data.sample_time(k)));
                target.push_back(batch.deriv[static_cast<std::size_t>(k)]);
            }
            out->field = out->tp.scale(fieldlosses::loss_deriv(out->tp, pred, target),
                                       cfg.beta > 0.0 ? cfg.beta : 1.0);
        } else {
            Var f = field_terms(out->tp, model, tr, ctx, batch, train_data, cfg);
            if (cfg.gamma > 0.0) f = f + solver_term(out->tp, model, ctx, batch.x, tr, cfg);
            out->field = f;
        }
        return out;
    };

    Rng order_rng = Rng(cfg.seed).split("batches");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(train_data.size()));
    std::iota(idx.begin(), idx.end(), 0);

    TrainResult result;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_decay != 1.0 && epoch == (2 * cfg.epochs) / 3) {
            live_lr = cfg.lr * cfg.lr_decay;
            adam.set_lr(live_lr);
        }
        order_rng.shuffle(idx);
        bool field_phase_only = false;
        bool task_phase_only = false;
        if (cfg.algorithm == Algorithm::curriculum) {
            field_phase_only = epoch < field_epochs;
            task_phase_only = !field_phase_only;
        } else if (cfg.algorithm == Algorithm::alternating && has_field) {
            field_phase_only = (epoch % 2 == 1);
            task_phase_only = !field_phase_only;
        }

        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(cfg.batch)) {
            std::vector<std::int64_t> take(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                             start + static_cast<std::size_t>(cfg.batch),
                                                             idx.size())));
            BatchView batch = gather(train_data, take);
            auto built = build_losses(batch);
            switch (cfg.algorithm) {
                case Algorithm::fullbptt:
                case Algorithm::segment_shooting:
                case Algorithm::local_field_match: {
                    Var total = built->task + built->field;
                    built->tp.backward(total);
                    apply(built->tp.flat_grad(model.n_params()));
                    break;
                }
                case Algorithm::curriculum:
                case Algorithm::alternating: {
                    Var chosen = field_phase_only ? built->field : built->task;
                    if (task_phase_only) chosen = built->task;
                    built->tp.backward(chosen);
                    apply(built->tp.flat_grad(model.n_params()));
                    break;
                }
                case Algorithm::pcgrad:
                case Algorithm::mgda:
                case Algorithm::projected_task: {
                    built->tp.backward(built->task);
                    Tensor g_task = built->tp.flat_grad(model.n_params());
                    built->tp.backward(built->field);
                    Tensor g_field = built->tp.flat_grad(model.n_params());
                    Tensor dir;
                    if (cfg.algorithm == Algorithm::pcgrad)
                        dir = pcgrad_combine(g_task, g_field);
                    else if (cfg.algorithm == Algorithm::mgda)
                        dir = mgda_combine(g_task, g_field);
                    else
                        dir = projected_task_step(g_task, g_field);
                    apply(dir);
                    break;
                }
            }
        }

        // full-batch task/field gradient cosine, measured on the raw gradients
        if (cfg.log_conflict) {
            BatchView full = gather(train_data, idx);
            auto built = build_losses(full);
            built->tp.backward(built->task);
            Tensor g_task = built->tp.flat_grad(model.n_params());
            built->tp.backward(built->field);
            Tensor g_field = built->tp.flat_grad(model.n_params());
            result.conflict.cosines.push_back(cosine(g_task, g_field));
        }

        EpochRecord rec;
        {
            auto metrics = teacherflow::evaluate_field_recovery(model, eval_data);
            rec.accuracy = metrics.accuracy;
            rec.traj_rmse = metrics.traj_rmse;
            rec.deriv_rmse = metrics.deriv_rmse;
            rec.reparam = metrics.reparam_consistency;
            BatchView full = gather(train_data, idx);
            Tape tp;
            auto tr = model.trace(tp, full.x);
            rec.task_loss = tp.value(fieldlosses::loss_task(tp, tr.logits, full.labels)).at(0);
            if (!std::isfinite(rec.task_loss))
                throw std::runtime_error("train: loss diverged to non-finite");
        }
        result.history.push_back(rec);
    }
    result.conflict.finalize();
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

}  // namespace fieldlab::trainlab
