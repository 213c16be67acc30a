#include "fieldlab/continual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fieldlab/fieldlosses.hpp"
#include "fieldlab/trainlab.hpp"

namespace fieldlab::continual {

using ad::Tape;
using ad::Var;
using netzoo::FieldModel;

const char* method_name(Method m) {
    switch (m) {
        case Method::finetune: return "finetune";
        case Method::ewc: return "ewc";
        case Method::lwf: return "lwf";
        case Method::er: return "er";
        case Method::derpp: return "derpp";
        case Method::fpr_traj: return "fpr_traj";
        case Method::fpr_jac: return "fpr_jac";
        case Method::fpr_full: return "fpr_full";
        case Method::er_fpr_late: return "er+fpr_late";
        case Method::derpp_fpr_full: return "derpp+fpr_full";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    for (Method m : {Method::finetune, Method::ewc, Method::lwf, Method::er, Method::derpp,
                     Method::fpr_traj, Method::fpr_jac, Method::fpr_full, Method::er_fpr_late,
                     Method::derpp_fpr_full})
        if (s == method_name(m)) return m;
    throw std::invalid_argument("unknown continual method '" + s + "'");
}

bool needs_buffer(Method m) {
    switch (m) {
        case Method::er:
        case Method::derpp:
        case Method::er_fpr_late:
        case Method::derpp_fpr_full:
        case Method::fpr_traj:
        case Method::fpr_jac:
        case Method::fpr_full:
            return true;
        default:
            return false;
    }
}

void ContinualConfig::validate(Method m) const {
    if (tasks < 1 || classes_per_task < 2)
        throw std::invalid_argument("continual config: tasks/classes out of range");
    if (needs_buffer(m) && buffer_budget < 1)
        throw std::invalid_argument(std::string("continual config: method '") + method_name(m) +
                                    "' requires a positive buffer budget");
    if (epochs_per_task < 1 || batch < 1 || !(lr > 0.0))
        throw std::invalid_argument("continual config: bad optimization settings");
}

TaskSequence make_task_sequence(const ContinualConfig& cfg, Rng& rng) {
    manifoldgen::ManifoldSpec spec = manifoldgen::ManifoldSpec::preset(
        cfg.difficulty, cfg.total_classes(), cfg.ambient_dim, cfg.intrinsic_dim,
        cfg.train_per_class + cfg.test_per_class);
    Rng data_rng = rng.split("cl-data");
    manifoldgen::Dataset all = manifoldgen::generate_manifold(spec, data_rng);
    auto [train, test] = manifoldgen::split_train_test(all, cfg.train_per_class);

    std::vector<std::int64_t> class_order(static_cast<std::size_t>(cfg.total_classes()));
    std::iota(class_order.begin(), class_order.end(), 0);
    Rng order_rng = rng.split("cl-task-order");
    order_rng.shuffle(class_order);

    auto rows_of = [](const manifoldgen::Dataset& ds, const std::set<std::int64_t>& classes) {
        std::vector<std::int64_t> rows;
        for (std::int64_t r = 0; r < ds.size(); ++r)
            if (classes.count(ds.labels[static_cast<std::size_t>(r)])) rows.push_back(r);
        return rows;
    };
    auto gather = [](const manifoldgen::Dataset& ds, const std::vector<std::int64_t>& rows, Tensor& x,
                     std::vector<std::int64_t>& y) {
        x = Tensor::zeros({static_cast<std::int64_t>(rows.size()), ds.spec.ambient_dim});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::int64_t c = 0; c < ds.spec.ambient_dim; ++c)
                x.at(static_cast<std::int64_t>(i), c) = ds.x.at(rows[i], c);
            y.push_back(ds.labels[static_cast<std::size_t>(rows[i])]);
        }
    };

    TaskSequence seq;
    seq.total_classes = cfg.total_classes();
    for (std::int64_t t = 0; t < cfg.tasks; ++t) {
        TaskData task;
        std::set<std::int64_t> classes;
        for (std::int64_t k = 0; k < cfg.classes_per_task; ++k) {
            std::int64_t cid = class_order[static_cast<std::size_t>(t * cfg.classes_per_task + k)];
            classes.insert(cid);
            task.class_ids.push_back(cid);
        }
        gather(train, rows_of(train, classes), task.train_x, task.train_y);
        gather(test, rows_of(test, classes), task.test_x, task.test_y);
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

// ---------------------------------------------------------------------------

std::string AccuracyMatrix::to_json() const {
    nlohmann::json j;
    j["tasks"] = tasks;
    j["r"] = r;
    j["pre"] = pre;
    return j.dump(2);
}

AccuracyMatrix AccuracyMatrix::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    AccuracyMatrix m;
    m.tasks = j.at("tasks").get<std::int64_t>();
    m.r = j.at("r").get<std::vector<std::vector<double>>>();
    m.pre = j.at("pre").get<std::vector<double>>();
    return m;
}

CLMetrics metrics_aa_bwt_fwt(const AccuracyMatrix& m, double random_baseline) {
    if (m.tasks < 1 || m.r.empty()) throw std::invalid_argument("metrics: empty accuracy matrix");
    CLMetrics out;
    const auto& last = m.r.back();
    out.aa = std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
    if (m.tasks > 1) {
        double acc = 0.0;
        for (std::size_t j = 0; j + 1 < static_cast<std::size_t>(m.tasks); ++j)
            acc += last[j] - m.r[j][j];
        out.bwt = acc / static_cast<double>(m.tasks - 1);
        if (!m.pre.empty()) {
            double f = 0.0;
            std::int64_t n = 0;
            for (std::size_t j = 1; j < m.pre.size(); ++j) {
                f += m.pre[j] - random_baseline;
                ++n;
            }
            if (n > 0) out.fwt = f / static_cast<double>(n);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kMaskOff = -1e4;

/// Reservoir buffer of (x, y, logits-at-insertion) for one task.
struct TaskBuffer {
    std::vector<Tensor> x;  // each [D]
    std::vector<std::int64_t> y;
    std::vector<Tensor> logits;
    std::int64_t seen = 0;

    void offer(const Tensor& xi, std::int64_t yi, const Tensor& li, std::int64_t budget, Rng& rng) {
        ++seen;
        if (static_cast<std::int64_t>(x.size()) < budget) {
            x.push_back(xi);
            y.push_back(yi);
            logits.push_back(li);
            return;
        }
        std::int64_t slot = rng.uniform_int(seen);
        if (slot < budget) {
            auto s = static_cast<std::size_t>(slot);
            x[s] = xi;
            y[s] = yi;
            logits[s] = li;
        }
    }
};

Tensor rows_to_matrix(const std::vector<Tensor>& rows) {
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(rows.size()), rows.front().numel()});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::int64_t c = 0; c < rows.front().numel(); ++c) out.at(static_cast<std::int64_t>(r), c) = rows[r].at(c);
    return out;
}

Tensor mask_bias_row(std::int64_t classes, const std::set<std::int64_t>& allowed) {
    Tensor bias = Tensor::full({classes}, kMaskOff);
    for (auto c : allowed) bias.at(c) = 0.0;
    return bias;
}

/// Class-incremental evaluation: argmax over the classes seen so far.
double masked_accuracy(const FieldModel& m, const Tensor& x, const std::vector<std::int64_t>& y,
                       const std::set<std::int64_t>& allowed) {
    auto fwd = m.forward_with_trajectory(x);
    double hits = 0.0;
    for (std::int64_t r = 0; r < x.rows(); ++r) {
        std::int64_t best = -1;
        double best_v = -1e300;
        for (std::int64_t c = 0; c < fwd.logits.cols(); ++c) {
            if (!allowed.count(c)) continue;
            if (fwd.logits.at(r, c) > best_v) {
                best_v = fwd.logits.at(r, c);
                best = c;
            }
        }
        if (best == y[static_cast<std::size_t>(r)]) hits += 1.0;
    }
    return hits / static_cast<double>(x.rows());
}

/// Diagonal empirical Fisher of the cross-entropy over a task's train set.
Tensor diagonal_fisher(const FieldModel& m, const Tensor& x, const std::vector<std::int64_t>& y,
                       const Tensor& mask_bias) {
    Tensor fisher = Tensor::zeros({m.n_params()});
    for (std::int64_t r = 0; r < x.rows(); ++r) {
        Tensor xr = Tensor::zeros({1, x.cols()});
        for (std::int64_t c = 0; c < x.cols(); ++c) xr.at(0, c) = x.at(r, c);
        Tape tp;
        auto tr = m.trace(tp, xr);
        Var logits = tp.add_rowvec(tr.logits, tp.constant(mask_bias));
        tp.backward(tp.softmax_xent(logits, {y[static_cast<std::size_t>(r)]}));
        Tensor g = tp.flat_grad(m.n_params());
        for (std::int64_t i = 0; i < fisher.numel(); ++i) fisher.at(i) += g.at(i) * g.at(i);
    }
    return scale(fisher, 1.0 / static_cast<double>(x.rows()));
}

struct EwcTerm {
    Tensor fisher;          // [P]
    std::vector<double> ref;  // theta snapshot
};

double mean_retention(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

RunArtifacts run_method(Method method, const TaskSequence& seq, const ContinualConfig& cfg) {
    cfg.validate(method);
    std::int64_t T = static_cast<std::int64_t>(seq.tasks.size());
    std::int64_t D = seq.tasks.front().train_x.cols();

    netzoo::ModelConfig mc;
    mc.family = netzoo::Family::sharedfield;
    mc.input_dim = D;
    mc.hidden_dim = cfg.hidden_dim;
    mc.depth = cfg.depth;
    mc.classes = seq.total_classes;
    Rng init_rng = Rng(cfg.seed).split("cl-init");
    FieldModel model = FieldModel::create(mc, init_rng);

    bool uses_fpr = method == Method::fpr_traj || method == Method::fpr_jac ||
                    method == Method::fpr_full || method == Method::er_fpr_late ||
                    method == Method::derpp_fpr_full;
    bool uses_er = method == Method::er || method == Method::er_fpr_late;
    bool uses_derpp = method == Method::derpp || method == Method::derpp_fpr_full;
    double fpr_h = cfg.fpr_lambda_h, fpr_j = cfg.fpr_lambda_j;
    if (method == Method::fpr_traj) fpr_j = 0.0;
    if (method == Method::fpr_jac) fpr_h = 0.0;
    std::int64_t layer_lo = 0, layer_hi = cfg.depth;
    if (method == Method::er_fpr_late) layer_lo = (2 * cfg.depth) / 3;  // late third

    RunArtifacts out;
    out.result.method = method;
    out.result.acc.tasks = T;
    out.result.acc.pre.assign(static_cast<std::size_t>(T), 0.0);

    std::vector<TaskBuffer> buffers(static_cast<std::size_t>(T));
    std::vector<EwcTerm> ewc_terms;
    std::set<std::int64_t> seen_classes;
    std::vector<double> frs_running, jrs_running;

    Rng run_rng = Rng(cfg.seed).split("cl-run");

    for (std::int64_t t = 0; t < T; ++t) {
        const TaskData& task = seq.tasks[static_cast<std::size_t>(t)];

        // pre-training accuracy on this task (forward transfer reference)
        std::set<std::int64_t> pre_mask = seen_classes;
        for (auto c : task.class_ids) pre_mask.insert(c);
        out.result.acc.pre[static_cast<std::size_t>(t)] =
            masked_accuracy(model, task.test_x, task.test_y, pre_mask);

        FieldModel frozen = model;  // snapshot before this task: the FPR/LwF reference
        std::set<std::int64_t> old_classes = seen_classes;
        for (auto c : task.class_ids) seen_classes.insert(c);
        Tensor train_mask = mask_bias_row(seq.total_classes, seen_classes);
        Tensor old_mask = mask_bias_row(seq.total_classes, old_classes);

        // old-task anchors for this task's FPR term
        Tensor fpr_anchors;
        if (uses_fpr && t > 0) {
            std::vector<Tensor> rows;
            for (std::int64_t j = 0; j < t; ++j)
                for (const auto& xr : buffers[static_cast<std::size_t>(j)].x) rows.push_back(xr);
            if (!rows.empty()) fpr_anchors = rows_to_matrix(rows);
        }

        trainlab::Adam opt(cfg.lr);
        Rng task_rng = run_rng.split("task" + std::to_string(t));
        std::vector<std::int64_t> idx(static_cast<std::size_t>(task.train_x.rows()));
        std::iota(idx.begin(), idx.end(), 0);

        for (std::int64_t epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
            task_rng.shuffle(idx);
            for (std::size_t start = 0; start < idx.size();
                 start += static_cast<std::size_t>(cfg.batch)) {
                std::vector<std::int64_t> take(
                    idx.begin() + static_cast<std::ptrdiff_t>(start),
                    idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                      start + static_cast<std::size_t>(cfg.batch), idx.size())));
                Tensor xb = Tensor::zeros({static_cast<std::int64_t>(take.size()), D});
                std::vector<std::int64_t> yb;
                for (std::size_t r = 0; r < take.size(); ++r) {
                    for (std::int64_t c = 0; c < D; ++c)
                        xb.at(static_cast<std::int64_t>(r), c) = task.train_x.at(take[r], c);
                    yb.push_back(task.train_y[static_cast<std::size_t>(take[r])]);
                }

                Tape tp;
                auto tr = model.trace(tp, xb);
                Var logits = tp.add_rowvec(tr.logits, tp.constant(train_mask));
                Var loss = tp.softmax_xent(logits, yb);

                // replay terms
                if ((uses_er || uses_derpp) && t > 0) {
                    std::vector<Tensor> rx;
                    std::vector<std::int64_t> ry;
                    std::vector<Tensor> rl;
                    for (std::size_t pick = 0; pick < take.size(); ++pick) {
                        std::int64_t j = task_rng.uniform_int(t);
                        const auto& buf = buffers[static_cast<std::size_t>(j)];
                        if (buf.x.empty()) continue;
                        std::int64_t s = task_rng.uniform_int(static_cast<std::int64_t>(buf.x.size()));
                        rx.push_back(buf.x[static_cast<std::size_t>(s)]);
                        ry.push_back(buf.y[static_cast<std::size_t>(s)]);
                        rl.push_back(buf.logits[static_cast<std::size_t>(s)]);
                    }
                    if (!rx.empty()) {
                        Tensor rxm = rows_to_matrix(rx);
                        auto rtr = model.trace(tp, rxm);
                        Var rlogits = tp.add_rowvec(rtr.logits, tp.constant(train_mask));
                        if (uses_er) {
                            loss = loss + tp.softmax_xent(rlogits, ry);
                        } else {
                            // DER++: align stored logits with MSE, plus replay CE
                            Tensor stored = rows_to_matrix(rl);
                            double inv = 1.0 / static_cast<double>(stored.numel());
                            Var mse_term = tp.scale(tp.sum_sq(rtr.logits - tp.constant(stored)), inv);
                            loss = loss + tp.scale(mse_term, cfg.derpp_alpha) +
                                   tp.scale(tp.softmax_xent(rlogits, ry), cfg.derpp_beta);
                        }
                    }
                }

                // LwF distillation on current inputs against the frozen model
                if (method == Method::lwf && t > 0) {
                    auto old_fwd = frozen.forward_with_trajectory(xb);
                    double temp = cfg.lwf_temperature;
                    Tensor old_masked = add(old_fwd.logits,
                                            matmul_eager(Tensor::full({xb.rows(), 1}, 1.0),
                                                         Tensor({1, seq.total_classes}, old_mask.data)));
                    Var new_masked = tp.add_rowvec(tr.logits, tp.constant(old_mask));
                    Var lp_new = tp.log_softmax(tp.scale(new_masked, 1.0 / temp));
                    Tensor p_old = Tensor::zeros(old_masked.shape);
                    for (std::int64_t r = 0; r < old_masked.rows(); ++r) {
                        double mx = old_masked.at(r, 0);
                        for (std::int64_t c = 1; c < old_masked.cols(); ++c)
                            mx = std::max(mx, old_masked.at(r, c));
                        double z = 0.0;
                        for (std::int64_t c = 0; c < old_masked.cols(); ++c)
                            z += std::exp((old_masked.at(r, c) - mx) / temp);
                        for (std::int64_t c = 0; c < old_masked.cols(); ++c)
                            p_old.at(r, c) = std::exp((old_masked.at(r, c) - mx) / temp) / z;
                    }
                    // cross-entropy part of KL(p_old || p_new); the entropy of
                    // p_old is constant for the gradient
                    Var ce = tp.scale(tp.sum(tp.constant(p_old) * lp_new),
                                      -temp * temp / static_cast<double>(xb.rows()));
                    loss = loss + tp.scale(ce, cfg.lwf_weight);
                }

                // EWC quadratic penalty around each stored snapshot
                if (method == Method::ewc && !ewc_terms.empty()) {
                    auto ctx = model.ctx(tp);
                    Var penalty = tp.constant(Tensor::scalar(0.0));
                    for (const auto& term : ewc_terms) {
                        for (const auto& name : model.layout().names()) {
                            std::int64_t off = model.layout().offset(name);
                            const Shape& shape = model.layout().shape(name);
                            std::int64_t len = shape_numel(shape);
                            Tensor fisher_slice(shape, std::vector<double>(
                                                           term.fisher.data.begin() + off,
                                                           term.fisher.data.begin() + off + len));
                            Tensor ref_slice(shape, std::vector<double>(term.ref.begin() + off,
                                                                        term.ref.begin() + off + len));
                            Var diff = ctx.p(name) - tp.constant(ref_slice);
                            penalty = penalty + tp.sum(tp.constant(fisher_slice) * diff * diff);
                        }
                    }
                    loss = loss + tp.scale(penalty, 0.5 * cfg.ewc_lambda);
                }

                // field preservation against the pre-task snapshot
                if (uses_fpr && t > 0 && fpr_anchors.numel() > 0) {
                    std::int64_t take_n = std::min<std::int64_t>(fpr_anchors.rows(), cfg.batch);
                    Tensor ab = Tensor::zeros({take_n, D});
                    for (std::int64_t r = 0; r < take_n; ++r) {
                        std::int64_t s = task_rng.uniform_int(fpr_anchors.rows());
                        for (std::int64_t c = 0; c < D; ++c) ab.at(r, c) = fpr_anchors.at(s, c);
                    }
                    Rng probe_rng = task_rng.split("fpr-probes");
                    Var fpr = fieldlosses::loss_fpr(tp, frozen, model, ab, fpr_h, fpr_j,
                                                    cfg.fpr_probes, probe_rng, 1e-8, layer_lo, layer_hi);
                    loss = loss + tp.scale(fpr, cfg.fpr_lambda);
                }

                tp.backward(loss);
                Tensor g = tp.flat_grad(model.n_params());
                opt.step(model.theta(), g);

                // reservoir updates with the current model's logits
                if (needs_buffer(method)) {
                    auto fwd = model.forward_with_trajectory(xb);
                    for (std::size_t r = 0; r < take.size(); ++r) {
                        buffers[static_cast<std::size_t>(t)].offer(
                            xb.row_at(static_cast<std::int64_t>(r)), yb[r],
                            fwd.logits.row_at(static_cast<std::int64_t>(r)), cfg.buffer_budget,
                            task_rng);
                    }
                }
            }
        }

        // EWC statistics at task end
        if (method == Method::ewc) {
            EwcTerm term;
            term.fisher = diagonal_fisher(model, task.train_x, task.train_y, train_mask);
            term.ref = model.theta();
            ewc_terms.push_back(std::move(term));
        }

        out.snapshots.push_back(model);
        // metric anchors: a fixed, seed-stable subset of the task train set
        std::int64_t na = std::min<std::int64_t>(cfg.metric_anchors, task.train_x.rows());
        Tensor anchors = Tensor::zeros({na, D});
        for (std::int64_t r = 0; r < na; ++r)
            for (std::int64_t c = 0; c < D; ++c) anchors.at(r, c) = task.train_x.at(r, c);
        out.anchors.push_back(anchors);

        // evaluate all seen tasks
        std::vector<double> row;
        for (std::int64_t j = 0; j <= t; ++j)
            row.push_back(masked_accuracy(model, seq.tasks[static_cast<std::size_t>(j)].test_x,
                                          seq.tasks[static_cast<std::size_t>(j)].test_y, seen_classes));
        out.result.acc.r.push_back(row);

        // running retention against each earlier snapshot
        for (std::int64_t j = 0; j < t; ++j) {
            const FieldModel& snap = out.snapshots[static_cast<std::size_t>(j)];
            frs_running.push_back(fieldmetrics::frs(snap, model, out.anchors[static_cast<std::size_t>(j)]));
            Rng jr = Rng(cfg.seed).split("jrs" + std::to_string(j) + "_" + std::to_string(t));
            jrs_running.push_back(fieldmetrics::jrs(snap, model, out.anchors[static_cast<std::size_t>(j)],
                                                    cfg.jrs_probes, jr));
        }
    }

    out.result.frs_running = mean_retention(frs_running);
    out.result.jrs_running = mean_retention(jrs_running);

    std::vector<double> frs_fin, jrs_fin;
    for (std::int64_t j = 0; j + 1 < T; ++j) {
        const FieldModel& snap = out.snapshots[static_cast<std::size_t>(j)];
        frs_fin.push_back(
            fieldmetrics::frs(snap, out.snapshots.back(), out.anchors[static_cast<std::size_t>(j)]));
        Rng jr = Rng(cfg.seed).split("jrs-final" + std::to_string(j));
        jrs_fin.push_back(fieldmetrics::jrs(snap, out.snapshots.back(),
                                            out.anchors[static_cast<std::size_t>(j)], cfg.jrs_probes, jr));
    }
    out.result.frs_final = mean_retention(frs_fin);
    out.result.jrs_final = mean_retention(jrs_fin);

    out.result.metrics = metrics_aa_bwt_fwt(out.result.acc, 1.0 / static_cast<double>(seq.total_classes));
    return out;
}

// ---------------------------------------------------------------------------

DriftDiagnostics drift_diagnostics(const RunArtifacts& artifacts, const ContinualConfig& cfg) {
    const auto& snaps = artifacts.snapshots;
    std::int64_t T = static_cast<std::int64_t>(snaps.size());
    if (T < 2) throw std::invalid_argument("drift_diagnostics: needs at least two snapshots");

    DriftDiagnostics out;
    std::vector<double> traj, jac, par, drop;
    for (std::int64_t j = 0; j < T; ++j) {
        for (std::int64_t t = j + 1; t < T; ++t) {
            DriftRecord rec;
            rec.old_task = j;
            rec.after_task = t;
            const FieldModel& a = snaps[static_cast<std::size_t>(j)];
            const FieldModel& b = snaps[static_cast<std::size_t>(t)];
            double p = 0.0;
            for (std::size_t i = 0; i < a.theta().size(); ++i) {
                double d = a.theta()[i] - b.theta()[i];
                p += d * d;
            }
            rec.param_drift = std::sqrt(p);
            rec.traj_drift = fieldmetrics::frs(a, b, artifacts.anchors[static_cast<std::size_t>(j)]);
            Rng jr = Rng(cfg.seed).split("drift" + std::to_string(j) + "_" + std::to_string(t));
            rec.jac_drift = fieldmetrics::jrs(a, b, artifacts.anchors[static_cast<std::size_t>(j)],
                                              cfg.jrs_probes, jr);
            rec.acc_drop = artifacts.result.acc.r[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)] -
                           artifacts.result.acc.r[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
            out.records.push_back(rec);
            traj.push_back(rec.traj_drift);
            jac.push_back(rec.jac_drift);
            par.push_back(rec.param_drift);
            drop.push_back(rec.acc_drop);
        }
    }
    // degenerate runs (identical snapshots, zero drops) have no correlation
    auto safe_corr = [](const std::vector<double>& a, const std::vector<double>& b) {
        try {
            return fieldmetrics::correlations(a, b);
        } catch (const std::invalid_argument&) {
            return fieldmetrics::Correlations{0.0, 1.0, 0.0, 1.0};
        }
    };
    out.traj_vs_drop = safe_corr(traj, drop);
    out.jac_vs_drop = safe_corr(jac, drop);
    out.param_vs_drop = safe_corr(par, drop);
    return out;
}

std::string DriftDiagnostics::records_csv() const {
    std::ostringstream out;
    out << "old_task,after_task,param_drift,traj_drift,jac_drift,acc_drop\n";
    for (const auto& r : records)
        out << r.old_task << "," << r.after_task << "," << r.param_drift << "," << r.traj_drift << ","
            << r.jac_drift << "," << r.acc_drop << "\n";
    return out.str();
}

std::string DriftDiagnostics::correlations_json() const {
    nlohmann::json j;
    auto fill = [](const fieldmetrics::Correlations& c) {
        return nlohmann::json{{"pearson_r", c.pearson_r},
                              {"pearson_p", c.pearson_p},
                              {"spearman_rho", c.spearman_rho},
                              {"spearman_p", c.spearman_p}};
    };
    j["trajectory_drift_vs_drop"] = fill(traj_vs_drop);
    j["jacobian_drift_vs_drop"] = fill(jac_vs_drop);
    j["parameter_drift_vs_drop"] = fill(param_vs_drop);
    return j.dump(2);
}

HybridDelta hybrid_delta(const MethodResult& base, const MethodResult& hybrid) {
    HybridDelta d;
    d.d_aa = hybrid.metrics.aa - base.metrics.aa;
    d.d_bwt = hybrid.metrics.bwt.value_or(0.0) - base.metrics.bwt.value_or(0.0);
    d.d_frs = hybrid.frs_final - base.frs_final;
    d.d_jrs = hybrid.jrs_final - base.jrs_final;
    return d;
}

}  // namespace fieldlab::continual
