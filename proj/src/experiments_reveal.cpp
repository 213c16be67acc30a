#include <algorithm>
#include <numeric>
#include <set>

#include "fieldlab/experiments.hpp"
#include "fieldlab/fieldlosses.hpp"
#include "fieldlab/fieldmetrics.hpp"
#include "fieldlab/manifoldgen.hpp"
#include "fieldlab/netzoo.hpp"
#include "fieldlab/trainlab.hpp"

namespace fieldlab::cli {

namespace {

using manifoldgen::Dataset;
using manifoldgen::RevealPath;
using netzoo::RevealFlowModel;

Tensor gather_rows(const Tensor& src, const std::vector<std::int64_t>& idx) {
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(idx.size()), src.cols()});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t c = 0; c < src.cols(); ++c)
            out.at(static_cast<std::int64_t>(r), c) = src.at(idx[r], c);
    return out;
}

double path_accuracy(const RevealFlowModel& m, const Dataset& data, const RevealPath& path) {
    auto fwd = m.forward_schedule(manifoldgen::reveal_schedule(data.x, path));
    return netzoo::accuracy(fwd.logits, data.labels);
}

}  // namespace

nlohmann::json run_reveal_experiment(const Config& cfg, const std::filesystem::path& out_dir) {
    auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));

    manifoldgen::ManifoldSpec spec = manifoldgen::ManifoldSpec::preset(
        manifoldgen::difficulty_from_string(cfg.get_str("reveal.difficulty", "hard")),
        cfg.get_int("reveal.classes", 4), cfg.get_int("reveal.ambient_dim", 16),
        cfg.get_int("reveal.intrinsic_dim", 2), cfg.get_int("reveal.samples_per_class", 130));
    std::int64_t train_per_class = cfg.get_int("reveal.train_per_class", 100);

    Rng data_rng = Rng(seed).split("reveal-data");
    Dataset all = manifoldgen::generate_manifold(spec, data_rng);
    auto [train, test] = manifoldgen::split_train_test(all, train_per_class);

    // reveal paths; the last kind is held out from training entirely
    std::vector<std::string> kind_names = cfg.get_str_list(
        "reveal.paths", {"center-out", "sequential", "random", "frequency"});
    std::int64_t blocks = cfg.get_int("reveal.blocks", 4);
    std::vector<manifoldgen::PathKind> kinds;
    for (const auto& k : kind_names) kinds.push_back(manifoldgen::path_kind_from_string(k));
    Tensor train_mean = Tensor::zeros({spec.ambient_dim});
    for (std::int64_t r = 0; r < train.size(); ++r)
        for (std::int64_t c = 0; c < spec.ambient_dim; ++c) train_mean.at(c) += train.x.at(r, c);
    train_mean = scale(train_mean, 1.0 / static_cast<double>(train.size()));
    Rng path_rng = Rng(seed).split("reveal-paths");
    std::vector<RevealPath> paths = manifoldgen::build_paths(spec.ambient_dim, kinds, blocks,
                                                             path_rng, &train_mean);
    write_text_file(out_dir / "paths.json", manifoldgen::paths_to_json(paths));
    if (paths.size() < 2) throw ConfigError("reveal experiment needs at least two paths");
    std::size_t unseen_id = paths.size() - 1;
    std::vector<std::size_t> train_path_ids;
    for (std::size_t i = 0; i + 1 < paths.size(); ++i) train_path_ids.push_back(i);

    netzoo::RevealModelConfig mc;
    mc.view_dim = 2 * spec.ambient_dim;
    mc.hidden_dim = cfg.get_int("reveal.hidden_dim", 24);
    mc.field_width = cfg.get_int("reveal.field_width", 32);
    mc.classes = spec.classes;
    mc.steps = blocks;
    Rng init_rng = Rng(seed).split("reveal-init");
    RevealFlowModel model = RevealFlowModel::create(mc, init_rng);

    std::string objective = cfg.get_str("reveal.objective", "task");
    double lambda_r = cfg.get_num("reveal.lambda_r", 0.5);
    double lambda_j = cfg.get_num("reveal.lambda_j", 0.1);
    if (objective == "task") {
        lambda_r = 0.0;
        lambda_j = 0.0;
    } else if (objective == "reveal") {
        lambda_j = 0.0;
    } else if (objective == "jac") {
        lambda_r = 0.0;
    } else if (objective != "full") {
        throw ConfigError("reveal.objective must be task|reveal|jac|full");
    }
    std::int64_t pair_draws = cfg.get_int("reveal.pairs_per_batch", 2);
    std::int64_t jac_probes = cfg.get_int("reveal.jac_probes", 1);

    std::int64_t epochs = cfg.get_int("reveal.epochs", 60);
    std::int64_t batch = cfg.get_int("reveal.batch", 32);
    double lr = cfg.get_num("reveal.lr", 3e-3);

    // collapse floor is relative to the representation variance at init
    double init_var;
    {
        auto fwd = model.forward_schedule(
            manifoldgen::reveal_schedule(train.x, paths[train_path_ids[0]]));
        init_var = fieldlosses::rep_variance(fwd.states.back());
    }
    fieldlosses::CollapseThresholds thresholds;
    thresholds.rep_variance_floor = cfg.get_num("reveal.collapse_floor_scale", 1e-4) * init_var;
    thresholds.class_share_cap = cfg.get_num("reveal.collapse_share_cap", 0.9);

    // training; the held-out path must never enter a batch
    trainlab::Adam opt(lr);
    Rng order_rng = Rng(seed).split("reveal-batches");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(train.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::set<std::size_t> paths_used;
    std::size_t batch_counter = 0;
    for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
        order_rng.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
            std::vector<std::int64_t> take(
                idx.begin() + static_cast<std::ptrdiff_t>(start),
                idx.begin() + static_cast<std::ptrdiff_t>(
                                  std::min(start + static_cast<std::size_t>(batch), idx.size())));
            Tensor xb = gather_rows(train.x, take);
            std::vector<std::int64_t> yb;
            for (auto i : take) yb.push_back(train.labels[static_cast<std::size_t>(i)]);

            std::size_t p = train_path_ids[batch_counter % train_path_ids.size()];
            paths_used.insert(p);
            ++batch_counter;

            ad::Tape tp;
            auto views = manifoldgen::reveal_schedule(xb, paths[p]);
            auto tr = model.trace_schedule(tp, views);
            ad::Var loss = fieldlosses::loss_task(tp, tr.logits, yb);
            if (lambda_r > 0.0) {
                for (std::int64_t d = 0; d < pair_draws; ++d) {
                    std::size_t a = train_path_ids[static_cast<std::size_t>(
                        order_rng.uniform_int(static_cast<std::int64_t>(train_path_ids.size())))];
                    std::size_t b = train_path_ids[static_cast<std::size_t>(
                        order_rng.uniform_int(static_cast<std::int64_t>(train_path_ids.size())))];
                    if (a == b) b = train_path_ids[(std::find(train_path_ids.begin(), train_path_ids.end(), b) -
                                                    train_path_ids.begin() + 1) %
                                                   train_path_ids.size()];
                    paths_used.insert(a);
                    paths_used.insert(b);
                    ad::Var lr_term =
                        fieldlosses::loss_reveal(tp, model, manifoldgen::reveal_schedule(xb, paths[a]),
                                                 manifoldgen::reveal_schedule(xb, paths[b]));
                    loss = loss + tp.scale(lr_term, lambda_r / static_cast<double>(pair_draws));
                }
            }
            if (lambda_j > 0.0) {
                Rng probe_rng = order_rng.split("jac" + std::to_string(batch_counter));
                loss = loss +
                       tp.scale(fieldlosses::loss_jac_reveal(tp, model, views, jac_probes, probe_rng),
                                lambda_j);
            }
            tp.backward(loss);
            opt.step(model.theta(), tp.flat_grad(model.n_params()));
        }
    }
    bool audit_ok = paths_used.count(unseen_id) == 0;

    // evaluation
    nlohmann::json out;
    double acc_avg = 0.0;
    nlohmann::json per_path;
    for (std::size_t p : train_path_ids) {
        double a = path_accuracy(model, test, paths[p]);
        per_path[paths[p].id] = a;
        acc_avg += a;
    }
    acc_avg /= static_cast<double>(train_path_ids.size());
    double unseen_acc = path_accuracy(model, test, paths[unseen_id]);

    // path sensitivity over all paths, hidden and logit level
    std::vector<std::vector<Tensor>> logit_outs(static_cast<std::size_t>(test.size()));
    std::vector<std::vector<Tensor>> hidden_outs(static_cast<std::size_t>(test.size()));
    Tensor first_h, first_logits;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        auto fwd = model.forward_schedule(manifoldgen::reveal_schedule(test.x, paths[p]));
        if (p == 0) {
            first_h = fwd.states.back();
            first_logits = fwd.logits;
        }
        for (std::int64_t r = 0; r < test.size(); ++r) {
            logit_outs[static_cast<std::size_t>(r)].push_back(fwd.logits.row_at(r));
            hidden_outs[static_cast<std::size_t>(r)].push_back(fwd.states.back().row_at(r));
        }
    }
    double path_sens_logit = fieldmetrics::path_sensitivity(logit_outs);
    double path_sens_hidden = fieldmetrics::path_sensitivity(hidden_outs);

    // calibration over the training paths' test logits
    std::vector<std::int64_t> ece_labels;
    std::vector<double> ece_data;
    for (std::size_t p : train_path_ids) {
        auto fwd = model.forward_schedule(manifoldgen::reveal_schedule(test.x, paths[p]));
        for (std::int64_t r = 0; r < test.size(); ++r) {
            for (std::int64_t c = 0; c < fwd.logits.cols(); ++c) ece_data.push_back(fwd.logits.at(r, c));
            ece_labels.push_back(test.labels[static_cast<std::size_t>(r)]);
        }
    }
    Tensor ece_logits({static_cast<std::int64_t>(ece_labels.size()), spec.classes}, std::move(ece_data));
    double ece = fieldmetrics::calibration_ece(ece_logits, ece_labels);

    // distribution shift at full observation
    manifoldgen::OodSpec ood;
    ood.kind = manifoldgen::shift_from_string(cfg.get_str("reveal.ood_kind", "noise"));
    ood.magnitude = cfg.get_num("reveal.ood_magnitude", 0.3);
    Rng ood_rng = Rng(seed).split("reveal-ood");
    Dataset ood_test = manifoldgen::apply_ood(test, ood, ood_rng);
    double ood_acc = 0.0;
    for (std::size_t p : train_path_ids) ood_acc += path_accuracy(model, ood_test, paths[p]);
    ood_acc /= static_cast<double>(train_path_ids.size());

    auto flags = fieldlosses::collapse_check(first_h, first_logits, thresholds);

    out["objective"] = objective;
    out["acc_avg"] = acc_avg;
    out["acc_per_path"] = per_path;
    out["unseen_acc"] = unseen_acc;
    out["unseen_path"] = paths[unseen_id].id;
    out["unseen_path_excluded_from_training"] = audit_ok;
    out["ood_acc"] = ood_acc;
    out["path_sens_logit"] = path_sens_logit;
    out["path_sens_hidden"] = path_sens_hidden;
    out["ece"] = ece;
    out["collapse"] = {{"rep_variance", flags.rep_variance},
                       {"prediction_entropy", flags.prediction_entropy},
                       {"class_balance", flags.class_balance},
                       {"collapsed", flags.collapsed},
                       {"rep_variance_floor", thresholds.rep_variance_floor}};
    return out;
}

}  // namespace fieldlab::cli
