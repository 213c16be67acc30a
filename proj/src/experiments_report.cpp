#include <numeric>

#include "fieldlab/experiments.hpp"
#include "fieldlab/fieldlosses.hpp"
#include "fieldlab/fieldmetrics.hpp"
#include "fieldlab/manifoldgen.hpp"
#include "fieldlab/netzoo.hpp"
#include "fieldlab/trainlab.hpp"

namespace fieldlab::cli {

/// Trains a model family briefly on manifold data and emits its propagation
/// report: trajectory geometry, adjacent-layer spectra, and a checkpoint.
nlohmann::json run_metrics_report_experiment(const Config& cfg, const std::filesystem::path& out_dir) {
    auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));

    manifoldgen::ManifoldSpec spec = manifoldgen::ManifoldSpec::preset(
        manifoldgen::difficulty_from_string(cfg.get_str("metrics.difficulty", "medium")),
        cfg.get_int("metrics.classes", 4), cfg.get_int("metrics.ambient_dim", 16),
        cfg.get_int("metrics.intrinsic_dim", 2), cfg.get_int("metrics.samples_per_class", 80));
    Rng data_rng = Rng(seed).split("metrics-data");
    manifoldgen::Dataset all = manifoldgen::generate_manifold(spec, data_rng);
    auto [train, test] = manifoldgen::split_train_test(all, cfg.get_int("metrics.train_per_class", 60));

    netzoo::ModelConfig mc;
    mc.family = netzoo::family_from_string(cfg.get_str("metrics.family", "sharedfield"));
    mc.input_dim = spec.ambient_dim;
    mc.hidden_dim = cfg.get_int("metrics.hidden_dim", 24);
    mc.depth = cfg.get_int("metrics.depth", 6);
    mc.classes = spec.classes;
    mc.solver.steps = cfg.get_int("metrics.solver_steps", 8);
    mc.solver.method = odesolve::method_from_string(cfg.get_str("metrics.solver_method", "rk4"));
    Rng init_rng = Rng(seed).split("metrics-init");
    netzoo::FieldModel model = netzoo::FieldModel::create(mc, init_rng);

    std::int64_t epochs = cfg.get_int("metrics.epochs", 30);
    std::int64_t batch = cfg.get_int("metrics.batch", 32);
    trainlab::Adam opt(cfg.get_num("metrics.lr", 3e-3));
    Rng order = Rng(seed).split("metrics-batches");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(train.size()));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
        order.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
            std::vector<std::int64_t> take(
                idx.begin() + static_cast<std::ptrdiff_t>(start),
                idx.begin() + static_cast<std::ptrdiff_t>(
                                  std::min(start + static_cast<std::size_t>(batch), idx.size())));
            Tensor xb = Tensor::zeros({static_cast<std::int64_t>(take.size()), spec.ambient_dim});
            std::vector<std::int64_t> yb;
            for (std::size_t r = 0; r < take.size(); ++r) {
                for (std::int64_t c = 0; c < spec.ambient_dim; ++c)
                    xb.at(static_cast<std::int64_t>(r), c) = train.x.at(take[r], c);
                yb.push_back(train.labels[static_cast<std::size_t>(take[r])]);
            }
            ad::Tape tp;
            auto tr = model.trace(tp, xb);
            tp.backward(fieldlosses::loss_task(tp, tr.logits, yb));
            opt.step(model.theta(), tp.flat_grad(model.n_params()));
        }
    }

    Rng probe_rng = Rng(seed).split("metrics-probes");
    auto report = fieldmetrics::report_for(model, test.x, cfg.get_int("metrics.spectrum_k", 4),
                                           probe_rng);
    write_text_file(out_dir / "field_report.json", report.to_json() + "\n");
    write_text_file(out_dir / "checkpoint.json", model.to_checkpoint_json() + "\n");

    auto fwd = model.forward_with_trajectory(test.x);
    nlohmann::json out = nlohmann::json::parse(report.to_json());
    out["test_accuracy"] = netzoo::accuracy(fwd.logits, test.labels);
    out["family"] = netzoo::family_name(mc.family);
    return out;
}

}  // namespace fieldlab::cli
