#include "fieldlab/continual.hpp"
#include "fieldlab/experiments.hpp"

namespace fieldlab::cli {

namespace {

using namespace fieldlab::continual;

nlohmann::json result_json(const MethodResult& r) {
    nlohmann::json j;
    j["aa"] = r.metrics.aa;
    if (r.metrics.bwt) j["bwt"] = *r.metrics.bwt;
    if (r.metrics.fwt) j["fwt"] = *r.metrics.fwt;
    j["frs"] = r.frs_running;
    j["jrs"] = r.jrs_running;
    j["frs_final"] = r.frs_final;
    j["jrs_final"] = r.jrs_final;
    return j;
}

ContinualConfig config_from(const Config& cfg, std::uint64_t seed) {
    ContinualConfig c;
    c.tasks = cfg.get_int("continual.tasks", 10);
    c.classes_per_task = cfg.get_int("continual.classes_per_task", 2);
    c.ambient_dim = cfg.get_int("continual.ambient_dim", 16);
    c.intrinsic_dim = cfg.get_int("continual.intrinsic_dim", 3);
    c.difficulty = manifoldgen::difficulty_from_string(cfg.get_str("continual.difficulty", "hard"));
    c.train_per_class = cfg.get_int("continual.train_per_class", 100);
    c.test_per_class = cfg.get_int("continual.test_per_class", 30);
    c.hidden_dim = cfg.get_int("continual.hidden_dim", 32);
    c.depth = cfg.get_int("continual.depth", 6);
    c.lr = cfg.get_num("continual.lr", 3e-3);
    c.epochs_per_task = cfg.get_int("continual.epochs_per_task", 20);
    c.batch = cfg.get_int("continual.batch", 32);
    c.ewc_lambda = cfg.get_num("continual.ewc_lambda", 50.0);
    c.lwf_temperature = cfg.get_num("continual.lwf_temperature", 2.0);
    c.lwf_weight = cfg.get_num("continual.lwf_weight", 1.0);
    c.derpp_alpha = cfg.get_num("continual.derpp_alpha", 0.5);
    c.derpp_beta = cfg.get_num("continual.derpp_beta", 0.5);
    c.fpr_lambda = cfg.get_num("continual.fpr_lambda", 1.0);
    c.fpr_lambda_h = cfg.get_num("continual.fpr_lambda_h", 1.0);
    c.fpr_lambda_j = cfg.get_num("continual.fpr_lambda_j", 1.0);
    c.fpr_probes = cfg.get_int("continual.fpr_probes", 2);
    c.buffer_budget = cfg.get_int("continual.budget", 200);
    c.metric_anchors = cfg.get_int("continual.metric_anchors", 32);
    c.jrs_probes = cfg.get_int("continual.jrs_probes", 4);
    c.seed = seed;
    return c;
}

}  // namespace

nlohmann::json run_continual_experiment(const Config& cfg, const std::filesystem::path& out_dir) {
    auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    ContinualConfig base = config_from(cfg, seed);
    std::vector<std::string> methods = cfg.get_str_list(
        "continual.methods",
        {"finetune", "er", "derpp", "fpr_traj", "fpr_jac", "fpr_full", "derpp+fpr_full"});
    bool want_drift = cfg.get_bool("continual.drift_diagnostics", true);
    std::vector<double> budgets = cfg.get_num_list("continual.budget_sweep", {});

    Rng seq_rng(seed);
    TaskSequence seq = make_task_sequence(base, seq_rng);

    nlohmann::json out;
    nlohmann::json matrices;
    std::map<std::string, MethodResult> results;
    std::optional<RunArtifacts> finetune_artifacts;
    for (const auto& name : methods) {
        Method m = method_from_string(name);
        auto artifacts = run_method(m, seq, base);
        results[name] = artifacts.result;
        out["methods"][name] = result_json(artifacts.result);
        matrices[name] = nlohmann::json::parse(artifacts.result.acc.to_json());
        if (m == Method::finetune) finetune_artifacts = std::move(artifacts);
    }
    write_text_file(out_dir / "accuracy_matrix.json", matrices.dump(2) + "\n");

    // hybrid improvements relative to their base methods
    auto delta_if = [&](const char* base_name, const char* hybrid_name, const char* key) {
        if (results.count(base_name) && results.count(hybrid_name)) {
            HybridDelta d = hybrid_delta(results[base_name], results[hybrid_name]);
            out["hybrid_deltas"][key] = {{"d_aa", d.d_aa},
                                         {"d_bwt", d.d_bwt},
                                         {"d_frs", d.d_frs},
                                         {"d_jrs", d.d_jrs}};
        }
    };
    delta_if("derpp", "derpp+fpr_full", "derpp_plus_fpr_full");
    delta_if("er", "er+fpr_late", "er_plus_fpr_late");

    // pure forgetting diagnostics need the finetune run
    if (want_drift) {
        if (!finetune_artifacts.has_value()) {
            auto artifacts = run_method(Method::finetune, seq, base);
            finetune_artifacts = std::move(artifacts);
        }
        if (static_cast<std::int64_t>(finetune_artifacts->snapshots.size()) >= 2) {
            auto diag = drift_diagnostics(*finetune_artifacts, base);
            write_text_file(out_dir / "drift_records.csv", diag.records_csv());
            write_text_file(out_dir / "correlation_report.json", diag.correlations_json() + "\n");
            out["drift"] = nlohmann::json::parse(diag.correlations_json());
        }
    }

    // budget sweep over the replay/preservation methods
    if (!budgets.empty()) {
        std::vector<std::string> sweep_methods =
            cfg.get_str_list("continual.budget_methods", {"er", "derpp", "fpr_full"});
        nlohmann::json budget_json;
        for (double b : budgets) {
            ContinualConfig bc = base;
            bc.buffer_budget = static_cast<std::int64_t>(b);
            nlohmann::json row;
            for (const auto& name : sweep_methods) {
                auto artifacts = run_method(method_from_string(name), seq, bc);
                row[name] = result_json(artifacts.result);
            }
            budget_json[std::to_string(static_cast<std::int64_t>(b))] = row;
        }
        write_text_file(out_dir / "budget_results.json", budget_json.dump(2) + "\n");
        out["budget_sweep"] = budget_json;
    }
    return out;
}

}  // namespace fieldlab::cli
