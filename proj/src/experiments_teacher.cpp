#include <cmath>
#include <sstream>

#include "fieldlab/experiments.hpp"
#include "fieldlab/teacherflow.hpp"
#include "fieldlab/trainlab.hpp"

namespace fieldlab::cli {

namespace {

using teacherflow::LatentFlowModel;
using teacherflow::TeacherDataset;
using teacherflow::TeacherSpec;

struct TeacherSetup {
    TeacherDataset train;
    TeacherDataset test;
    TeacherDataset eval_subset;  // small slice for the per-epoch history
    teacherflow::FlowModelConfig model_cfg;
    trainlab::TrainConfig train_cfg;
    std::uint64_t seed = 0;
};

TeacherSetup teacher_setup(const Config& cfg, const std::string& section) {
    TeacherSetup s;
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));

    TeacherSpec spec;
    spec.latent_dim = cfg.get_int(section + ".latent_dim", 2);
    spec.omega = cfg.get_num(section + ".omega", 1.0);
    spec.contraction = cfg.get_num(section + ".contraction", 0.3);
    spec.gain = cfg.get_num(section + ".gain", 0.5);
    spec.horizon = cfg.get_num(section + ".horizon", 1.0);
    spec.sample_times = cfg.get_int(section + ".sample_times", 10);
    spec.obs_dim = cfg.get_int(section + ".obs_dim", 16);
    spec.obs_seed = static_cast<std::uint64_t>(cfg.get_int(section + ".obs_seed", 0));
    spec.fine_substeps = cfg.get_int(section + ".fine_substeps", 100);

    std::int64_t n_train = cfg.get_int(section + ".samples", 1000);
    std::int64_t n_test = cfg.get_int(section + ".test_samples", 300);
    teacherflow::TaskKind task = teacherflow::task_from_string(cfg.get_str(section + ".task", "A"));
    double lambda = cfg.get_num(section + ".lambda", 0.0);

    Rng data_rng = Rng(s.seed).split("teacher-data");
    TeacherDataset all = teacherflow::generate_dataset(spec, n_train + n_test, task, lambda, data_rng);
    auto split = teacherflow::split_rows(all, n_train);
    s.train = std::move(split.first);
    s.test = std::move(split.second);
    std::int64_t eval_rows = std::min<std::int64_t>(100, s.test.size() - 1);
    s.eval_subset = eval_rows >= 1 ? teacherflow::split_rows(s.test, eval_rows).first : s.test;

    s.model_cfg.obs_dim = spec.obs_dim;
    s.model_cfg.latent_dim = spec.latent_dim;
    s.model_cfg.field_width = cfg.get_int(section + ".field_width", 32);
    s.model_cfg.classes = 2;
    s.model_cfg.solver.method =
        odesolve::method_from_string(cfg.get_str(section + ".solver_method", "rk4"));
    s.model_cfg.solver.steps = cfg.get_int(section + ".solver_steps", spec.sample_times);
    s.model_cfg.solver.t0 = 0.0;
    s.model_cfg.solver.t1 = spec.horizon;

    s.train_cfg.optimizer = trainlab::optimizer_from_string(cfg.get_str(section + ".optimizer", "adam"));
    s.train_cfg.lr = cfg.get_num(section + ".lr", 3e-3);
    s.train_cfg.epochs = cfg.get_int(section + ".epochs", 160);
    s.train_cfg.batch = cfg.get_int(section + ".batch", 100);
    s.train_cfg.alpha = cfg.get_num(section + ".alpha", 1.0);
    s.train_cfg.beta = cfg.get_num(section + ".beta", 1.0);
    s.train_cfg.gamma = cfg.get_num(section + ".gamma", 0.05);
    s.train_cfg.shooting_segments = cfg.get_int(section + ".shooting_segments", 4);
    s.train_cfg.log_conflict = cfg.get_bool(section + ".log_conflict", section == "pareto");
    s.train_cfg.lr_decay = cfg.get_num(section + ".lr_decay", 1.0);
    s.train_cfg.seed = s.seed;
    return s;
}

nlohmann::json metrics_json(const teacherflow::RecoveryMetrics& m) {
    return {{"accuracy", m.accuracy},
            {"traj_rmse", m.traj_rmse},
            {"deriv_rmse", m.deriv_rmse},
            {"reparam_consistency", m.reparam_consistency}};
}

}  // namespace

nlohmann::json run_teacherflow_experiment(const Config& cfg, const std::filesystem::path& out_dir) {
    TeacherSetup s = teacher_setup(cfg, "teacherflow");
    bool export_dataset = cfg.get_bool("teacherflow.export_dataset", false);
    if (export_dataset)
        write_text_file(out_dir / "teacher_train.jsonl", teacherflow::dataset_to_jsonl(s.train));

    // the controlled comparison: one architecture and init, two objectives
    Rng init_rng = Rng(s.seed).split("model-init");
    LatentFlowModel endpoint_model = LatentFlowModel::create(s.model_cfg, init_rng);
    LatentFlowModel field_model = endpoint_model;

    trainlab::TrainConfig endpoint_cfg = s.train_cfg;
    endpoint_cfg.alpha = 0.0;
    endpoint_cfg.beta = 0.0;
    endpoint_cfg.gamma = 0.0;
    trainlab::train(endpoint_model, s.train, s.eval_subset, endpoint_cfg);
    trainlab::train(field_model, s.train, s.eval_subset, s.train_cfg);

    auto endpoint_metrics = teacherflow::evaluate_field_recovery(endpoint_model, s.test);
    auto field_metrics = teacherflow::evaluate_field_recovery(field_model, s.test);

    nlohmann::json out;
    out["endpoint"] = metrics_json(endpoint_metrics);
    out["field"] = metrics_json(field_metrics);
    out["acc"] = field_metrics.accuracy;  // headline task metric of the run
    out["traj_rmse"] = field_metrics.traj_rmse;
    out["traj_rmse_ratio"] = endpoint_metrics.traj_rmse / std::max(field_metrics.traj_rmse, 1e-300);
    out["deriv_rmse_ratio"] = endpoint_metrics.deriv_rmse / std::max(field_metrics.deriv_rmse, 1e-300);
    out["accuracy_gap"] = std::abs(endpoint_metrics.accuracy - field_metrics.accuracy);
    return out;
}

nlohmann::json run_pareto_experiment(const Config& cfg, const std::filesystem::path& out_dir) {
    TeacherSetup s = teacher_setup(cfg, "pareto");
    std::vector<std::string> algorithms = cfg.get_str_list(
        "pareto.algorithms", {"fullbptt", "segment_shooting", "local_field_match", "pcgrad", "mgda",
                              "curriculum", "alternating", "projected_task"});

    std::ostringstream csv;
    csv << "algorithm,test_acc,traj_rmse,deriv_rmse,cos_mean,cos_min,neg_frac,seconds\n";
    nlohmann::json out;
    Rng init_rng = Rng(s.seed).split("model-init");
    LatentFlowModel init_model = LatentFlowModel::create(s.model_cfg, init_rng);
    for (const auto& name : algorithms) {
        trainlab::TrainConfig tc = s.train_cfg;
        tc.algorithm = trainlab::algorithm_from_string(name);
        LatentFlowModel model = init_model;
        auto result = trainlab::train(model, s.train, s.eval_subset, tc);
        auto metrics = teacherflow::evaluate_field_recovery(model, s.test);
        csv << name << "," << metrics.accuracy << "," << metrics.traj_rmse << ","
            << metrics.deriv_rmse << "," << result.conflict.mean << "," << result.conflict.min << ","
            << result.conflict.negative_fraction << "," << result.seconds << "\n";
        out[name] = {{"test_acc", metrics.accuracy},
                     {"traj_rmse", metrics.traj_rmse},
                     {"deriv_rmse", metrics.deriv_rmse},
                     {"reparam", metrics.reparam_consistency},
                     {"cos_mean", result.conflict.mean},
                     {"cos_min", result.conflict.min},
                     {"neg_frac", result.conflict.negative_fraction}};
    }
    write_text_file(out_dir / "pareto.csv", csv.str());
    return out;
}

}  // namespace fieldlab::cli
