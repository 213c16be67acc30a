#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fieldlab/fieldmetrics.hpp"
#include "fieldlab/manifoldgen.hpp"
#include "fieldlab/netzoo.hpp"
#include "fieldlab/rng.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::continual {

enum class Method {
    finetune,
    ewc,
    lwf,
    er,
    derpp,
    fpr_traj,
    fpr_jac,
    fpr_full,
    er_fpr_late,
    derpp_fpr_full,
};
const char* method_name(Method m);
Method method_from_string(const std::string& s);
bool needs_buffer(Method m);

struct ContinualConfig {
    std::int64_t tasks = 10;
    std::int64_t classes_per_task = 2;
    // data (hard-manifold analogue)
    std::int64_t ambient_dim = 16;
    std::int64_t intrinsic_dim = 3;
    manifoldgen::Difficulty difficulty = manifoldgen::Difficulty::hard;
    std::int64_t train_per_class = 100;
    std::int64_t test_per_class = 30;
    // model
    std::int64_t hidden_dim = 32;
    std::int64_t depth = 6;
    // optimization
    double lr = 3e-3;
    std::int64_t epochs_per_task = 20;
    std::int64_t batch = 32;
    // method knobs
    double ewc_lambda = 50.0;
    double lwf_temperature = 2.0;
    double lwf_weight = 1.0;
    double derpp_alpha = 0.5;  // logit MSE
    double derpp_beta = 0.5;   // replay CE
    double fpr_lambda = 1.0;
    double fpr_lambda_h = 1.0;
    double fpr_lambda_j = 1.0;
    std::int64_t fpr_probes = 2;
    std::int64_t buffer_budget = 200;  // per task: replay buffer and FPR anchors
    // retention metric evaluation
    std::int64_t metric_anchors = 32;
    std::int64_t jrs_probes = 4;
    std::uint64_t seed = 0;

    std::int64_t total_classes() const { return tasks * classes_per_task; }
    void validate(Method m) const;
};

struct TaskData {
    Tensor train_x;
    std::vector<std::int64_t> train_y;  // global class ids
    Tensor test_x;
    std::vector<std::int64_t> test_y;
    std::vector<std::int64_t> class_ids;
};

struct TaskSequence {
    std::vector<TaskData> tasks;
    std::int64_t total_classes = 0;
};

/// Disjoint class splits of one hard-manifold dataset; task order and class
/// assignment are fixed by the seed.
TaskSequence make_task_sequence(const ContinualConfig& cfg, Rng& rng);

struct AccuracyMatrix {
    std::int64_t tasks = 0;
    std::vector<std::vector<double>> r;  // r[t][j], j <= t
    std::vector<double> pre;             // accuracy on task j just before training it

    std::string to_json() const;
    static AccuracyMatrix from_json(const std::string& text);
};

struct CLMetrics {
    double aa = 0.0;
    std::optional<double> bwt;
    std::optional<double> fwt;
};

/// AA from the final row; BWT against the just-trained diagonal; FWT from the
/// stored pre-training accuracies against a random baseline.
CLMetrics metrics_aa_bwt_fwt(const AccuracyMatrix& m, double random_baseline);

struct MethodResult {
    Method method = Method::finetune;
    AccuracyMatrix acc;
    CLMetrics metrics;
    // field retention, both timings
    double frs_running = 0.0;
    double jrs_running = 0.0;
    double frs_final = 0.0;
    double jrs_final = 0.0;
};

struct RunArtifacts {
    MethodResult result;
    std::vector<netzoo::FieldModel> snapshots;  // model copy after each task
    std::vector<Tensor> anchors;                // per task, stored anchor inputs
};

RunArtifacts run_method(Method method, const TaskSequence& seq, const ContinualConfig& cfg);

struct DriftRecord {
    std::int64_t old_task = 0;
    std::int64_t after_task = 0;
    double param_drift = 0.0;
    double traj_drift = 0.0;  // FRS against the old task's snapshot
    double jac_drift = 0.0;   // JRS against the old task's snapshot
    double acc_drop = 0.0;    // R[old][old] - R[after][old]
};

struct DriftDiagnostics {
    std::vector<DriftRecord> records;
    fieldmetrics::Correlations traj_vs_drop;
    fieldmetrics::Correlations jac_vs_drop;
    fieldmetrics::Correlations param_vs_drop;

    std::string records_csv() const;
    std::string correlations_json() const;
};

/// Per (old task, later checkpoint) drift/drop records with correlations, the
/// pure forgetting diagnostic.
DriftDiagnostics drift_diagnostics(const RunArtifacts& artifacts, const ContinualConfig& cfg);

struct HybridDelta {
    double d_aa = 0.0;
    double d_bwt = 0.0;
    double d_frs = 0.0;
    double d_jrs = 0.0;
};

/// Signed hybrid-minus-base differences (final-model retention variants).
HybridDelta hybrid_delta(const MethodResult& base, const MethodResult& hybrid);

}  // namespace fieldlab::continual
