#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fieldlab/netzoo.hpp"
#include "fieldlab/odesolve.hpp"
#include "fieldlab/rng.hpp"
#include "fieldlab/tape.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::teacherflow {

struct TeacherSpec {
    std::int64_t latent_dim = 2;   // n
    double omega = 1.0;            // angular rate
    double contraction = 0.3;      // a
    double gain = 0.5;             // nonlinearity gain g
    double horizon = 1.0;          // T
    std::int64_t sample_times = 10;  // K; samples at t_k = k T / K, k = 0..K
    std::int64_t obs_dim = 16;     // D
    std::uint64_t obs_seed = 0;
    std::int64_t fine_substeps = 100;  // RK4 sub-steps per sample interval

    void validate() const;
};

enum class TaskKind { A, B };
const char* task_name(TaskKind t);
TaskKind task_from_string(const std::string& s);

/// f*(z) = omega R_perp z - a z + g tanh(z), with R_perp the 90-degree
/// rotation in each consecutive coordinate pair.
Tensor teacher_field(const Tensor& z, double t, const TeacherSpec& spec);

/// Batched teacher data: states and derivatives are stored as K+1 matrices of
/// shape [N x n]; observations x = tanh(z0 . lift) with a seeded lift that is
/// verified (at generation) to be invertible by least squares on the batch.
struct TeacherDataset {
    TeacherSpec spec;
    TaskKind task = TaskKind::A;
    double lambda = 0.0;
    Tensor x;                    // [N x D]
    Tensor z0;                   // [N x n]
    std::vector<Tensor> traj;    // K+1 x [N x n]
    std::vector<Tensor> deriv;   // K+1 x [N x n]
    std::vector<double> winding; // per-sample mean angular velocity over [0, T]
    std::vector<std::int64_t> labels;
    Tensor lift;                 // [n x D]
    Tensor label_dir;            // [n]

    std::int64_t size() const { return x.rows(); }
    double sample_time(std::int64_t k) const {
        return spec.horizon * static_cast<double>(k) / static_cast<double>(spec.sample_times);
    }
};

/// Task A labels by the sign of a fixed linear functional of z(T); Task B
/// blends that with the path's mean angular velocity, weighted by lambda.
TeacherDataset generate_dataset(const TeacherSpec& spec, std::int64_t count, TaskKind task,
                                double lambda, Rng& rng);

/// Exact observation inverse on the data range: atanh then least squares.
Tensor invert_observation(const Tensor& x, const Tensor& lift);

std::string dataset_to_jsonl(const TeacherDataset& ds);
TeacherDataset dataset_from_jsonl(const std::string& text);

/// Row split sharing the observation map and label rule (train/test carving).
std::pair<TeacherDataset, TeacherDataset> split_rows(const TeacherDataset& ds, std::int64_t first);

// ---------------------------------------------------------------------------

struct FlowModelConfig {
    std::int64_t obs_dim = 16;
    std::int64_t latent_dim = 2;
    std::int64_t field_width = 32;
    std::int64_t classes = 2;
    odesolve::SolverSpec solver{odesolve::Method::rk4, 10, 0.0, 1.0};
};

/// Classifier that encodes the observation into the teacher's latent space,
/// integrates a learned field there, and reads logits off the terminal state.
class LatentFlowModel {
  public:
    LatentFlowModel() = default;
    static LatentFlowModel create(const FlowModelConfig& cfg, Rng& init_rng);

    const FlowModelConfig& config() const { return cfg_; }
    const netzoo::ParamLayout& layout() const { return layout_; }
    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }
    std::int64_t n_params() const { return layout_.total(); }

    struct Trace {
        std::vector<ad::Var> states;  // all solver steps, 0..steps
        ad::Var logits;
    };
    Trace trace(ad::Tape& tp, const Tensor& x) const { return trace(tp, x, cfg_.solver); }
    Trace trace(ad::Tape& tp, const Tensor& x, const odesolve::SolverSpec& spec) const;

    ad::Var field_on_tape(netzoo::TapeCtx& ctx, ad::Var z, double t) const;
    netzoo::TapeCtx ctx(ad::Tape& tp) const { return netzoo::TapeCtx{tp, theta_, layout_, {}}; }

    struct Forward {
        std::vector<Tensor> states;
        Tensor logits;
    };
    Forward forward(const Tensor& x) const { return forward(x, cfg_.solver); }
    Forward forward(const Tensor& x, const odesolve::SolverSpec& spec) const;

    Tensor encode(const Tensor& x) const;
    Tensor field_value(const Tensor& z, double t) const;
    Tensor head_value(const Tensor& z_final) const;

  private:
    FlowModelConfig cfg_;
    netzoo::ParamLayout layout_;
    std::vector<double> theta_;
};

struct RecoveryMetrics {
    double accuracy = 0.0;
    double traj_rmse = 0.0;
    double deriv_rmse = 0.0;
    double reparam_consistency = 0.0;
};

/// Trajectory RMSE at the teacher sample times, derivative RMSE at the
/// teacher states, terminal-state reparameterization gap, and task accuracy.
/// `encode_override`, when set, replaces the learned encoder (used by oracle
/// fixtures that know the exact observation inverse).
RecoveryMetrics evaluate_field_recovery(
    const LatentFlowModel& m, const TeacherDataset& ds,
    const std::function<Tensor(const Tensor&)>& encode_override = nullptr);

}  // namespace fieldlab::teacherflow
