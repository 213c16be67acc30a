#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fieldlab/rng.hpp"
#include "fieldlab/tape.hpp"
#include "fieldlab/teacherflow.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::trainlab {

enum class Optimizer { sgd, adam };
Optimizer optimizer_from_string(const std::string& s);

/// Flat-vector stochastic gradient descent.
class Sgd {
  public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(std::vector<double>& theta, const Tensor& grad);

  private:
    double lr_;
};

/// Flat-vector Adam with the usual (0.9, 0.999, 1e-8) defaults.
class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::vector<double>& theta, const Tensor& grad);
    void set_lr(double lr) { lr_ = lr; }
    void reset() { m_.clear(); v_.clear(); t_ = 0; }

  private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

// ---- gradient geometry ----

double cosine(const Tensor& a, const Tensor& b);

/// Conflict-aware sum: when the gradients disagree, each is projected off the
/// other's direction before summing.
Tensor pcgrad_combine(const Tensor& g_task, const Tensor& g_field);

/// Two-objective min-norm convex combination w g_task + (1-w) g_field with the
/// closed-form w clipped to [0, 1].
Tensor mgda_combine(const Tensor& g_task, const Tensor& g_field);

/// Task gradient with its field-harming component removed; the result never
/// has negative inner product with g_field.
Tensor projected_task_step(const Tensor& g_task, const Tensor& g_field);

// ---- teacher-flow training algorithms ----

enum class Algorithm {
    fullbptt,
    segment_shooting,
    local_field_match,
    pcgrad,
    mgda,
    curriculum,
    alternating,
    projected_task,
};
const char* algorithm_name(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct TrainConfig {
    Optimizer optimizer = Optimizer::adam;
    double lr = 1e-3;
    std::int64_t epochs = 100;
    std::int64_t batch = 100;
    Algorithm algorithm = Algorithm::fullbptt;
    // field supervision weights (teacher environment)
    double alpha = 1.0;   // trajectory
    double beta = 1.0;    // derivative
    double gamma = 0.1;   // solver consistency
    std::int64_t shooting_segments = 4;
    bool log_conflict = true;   // full-batch gradient cosine once per epoch
    double lr_decay = 1.0;      // lr multiplier over the final third of epochs
    std::uint64_t seed = 0;

    void validate() const;
};

struct ConflictLog {
    std::vector<double> cosines;  // one full-batch cosine per epoch
    double mean = 0.0;
    double min = 1.0;
    double negative_fraction = 0.0;

    void finalize();
};

struct EpochRecord {
    double task_loss = 0.0;
    double accuracy = 0.0;
    double traj_rmse = 0.0;
    double deriv_rmse = 0.0;
    double reparam = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    ConflictLog conflict;
    double seconds = 0.0;
};

/// Algorithm-dispatched training of a latent flow model in the teacher
/// environment. Losses: task cross-entropy plus the configured field terms;
/// the per-epoch conflict log records cos(g_task, g_field) on a full batch.
TrainResult train(teacherflow::LatentFlowModel& model, const teacherflow::TeacherDataset& train_data,
                  const teacherflow::TeacherDataset& eval_data, const TrainConfig& cfg);

/// Value of the segment-shooting penalty over a whole dataset. The first
/// segment launches from the model's encoding, later ones from the teacher
/// state at their left boundary; every segment is scored against the teacher
/// state at its right boundary.
double shooting_penalty_value(const teacherflow::LatentFlowModel& model,
                              const teacherflow::TeacherDataset& ds, std::int64_t segments,
                              double alpha);

}  // namespace fieldlab::trainlab
