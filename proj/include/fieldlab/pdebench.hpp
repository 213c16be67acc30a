#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fieldlab/netzoo.hpp"
#include "fieldlab/rng.hpp"
#include "fieldlab/tape.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::pdebench {

enum class PdeFamily { A, B, C };  // linear adv-diff | nonlinear ADR | non-autonomous
const char* family_name(PdeFamily f);
PdeFamily pde_family_from_string(const std::string& s);

struct PdeSpec {
    PdeFamily family = PdeFamily::A;
    std::int64_t grid = 64;
    double length = 6.283185307179586476925286766559;  // periodic domain
    double advection = 1.0;     // c0
    double diffusivity = 0.05;  // nu0
    double reaction = 1.0;      // r (family B)
    double train_horizon = 1.0;
    double max_horizon = 2.0;
    double reference_dt = 0.0025;
    double store_dt = 0.05;

    double dx() const { return length / static_cast<double>(grid); }
    double grid_x(std::int64_t i) const { return dx() * static_cast<double>(i); }
    /// CFL check for the reference solver (speed bound 2.0 for family B).
    void validate() const;
};

/// Method-of-lines right-hand side on the periodic grid: upwind advection,
/// central diffusion, family-specific reaction/coefficients. Batched rows.
Tensor reference_rhs(const Tensor& u, double t, const PdeSpec& spec);

/// Reference integration (RK4 at reference_dt) from t0 to t1.
Tensor reference_integrate(const Tensor& u0, double t0, double t1, const PdeSpec& spec);

struct PdeDataset {
    PdeSpec spec;
    Tensor u0;                        // [S x N]
    std::vector<double> store_times;  // multiples of store_dt including 0 and max_horizon
    std::vector<Tensor> states;       // one [S x N] per store time

    std::int64_t size() const { return u0.rows(); }
    const Tensor& at_time(double t) const;
};

/// Initial fields: random 3-mode Fourier sums plus an optional localized
/// packet; trajectories by RK4 method of lines at the reference step.
PdeDataset generate_pde_dataset(const PdeSpec& spec, std::int64_t count, Rng& rng);

enum class ModelClass { M1, M2, M3, M4 };
const char* model_name(ModelClass m);
ModelClass model_from_string(const std::string& s);

struct PdeTrainConfig {
    std::int64_t hidden = 32;  // dense width for M1/M2, stencil hidden for M3
    double model_dt = 0.05;    // M3/M4 integration step
    double lr = 2e-3;
    std::int64_t epochs = 40;
    std::int64_t batch = 16;
    double grad_clip = 10.0;
    std::vector<double> train_horizons{0.25, 0.5, 0.75, 1.0};
    std::uint64_t seed = 0;
};

/// The four model classes: direct endpoint map, time-conditioned map, learned
/// stencil generator integrated by RK4, and the structured form
/// s(u) (.) upwind + b (.) D2 u + reaction polynomial with learned profiles.
class PdeModel {
  public:
    PdeModel() = default;
    static PdeModel create(ModelClass cls, const PdeSpec& spec, const PdeTrainConfig& cfg, Rng& init);

    ModelClass cls() const { return cls_; }
    const netzoo::ParamLayout& layout() const { return layout_; }
    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }
    std::int64_t n_params() const { return layout_.total(); }
    double model_dt() const { return model_dt_; }

    /// Terminal-state prediction at horizon T. M1 ignores T (fixed map).
    Tensor predict(const Tensor& u0, double horizon) const;
    /// Prediction under a halved integration step (generator classes only).
    Tensor predict_refined(const Tensor& u0, double horizon) const;
    /// Generator rollout at every model step up to the horizon.
    std::vector<Tensor> rollout(const Tensor& u0, double horizon) const;

    Tensor rhs_value(const Tensor& u, double t) const;
    ad::Var rhs_on_tape(netzoo::TapeCtx& ctx, ad::Var u, double t) const;
    ad::Var map_on_tape(netzoo::TapeCtx& ctx, ad::Var input) const;  // M1/M2 dense map
    netzoo::TapeCtx ctx(ad::Tape& tp) const { return netzoo::TapeCtx{tp, theta_, layout_, {}}; }

    /// Sets the structured model's coefficients to a family's ground truth.
    void set_structured_truth(const PdeSpec& spec);

    bool is_generator() const { return cls_ == ModelClass::M3 || cls_ == ModelClass::M4; }

  private:
    ModelClass cls_ = ModelClass::M1;
    std::int64_t grid_ = 0;
    double dx_ = 0.0;
    double model_dt_ = 0.05;
    std::int64_t hidden_ = 32;
    netzoo::ParamLayout layout_;
    std::vector<double> theta_;
};

struct TrainTargets {
    std::vector<double> horizons;
    std::vector<Tensor> targets;  // one [S x N] per horizon
};

TrainTargets targets_from_dataset(const PdeDataset& data, const std::vector<double>& horizons);

PdeModel train_pde_model(ModelClass cls, const PdeSpec& spec, const Tensor& u0,
                         const TrainTargets& targets, const PdeTrainConfig& cfg);

struct PdeEvalResult {
    std::map<double, double> endpoint_mse;  // per eval horizon
    std::optional<double> semigroup_err;
    std::optional<double> regrid_err;
    std::optional<double> energy_corr;
    std::optional<double> perturb_mse;

    double at(double horizon) const { return endpoint_mse.at(horizon); }
};

PdeEvalResult evaluate_pde(const PdeModel& model, const PdeSpec& spec, const PdeDataset& test,
                           const std::vector<double>& horizons, Rng& rng);

struct NegativeControlResult {
    double mse_normal = 0.0;
    double mse_nc1 = 0.0;  // random-pair targets
    double mse_nc2 = 0.0;  // per-sample shuffled time order
    double regrid_normal = 0.0;
    double regrid_nc1 = 0.0;
    double regrid_nc2 = 0.0;
};

/// Retrains the generator on corrupted targets and reports clean-test errors.
NegativeControlResult negative_controls(const PdeSpec& spec, const PdeDataset& train,
                                        const PdeDataset& test, const PdeTrainConfig& cfg, Rng& rng);

}  // namespace fieldlab::pdebench
