#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fieldlab/dual.hpp"
#include "fieldlab/odesolve.hpp"
#include "fieldlab/rng.hpp"
#include "fieldlab/tape.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::netzoo {

enum class Family { endpoint, timecond, sharedfield, continuous, residual, hybrid };

const char* family_name(Family f);
Family family_from_string(const std::string& s);

struct ModelConfig {
    Family family = Family::sharedfield;
    std::int64_t input_dim = 2;
    std::int64_t hidden_dim = 16;   // common state dimension d
    std::int64_t field_width = 0;   // hidden width of the field MLP; 0 -> hidden_dim
    std::int64_t depth = 4;         // flow steps L (ignored for endpoint/continuous)
    std::int64_t classes = 2;
    double horizon = 1.0;
    odesolve::SolverSpec solver{odesolve::Method::rk4, 8, 0.0, 1.0};

    std::int64_t width() const { return field_width > 0 ? field_width : hidden_dim; }
    void validate() const;
};

/// Named slices of a flat parameter vector.
class ParamLayout {
  public:
    std::int64_t add(const std::string& name, Shape shape);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    std::int64_t offset(const std::string& name) const;
    const Shape& shape(const std::string& name) const;
    std::int64_t total() const { return total_; }
    const std::vector<std::string>& names() const { return names_; }

  private:
    struct Entry {
        std::int64_t offset;
        Shape shape;
    };
    std::map<std::string, Entry> index_;
    std::vector<std::string> names_;
    std::int64_t total_ = 0;
};

/// Seeded orthonormal projection (rows x cols, rows <= cols), used as the
/// layer embedding when state widths differ from the common metric space.
Tensor orthonormal_projection(std::int64_t rows, std::int64_t cols, Rng& rng);

/// Per-tape cache of parameter leaves so repeated field evaluations share
/// one node per named slice.
struct TapeCtx {
    ad::Tape& tp;
    const std::vector<double>& theta;
    const ParamLayout& layout;
    std::map<std::string, ad::Var> cache;

    ad::Var p(const std::string& name);
};

/// A classification model with an observable propagation path: forward
/// exposes all hidden states h_0..h_L, and every layer transition has a
/// directional derivative (JVP) evaluated at the recorded states.
class FieldModel {
  public:
    FieldModel() = default;
    static FieldModel create(const ModelConfig& cfg, Rng& init_rng);

    const ModelConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return layout_; }
    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }
    std::int64_t n_params() const { return layout_.total(); }

    /// Number of transitions L; the trajectory has L + 1 states.
    std::int64_t depth() const;
    std::int64_t state_dim() const { return cfg_.hidden_dim; }

    struct Trace {
        std::vector<ad::Var> states;  // h_0..h_L, each [B x d]
        ad::Var logits;               // [B x C]
    };
    Trace trace(ad::Tape& tp, const Tensor& x) const;
    /// Continuous family under an alternate discretization of the same field.
    Trace trace(ad::Tape& tp, const Tensor& x, const odesolve::SolverSpec& spec) const;

    struct Forward {
        std::vector<Tensor> states;
        Tensor logits;
    };
    Forward forward_with_trajectory(const Tensor& x) const;
    Forward forward_with_trajectory(const Tensor& x, const odesolve::SolverSpec& spec) const;

    /// J_layer v at the recorded h_layer(x); v rows pair with x rows.
    Tensor layer_jvp(const Tensor& x, std::int64_t layer, const Tensor& v) const;
    /// J_layer^T u at the recorded h_layer(x) (reverse-mode through one step).
    Tensor layer_vjp(const Tensor& x, std::int64_t layer, const Tensor& u) const;
    /// J_{upto-1} ... J_0 v (tangent transported from h_0 through `upto` layers).
    Tensor accumulated_jvp(const Tensor& x, std::int64_t upto, const Tensor& v) const;

    /// Tangent step through layer `layer` for trainable JVP losses. `h` must
    /// be the dual of the recorded state h_layer on the same tape/ctx.
    ad::Dual dual_step(TapeCtx& ctx, ad::Dual h, std::int64_t layer) const;
    ad::Var head(TapeCtx& ctx, ad::Var h_final) const;
    TapeCtx ctx(ad::Tape& tp) const { return TapeCtx{tp, theta_, layout_, {}}; }

    /// h_0 as a function of raw input (linear encoding).
    Tensor encode(const Tensor& x) const;

    /// Raw flow field f_theta(h, t) for the flow families (sharedfield,
    /// timecond, continuous, hybrid shared part).
    Tensor field_value(const Tensor& h, double t) const;

    std::string to_checkpoint_json() const;
    static FieldModel from_checkpoint_json(const std::string& text);

  private:
    ad::Var step(TapeCtx& ctx, ad::Var h, std::int64_t layer) const;
    ad::Var field_eval(TapeCtx& ctx, ad::Var h, double t, const std::string& prefix) const;
    ad::Dual field_eval(TapeCtx& ctx, ad::Dual h, double t, const std::string& prefix) const;
    void build_layout();

    ModelConfig cfg_;
    ParamLayout layout_;
    std::vector<double> theta_;
};

double accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels);
std::vector<std::int64_t> predict(const Tensor& logits);

/// Flow over a reveal schedule: each cumulative observation step advances the
/// state once, so an R-step reveal path is an R-layer propagation.
struct RevealModelConfig {
    std::int64_t view_dim = 8;  // dimension of one masked view (2 x ambient)
    std::int64_t hidden_dim = 16;
    std::int64_t field_width = 0;
    std::int64_t classes = 2;
    std::int64_t steps = 4;  // reveal blocks R; one flow step per block
    double horizon = 1.0;

    std::int64_t width() const { return field_width > 0 ? field_width : hidden_dim; }
    double dt() const { return horizon / static_cast<double>(steps); }
};

class RevealFlowModel {
  public:
    RevealFlowModel() = default;
    static RevealFlowModel create(const RevealModelConfig& cfg, Rng& init_rng);

    const RevealModelConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return layout_; }
    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }
    std::int64_t n_params() const { return layout_.total(); }

    struct Trace {
        std::vector<ad::Var> states;  // h_0..h_R
        ad::Var logits;
    };
    /// views[r] is the batch of cumulative observations at step r+1, [B x view_dim].
    Trace trace_schedule(ad::Tape& tp, const std::vector<Tensor>& views) const;

    struct Forward {
        std::vector<Tensor> states;
        Tensor logits;
    };
    Forward forward_schedule(const std::vector<Tensor>& views) const;

    ad::Dual dual_step(TapeCtx& ctx, ad::Dual h, const Tensor& view) const;
    TapeCtx ctx(ad::Tape& tp) const { return TapeCtx{tp, theta_, layout_, {}}; }

  private:
    ad::Var step(TapeCtx& ctx, ad::Var h, ad::Var view) const;

    RevealModelConfig cfg_;
    ParamLayout layout_;
    std::vector<double> theta_;
};

}  // namespace fieldlab::netzoo
