#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fieldlab/netzoo.hpp"
#include "fieldlab/odesolve.hpp"
#include "fieldlab/rng.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::fieldmetrics {

/// Standardized hidden states z_0..z_L of one input, each a 1-D tensor of a
/// common dimension.
using Trajectory = std::vector<Tensor>;

/// Extract the per-sample trajectory from batched forward states.
Trajectory row_trajectory(const std::vector<Tensor>& batched_states, std::int64_t row);

// ---- trajectory geometry ----
double path_length(const Trajectory& t);
double curvature(const Trajectory& t, double eps = 1e-8);
double velocity_alignment(const Trajectory& t, double eps = 1e-8);
/// Len / ||z_L - z_0||; not defined in the source metric tables, reconstructed
/// here with the denominator floored at eps.
double norm_path(const Trajectory& t, double eps = 1e-8);

// ---- multi-path sensitivity ----
/// outputs[i][p]: terminal tensor (hidden state or logits) of sample i under
/// path p. Mean L2 distance over samples and unordered path pairs.
double path_sensitivity(const std::vector<std::vector<Tensor>>& outputs);

// ---- solver reparameterization ----
/// Mean over samples and spec pairs of ||dh_T|| + ||dlogits|| for a
/// continuous-family model evaluated under each discretization.
double solver_consistency(const netzoo::FieldModel& m, const Tensor& samples,
                          const std::vector<odesolve::SolverSpec>& specs);

// ---- retention ----
double frs(const netzoo::FieldModel& m_old, const netzoo::FieldModel& m_new, const Tensor& anchors);
double jrs(const netzoo::FieldModel& m_old, const netzoo::FieldModel& m_new, const Tensor& anchors,
           std::int64_t probes, Rng& rng, double eps = 1e-8);

// ---- Jacobian spectra ----
/// Top-k singular values of the layer operator via randomized subspace
/// iteration (JVP/VJP only), sorted descending.
std::vector<double> jacobian_spectrum(const netzoo::FieldModel& m, const Tensor& x, std::int64_t layer,
                                      std::int64_t k, Rng& rng);
/// 1-D Wasserstein-1 distance between equal-length sorted spectra.
double jac_wasserstein(const std::vector<double>& a, const std::vector<double>& b);
/// Shannon entropy of the normalized singular-value vector.
double spectral_entropy(const std::vector<double>& spectrum);

// ---- trajectory alignment ----
/// min over orthogonal Q and scale s of ||s A Q - B||_F / ||B||_F after
/// resampling both trajectories to a common number of points by linear
/// interpolation in the layer index.
double procrustes_error(const Trajectory& a, const Trajectory& b);

// ---- calibration and statistics ----
double calibration_ece(const Tensor& logits, const std::vector<std::int64_t>& labels,
                       std::int64_t bins = 15);

struct Correlations {
    double pearson_r = 0.0;
    double pearson_p = 1.0;
    double spearman_rho = 0.0;
    double spearman_p = 1.0;
};
/// Pearson and Spearman with p-values (t approximation; exact permutation for
/// the Spearman p when n <= 10).
Correlations correlations(const std::vector<double>& xs, const std::vector<double>& ys);

// ---- bundled report ----
struct FieldReport {
    std::optional<double> len;
    std::optional<double> norm_path;
    std::optional<double> curvature;
    std::optional<double> vel_align;
    std::optional<double> path_sens_hidden;
    std::optional<double> path_sens_logit;
    std::optional<double> solver_err;
    std::optional<double> jac_wdist;
    std::optional<double> frs;
    std::optional<double> jrs;
    std::vector<double> spectral_entropy;  // per layer; empty when not computed

    std::string to_json() const;
    static FieldReport from_json(const std::string& text);
};

/// Trajectory geometry + adjacent-layer spectral statistics of a model over a
/// batch of inputs. Path/solver/retention entries are left absent; they need
/// experiment context.
FieldReport report_for(const netzoo::FieldModel& m, const Tensor& x, std::int64_t spectrum_k, Rng& rng);

}  // namespace fieldlab::fieldmetrics
