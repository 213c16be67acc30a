#pragma once

#include <cstdint>
#include <vector>

#include "fieldlab/netzoo.hpp"
#include "fieldlab/odesolve.hpp"
#include "fieldlab/rng.hpp"
#include "fieldlab/tape.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::fieldlosses {

struct LossWeights {
    double lambda_r = 0.0;      // reveal consistency
    double lambda_s = 0.0;      // solver consistency
    double lambda_j = 0.0;      // Jacobian smoothness
    double alpha = 0.0;         // trajectory supervision
    double beta = 0.0;          // derivative supervision
    double gamma = 0.0;         // solver term in teacher training
    double lambda_fpr = 0.0;    // field preservation master weight
    double lambda_h = 1.0;      // FPR trajectory component
    double lambda_j_fpr = 1.0;  // FPR Jacobian component

    void validate() const;
};

/// Mean cross-entropy over batch rows.
ad::Var loss_task(ad::Tape& tp, ad::Var logits, const std::vector<std::int64_t>& labels);

/// ||h_p - h_q||^2 (batch mean) + KL(softmax(o_p) || softmax(o_q)) (batch
/// mean). The first-listed pass is the KL reference distribution.
ad::Var reveal_pair_loss(ad::Tape& tp, ad::Var h_p, ad::Var h_q, ad::Var o_p, ad::Var o_q);

/// Full-schedule passes of the same batch under two reveal paths.
ad::Var loss_reveal(ad::Tape& tp, const netzoo::RevealFlowModel& m, const std::vector<Tensor>& views_p,
                    const std::vector<Tensor>& views_q);

/// Terminal-state and logit consistency of a continuous model integrated
/// under two discretizations; gradients flow through both unrolled passes.
ad::Var loss_solver(ad::Tape& tp, const netzoo::FieldModel& m, const Tensor& x,
                    const odesolve::SolverSpec& s1, const odesolve::SolverSpec& s2);

/// Mean over layers >= 1 and probes of ||J_l d - J_{l-1} d||^2 / (||d||^2 + eps).
ad::Var loss_jac(ad::Tape& tp, const netzoo::FieldModel& m, const Tensor& x, std::int64_t probes,
                 Rng& rng, double eps = 1e-8);

/// Same smoothness penalty along a reveal schedule's step operators.
ad::Var loss_jac_reveal(ad::Tape& tp, const netzoo::RevealFlowModel& m,
                        const std::vector<Tensor>& views, std::int64_t probes, Rng& rng,
                        double eps = 1e-8);

/// Sum over matched times of squared state gaps, averaged over the batch.
ad::Var loss_traj(ad::Tape& tp, const std::vector<ad::Var>& pred_states,
                  const std::vector<Tensor>& teacher_states);

/// Sum over eval points of squared field gaps, averaged over the batch.
ad::Var loss_deriv(ad::Tape& tp, const std::vector<ad::Var>& field_pred,
                   const std::vector<Tensor>& field_true);

/// lambda_h * trajectory drift + lambda_j * Jacobian drift against a frozen
/// snapshot, on anchor samples. Gradients reach only the live model.
ad::Var loss_fpr(ad::Tape& tp, const netzoo::FieldModel& frozen_old, const netzoo::FieldModel& m_new,
                 const Tensor& anchors, double lambda_h, double lambda_j, std::int64_t probes, Rng& rng,
                 double eps = 1e-8, std::int64_t layer_lo = 0, std::int64_t layer_hi = -1);

struct CollapseThresholds {
    double rep_variance_floor = 0.0;  // typically 1e-4 x variance at init
    double class_share_cap = 0.9;
};

struct CollapseFlags {
    double rep_variance = 0.0;
    double prediction_entropy = 0.0;
    double class_balance = 0.0;  // largest predicted-class share
    bool collapsed = false;
};

/// Representation-variance and prediction-homogenization diagnostics from a
/// terminal hidden batch and logits.
CollapseFlags collapse_check(const Tensor& h_final, const Tensor& logits,
                             const CollapseThresholds& thresholds);
CollapseFlags collapse_check(const netzoo::FieldModel& m, const Tensor& x,
                             const CollapseThresholds& thresholds);

/// Mean per-dimension variance of the terminal hidden state (the reference
/// quantity for the collapse floor).
double rep_variance(const Tensor& h_final);

}  // namespace fieldlab::fieldlosses
