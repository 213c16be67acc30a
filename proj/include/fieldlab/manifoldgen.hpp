#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fieldlab/rng.hpp"
#include "fieldlab/tensor.hpp"

namespace fieldlab::manifoldgen {

enum class Difficulty { easy, medium, hard };
const char* difficulty_name(Difficulty d);
Difficulty difficulty_from_string(const std::string& s);

struct ManifoldSpec {
    std::int64_t classes = 4;
    std::int64_t ambient_dim = 16;   // D
    std::int64_t intrinsic_dim = 2;  // k < D
    double separation = 2.5;         // expected class-center norm scale s
    double noise = 0.3;              // sigma
    double curvature_gain = 1.0;     // q
    std::int64_t samples_per_class = 100;

    void validate() const;
    /// Preset triples: easy (4, 0.1, 0.5), medium (2.5, 0.3, 1.0), hard (1.5, 0.5, 2.0).
    static ManifoldSpec preset(Difficulty d, std::int64_t classes, std::int64_t ambient_dim,
                               std::int64_t intrinsic_dim, std::int64_t samples_per_class);
};

/// One class's manifold chart: center, tangent frame, deformation frequencies
/// and amplitudes.
struct ClassChart {
    Tensor mu;  // [D]
    Tensor U;   // [D x k], orthonormal columns
    Tensor V;   // [D x k]
    Tensor w;   // [D]
};

struct Dataset {
    ManifoldSpec spec;
    Tensor x;                          // [N x D]
    std::vector<std::int64_t> labels;  // N
    Tensor latents;                    // [N x k] per-sample tau
    std::vector<ClassChart> charts;    // per class

    std::int64_t size() const { return x.rows(); }
};

/// x = mu_c + U_c tau + q * w_c (.) sin(V_c tau) + sigma * noise, tau uniform
/// in [-1, 1]^k; per-class charts drawn from split streams of rng.
Dataset generate_manifold(const ManifoldSpec& spec, Rng& rng);

/// Per-class split keeping the charts shared: the first train_per_class rows
/// of each class go to the first dataset, the rest to the second.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, std::int64_t train_per_class);

enum class ShiftKind { noise, rotation, center_shift, curvature_change };
const char* shift_name(ShiftKind k);
ShiftKind shift_from_string(const std::string& s);

struct OodSpec {
    ShiftKind kind = ShiftKind::noise;
    double magnitude = 0.5;
    void validate() const;
};

/// Applies the named distribution shift; labels are untouched.
Dataset apply_ood(const Dataset& data, const OodSpec& ood, Rng& rng);

// ---- reveal paths ----

enum class PathKind { center_out, sequential, random_perm, frequency };
const char* path_kind_name(PathKind k);
PathKind path_kind_from_string(const std::string& s);

struct RevealPath {
    std::string id;
    std::vector<std::vector<std::int64_t>> blocks;  // ordered partition of {0..D-1}

    std::int64_t steps() const { return static_cast<std::int64_t>(blocks.size()); }
};

/// Build one path per kind, each with R blocks. The frequency ordering needs
/// the training-sample mean (computed once on train data).
std::vector<RevealPath> build_paths(std::int64_t ambient_dim, const std::vector<PathKind>& kinds,
                                    std::int64_t blocks, Rng& rng, const Tensor* train_mean = nullptr);

/// Cumulative observation after `step` blocks (1-based): coordinates in
/// blocks 1..step pass through, the rest are zeroed, and a 0/1 mask channel is
/// appended (output width 2D).
Tensor reveal(const Tensor& x, const RevealPath& path, std::int64_t step);

/// All R cumulative views of a batch, in order.
std::vector<Tensor> reveal_schedule(const Tensor& x, const RevealPath& path);

// ---- serialization ----
std::string dataset_to_jsonl(const Dataset& data);
Dataset dataset_from_jsonl(const std::string& text);
std::string paths_to_json(const std::vector<RevealPath>& paths);
std::vector<RevealPath> paths_from_json(const std::string& text);

}  // namespace fieldlab::manifoldgen
