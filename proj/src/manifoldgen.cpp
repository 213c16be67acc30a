#include "fieldlab/manifoldgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fieldlab::manifoldgen {

const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "?";
}

Difficulty difficulty_from_string(const std::string& s) {
    if (s == "easy") return Difficulty::easy;
    if (s == "medium") return Difficulty::medium;
    if (s == "hard") return Difficulty::hard;
    throw std::invalid_argument("unknown difficulty '" + s + "'");
}

void ManifoldSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("manifold spec: needs >= 2 classes");
    if (intrinsic_dim >= ambient_dim)
        throw std::invalid_argument("manifold spec: intrinsic_dim must be < ambient_dim");
    if (noise < 0.0) throw std::invalid_argument("manifold spec: noise must be >= 0");
    if (samples_per_class < 1) throw std::invalid_argument("manifold spec: samples_per_class >= 1");
}

ManifoldSpec ManifoldSpec::preset(Difficulty d, std::int64_t classes, std::int64_t ambient_dim,
                                  std::int64_t intrinsic_dim, std::int64_t samples_per_class) {
    ManifoldSpec s;
    s.classes = classes;
    s.ambient_dim = ambient_dim;
    s.intrinsic_dim = intrinsic_dim;
    s.samples_per_class = samples_per_class;
    switch (d) {
        case Difficulty::easy:
            s.separation = 4.0;
            s.noise = 0.1;
            s.curvature_gain = 0.5;
            break;
        case Difficulty::medium:
            s.separation = 2.5;
            s.noise = 0.3;
            s.curvature_gain = 1.0;
            break;
        case Difficulty::hard:
            s.separation = 1.5;
            s.noise = 0.5;
            s.curvature_gain = 2.0;
            break;
    }
    return s;
}

namespace {

Tensor orthonormal_columns(std::int64_t rows, std::int64_t cols, Rng& rng) {
    Tensor q = Tensor::zeros({rows, cols});
    for (std::int64_t c = 0; c < cols; ++c) {
        Tensor v = rng.normal_tensor({rows});
        for (std::int64_t prev = 0; prev < c; ++prev) {
            double proj = 0.0;
            for (std::int64_t r = 0; r < rows; ++r) proj += v.at(r) * q.at(r, prev);
            for (std::int64_t r = 0; r < rows; ++r) v.at(r) -= proj * q.at(r, prev);
        }
        double nrm = norm2(v);
        for (std::int64_t r = 0; r < rows; ++r) q.at(r, c) = v.at(r) / nrm;
    }
    return q;
}

Tensor chart_point(const ClassChart& ch, const Tensor& tau, const ManifoldSpec& spec) {
    std::int64_t D = spec.ambient_dim, k = spec.intrinsic_dim;
    Tensor x = ch.mu;
    for (std::int64_t r = 0; r < D; ++r) {
        double lin = 0.0, arg = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            lin += ch.U.at(r, j) * tau.at(j);
            arg += ch.V.at(r, j) * tau.at(j);
        }
        x.at(r) += lin + spec.curvature_gain * ch.w.at(r) * std::sin(arg);
    }
    return x;
}

}  // namespace

Dataset generate_manifold(const ManifoldSpec& spec, Rng& rng) {
    spec.validate();
    std::int64_t D = spec.ambient_dim, k = spec.intrinsic_dim;
    std::int64_t n = spec.classes * spec.samples_per_class;

    Dataset out;
    out.spec = spec;
    out.x = Tensor::zeros({n, D});
    out.latents = Tensor::zeros({n, k});
    out.labels.reserve(static_cast<std::size_t>(n));

    double mu_std = spec.separation / std::sqrt(static_cast<double>(D));
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < spec.classes; ++c) {
        Rng chart_rng = rng.split("chart" + std::to_string(c));
        ClassChart ch;
        ch.mu = chart_rng.normal_tensor({D}, mu_std);
        ch.U = orthonormal_columns(D, k, chart_rng);
        ch.V = chart_rng.normal_tensor({D, k}, 1.5707963267948966);  // pi/2 frequency scale
        ch.w = chart_rng.normal_tensor({D}, 1.0 / std::sqrt(static_cast<double>(D)));
        out.charts.push_back(ch);

        Rng sample_rng = rng.split("samples" + std::to_string(c));
        for (std::int64_t i = 0; i < spec.samples_per_class; ++i) {
            Tensor tau = sample_rng.uniform_tensor({k}, -1.0, 1.0);
            Tensor x = chart_point(ch, tau, spec);
            for (std::int64_t r = 0; r < D; ++r)
                out.x.at(row, r) = x.at(r) + spec.noise * sample_rng.normal();
            for (std::int64_t j = 0; j < k; ++j) out.latents.at(row, j) = tau.at(j);
            out.labels.push_back(c);
            ++row;
        }
    }
    return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, std::int64_t train_per_class) {
    if (train_per_class < 1 || train_per_class >= data.spec.samples_per_class)
        throw std::invalid_argument("split_train_test: train_per_class outside (0, samples_per_class)");
    std::int64_t D = data.spec.ambient_dim, k = data.spec.intrinsic_dim;
    Dataset train, test;
    train.spec = data.spec;
    train.spec.samples_per_class = train_per_class;
    test.spec = data.spec;
    test.spec.samples_per_class = data.spec.samples_per_class - train_per_class;
    train.charts = data.charts;
    test.charts = data.charts;

    auto take = [&](Dataset& dst, std::int64_t row) {
        for (std::int64_t c = 0; c < D; ++c) dst.x.data.push_back(data.x.at(row, c));
        for (std::int64_t j = 0; j < k; ++j) dst.latents.data.push_back(data.latents.at(row, j));
        dst.labels.push_back(data.labels[static_cast<std::size_t>(row)]);
    };
    for (std::int64_t c = 0; c < data.spec.classes; ++c) {
        std::int64_t base = c * data.spec.samples_per_class;
        for (std::int64_t i = 0; i < data.spec.samples_per_class; ++i)
            take(i < train_per_class ? train : test, base + i);
    }
    train.x.shape = {static_cast<std::int64_t>(train.labels.size()), D};
    train.latents.shape = {static_cast<std::int64_t>(train.labels.size()), k};
    test.x.shape = {static_cast<std::int64_t>(test.labels.size()), D};
    test.latents.shape = {static_cast<std::int64_t>(test.labels.size()), k};
    return {std::move(train), std::move(test)};
}

const char* shift_name(ShiftKind k) {
    switch (k) {
        case ShiftKind::noise: return "noise";
        case ShiftKind::rotation: return "rotation";
        case ShiftKind::center_shift: return "center-shift";
        case ShiftKind::curvature_change: return "curvature-change";
    }
    return "?";
}

ShiftKind shift_from_string(const std::string& s) {
    for (ShiftKind k : {ShiftKind::noise, ShiftKind::rotation, ShiftKind::center_shift,
                        ShiftKind::curvature_change})
        if (s == shift_name(k)) return k;
    throw std::invalid_argument("unknown ood shift '" + s + "'");
}

void OodSpec::validate() const {
    if (!(magnitude > 0.0)) throw std::invalid_argument("ood spec: magnitude must be > 0");
}

Dataset apply_ood(const Dataset& data, const OodSpec& ood, Rng& rng) {
    ood.validate();
    Dataset out = data;
    std::int64_t n = data.size(), D = data.spec.ambient_dim;
    switch (ood.kind) {
        case ShiftKind::noise: {
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < D; ++c) out.x.at(r, c) += ood.magnitude * rng.normal();
            break;
        }
        case ShiftKind::rotation: {
            // compose plane rotations over disjoint random coordinate pairs;
            // exactly norm-preserving, with the angle as the magnitude
            std::vector<std::int64_t> perm(static_cast<std::size_t>(D));
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(perm);
            double cs = std::cos(ood.magnitude), sn = std::sin(ood.magnitude);
            for (std::int64_t p = 0; p + 1 < D; p += 2) {
                std::int64_t i = perm[static_cast<std::size_t>(p)];
                std::int64_t j = perm[static_cast<std::size_t>(p + 1)];
                for (std::int64_t r = 0; r < n; ++r) {
                    double xi = out.x.at(r, i), xj = out.x.at(r, j);
                    out.x.at(r, i) = cs * xi - sn * xj;
                    out.x.at(r, j) = sn * xi + cs * xj;
                }
            }
            break;
        }
        case ShiftKind::center_shift: {
            std::vector<Tensor> dirs;
            for (std::int64_t c = 0; c < data.spec.classes; ++c) {
                Tensor d = rng.normal_tensor({D});
                dirs.push_back(scale(d, ood.magnitude / norm2(d)));
            }
            for (std::int64_t r = 0; r < n; ++r) {
                const Tensor& d = dirs[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(r)])];
                for (std::int64_t c = 0; c < D; ++c) out.x.at(r, c) += d.at(c);
            }
            break;
        }
        case ShiftKind::curvature_change: {
            // re-evaluate the deformation term at the stored latent with the
            // gain increased by `magnitude`
            for (std::int64_t r = 0; r < n; ++r) {
                const ClassChart& ch =
                    data.charts[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(r)])];
                for (std::int64_t c = 0; c < D; ++c) {
                    double arg = 0.0;
                    for (std::int64_t j = 0; j < data.spec.intrinsic_dim; ++j)
                        arg += ch.V.at(c, j) * data.latents.at(r, j);
                    out.x.at(r, c) += ood.magnitude * ch.w.at(c) * std::sin(arg);
                }
            }
            break;
        }
    }
    return out;
}

const char* path_kind_name(PathKind k) {
    switch (k) {
        case PathKind::center_out: return "center-out";
        case PathKind::sequential: return "sequential";
        case PathKind::random_perm: return "random";
        case PathKind::frequency: return "frequency";
    }
    return "?";
}

PathKind path_kind_from_string(const std::string& s) {
    for (PathKind k : {PathKind::center_out, PathKind::sequential, PathKind::random_perm,
                       PathKind::frequency})
        if (s == path_kind_name(k)) return k;
    throw std::invalid_argument("unknown reveal path kind '" + s + "'");
}

namespace {

std::vector<std::vector<std::int64_t>> split_order(const std::vector<std::int64_t>& order,
                                                   std::int64_t blocks) {
    std::int64_t D = static_cast<std::int64_t>(order.size());
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(blocks));
    for (std::int64_t i = 0; i < D; ++i) {
        auto b = static_cast<std::size_t>(i * blocks / D);
        out[b].push_back(order[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace

std::vector<RevealPath> build_paths(std::int64_t ambient_dim, const std::vector<PathKind>& kinds,
                                    std::int64_t blocks, Rng& rng, const Tensor* train_mean) {
    if (blocks < 2) throw std::invalid_argument("build_paths: needs at least 2 reveal blocks");
    if (ambient_dim < blocks) throw std::invalid_argument("build_paths: more blocks than coordinates");
    std::vector<RevealPath> out;
    for (PathKind kind : kinds) {
        std::vector<std::int64_t> order(static_cast<std::size_t>(ambient_dim));
        std::iota(order.begin(), order.end(), 0);
        switch (kind) {
            case PathKind::sequential:
                break;
            case PathKind::center_out: {
                double mid = static_cast<double>(ambient_dim - 1) / 2.0;
                std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
                    return std::abs(static_cast<double>(a) - mid) < std::abs(static_cast<double>(b) - mid);
                });
                break;
            }
            case PathKind::random_perm: {
                Rng prng = rng.split("reveal-random");
                prng.shuffle(order);
                break;
            }
            case PathKind::frequency: {
                if (train_mean == nullptr || train_mean->numel() != ambient_dim)
                    throw std::invalid_argument("build_paths: frequency path needs the train mean");
                // DCT-II of the train mean; coordinate i is scored by the
                // magnitude of the same-index coefficient
                std::vector<double> coef(static_cast<std::size_t>(ambient_dim), 0.0);
                for (std::int64_t f = 0; f < ambient_dim; ++f) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < ambient_dim; ++i)
                        acc += train_mean->at(i) *
                               std::cos(M_PI * static_cast<double>(f) *
                                        (2.0 * static_cast<double>(i) + 1.0) /
                                        (2.0 * static_cast<double>(ambient_dim)));
                    coef[static_cast<std::size_t>(f)] = std::abs(acc);
                }
                std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
                    return coef[static_cast<std::size_t>(a)] > coef[static_cast<std::size_t>(b)];
                });
                break;
            }
        }
        RevealPath p;
        p.id = path_kind_name(kind);
        p.blocks = split_order(order, blocks);
        out.push_back(std::move(p));
    }
    return out;
}

Tensor reveal(const Tensor& x, const RevealPath& path, std::int64_t step) {
    if (step < 1 || step > path.steps())
        throw std::invalid_argument("reveal: step " + std::to_string(step) + " outside [1, " +
                                    std::to_string(path.steps()) + "]");
    std::int64_t n = x.rows(), D = x.cols();
    Tensor out = Tensor::zeros({n, 2 * D});
    for (std::int64_t b = 0; b < step; ++b)
        for (std::int64_t coord : path.blocks[static_cast<std::size_t>(b)]) {
            if (coord < 0 || coord >= D) throw std::invalid_argument("reveal: path coordinate out of range");
            for (std::int64_t r = 0; r < n; ++r) {
                out.at(r, coord) = x.at(r, coord);
                out.at(r, D + coord) = 1.0;
            }
        }
    return out;
}

std::vector<Tensor> reveal_schedule(const Tensor& x, const RevealPath& path) {
    std::vector<Tensor> views;
    for (std::int64_t r = 1; r <= path.steps(); ++r) views.push_back(reveal(x, path, r));
    return views;
}

// ---------------------------------------------------------------------------

std::string dataset_to_jsonl(const Dataset& data) {
    std::ostringstream out;
    nlohmann::json header;
    header["record"] = "manifold-spec";
    header["classes"] = data.spec.classes;
    header["ambient_dim"] = data.spec.ambient_dim;
    header["intrinsic_dim"] = data.spec.intrinsic_dim;
    header["separation"] = data.spec.separation;
    header["noise"] = data.spec.noise;
    header["curvature_gain"] = data.spec.curvature_gain;
    header["samples_per_class"] = data.spec.samples_per_class;
    nlohmann::json charts = nlohmann::json::array();
    for (const auto& ch : data.charts) {
        charts.push_back({{"mu", ch.mu.data},
                          {"U", ch.U.data},
                          {"V", ch.V.data},
                          {"w", ch.w.data}});
    }
    header["charts"] = charts;
    out << header.dump() << "\n";
    for (std::int64_t r = 0; r < data.size(); ++r) {
        nlohmann::json j;
        j["x"] = data.x.row_at(r).data;
        j["label"] = data.labels[static_cast<std::size_t>(r)];
        j["tau"] = data.latents.row_at(r).data;
        out << j.dump() << "\n";
    }
    return out.str();
}

Dataset dataset_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("dataset_from_jsonl: empty input");
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("record", "") != "manifold-spec")
        throw std::invalid_argument("dataset_from_jsonl: missing spec header");

    Dataset out;
    out.spec.classes = header.at("classes").get<std::int64_t>();
    out.spec.ambient_dim = header.at("ambient_dim").get<std::int64_t>();
    out.spec.intrinsic_dim = header.at("intrinsic_dim").get<std::int64_t>();
    out.spec.separation = header.at("separation").get<double>();
    out.spec.noise = header.at("noise").get<double>();
    out.spec.curvature_gain = header.at("curvature_gain").get<double>();
    out.spec.samples_per_class = header.at("samples_per_class").get<std::int64_t>();
    std::int64_t D = out.spec.ambient_dim, k = out.spec.intrinsic_dim;
    for (const auto& ch : header.at("charts")) {
        ClassChart chart;
        chart.mu = Tensor({D}, ch.at("mu").get<std::vector<double>>());
        chart.U = Tensor({D, k}, ch.at("U").get<std::vector<double>>());
        chart.V = Tensor({D, k}, ch.at("V").get<std::vector<double>>());
        chart.w = Tensor({D}, ch.at("w").get<std::vector<double>>());
        out.charts.push_back(std::move(chart));
    }

    std::vector<double> xs, taus;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        auto xv = j.at("x").get<std::vector<double>>();
        auto tv = j.at("tau").get<std::vector<double>>();
        xs.insert(xs.end(), xv.begin(), xv.end());
        taus.insert(taus.end(), tv.begin(), tv.end());
        out.labels.push_back(j.at("label").get<std::int64_t>());
    }
    auto n = static_cast<std::int64_t>(out.labels.size());
    out.x = Tensor({n, D}, std::move(xs));
    out.latents = Tensor({n, k}, std::move(taus));
    return out;
}

std::string paths_to_json(const std::vector<RevealPath>& paths) {
    nlohmann::json j;
    for (const auto& p : paths) j[p.id] = p.blocks;
    return j.dump(2);
}

std::vector<RevealPath> paths_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    std::vector<RevealPath> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        RevealPath p;
        p.id = it.key();
        p.blocks = it.value().get<std::vector<std::vector<std::int64_t>>>();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace fieldlab::manifoldgen
