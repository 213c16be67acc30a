#include "fieldlab/fieldmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

namespace fieldlab::fieldmetrics {

Trajectory row_trajectory(const std::vector<Tensor>& batched_states, std::int64_t row) {
    Trajectory t;
    t.reserve(batched_states.size());
    for (const Tensor& s : batched_states) t.push_back(s.row_at(row));
    return t;
}

namespace {

void require_traj(const Trajectory& t, std::size_t min_states, const char* op) {
    if (t.size() < min_states)
        throw std::invalid_argument(std::string(op) + ": trajectory needs at least " +
                                    std::to_string(min_states) + " states, got " + std::to_string(t.size()));
    for (const Tensor& s : t)
        if (!s.same_shape(t.front()))
            throw std::invalid_argument(std::string(op) + ": trajectory state dimensions differ");
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (std::int64_t r = 0; r < t.rows(); ++r)
        for (std::int64_t c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
    return m;
}

}  // namespace

double path_length(const Trajectory& t) {
    require_traj(t, 2, "path_length");
    double len = 0.0;
    for (std::size_t l = 0; l + 1 < t.size(); ++l) len += norm2(sub(t[l + 1], t[l]));
    return len;
}

double curvature(const Trajectory& t, double eps) {
    require_traj(t, 3, "curvature");
    double acc = 0.0;
    std::size_t terms = 0;
    for (std::size_t l = 1; l + 1 < t.size(); ++l) {
        Tensor second = add(sub(t[l + 1], scale(t[l], 2.0)), t[l - 1]);
        double denom = squared_norm(sub(t[l + 1], t[l])) + eps;
        acc += norm2(second) / denom;
        ++terms;
    }
    return acc / static_cast<double>(terms);
}

double velocity_alignment(const Trajectory& t, double eps) {
    require_traj(t, 3, "velocity_alignment");
    double acc = 0.0;
    std::size_t terms = 0;
    for (std::size_t l = 1; l + 1 < t.size(); ++l) {
        Tensor d1 = sub(t[l + 1], t[l]);
        Tensor d0 = sub(t[l], t[l - 1]);
        acc += dot(d1, d0) / (norm2(d1) * norm2(d0) + eps);
        ++terms;
    }
    return acc / static_cast<double>(terms);
}

double norm_path(const Trajectory& t, double eps) {
    require_traj(t, 2, "norm_path");
    double disp = norm2(sub(t.back(), t.front()));
    return path_length(t) / std::max(disp, eps);
}

double path_sensitivity(const std::vector<std::vector<Tensor>>& outputs) {
    if (outputs.empty()) throw std::invalid_argument("path_sensitivity: no samples");
    double acc = 0.0;
    std::int64_t pairs = 0;
    for (const auto& per_path : outputs) {
        if (per_path.size() < 2)
            throw std::invalid_argument("path_sensitivity: needs at least 2 paths per sample");
        for (std::size_t p = 0; p < per_path.size(); ++p)
            for (std::size_t q = p + 1; q < per_path.size(); ++q) {
                acc += norm2(sub(per_path[p], per_path[q]));
                ++pairs;
            }
    }
    return acc / static_cast<double>(pairs);
}

double solver_consistency(const netzoo::FieldModel& m, const Tensor& samples,
                          const std::vector<odesolve::SolverSpec>& specs) {
    if (specs.size() < 2) throw std::invalid_argument("solver_consistency: needs at least 2 solver specs");
    std::vector<netzoo::FieldModel::Forward> runs;
    runs.reserve(specs.size());
    for (const auto& s : specs) runs.push_back(m.forward_with_trajectory(samples, s));

    double acc = 0.0;
    std::int64_t terms = 0;
    for (std::size_t i = 0; i < runs.size(); ++i)
        for (std::size_t j = i + 1; j < runs.size(); ++j) {
            for (std::int64_t r = 0; r < samples.rows(); ++r) {
                Tensor dh = sub(runs[i].states.back().row_at(r), runs[j].states.back().row_at(r));
                Tensor dl = sub(runs[i].logits.row_at(r), runs[j].logits.row_at(r));
                acc += norm2(dh) + norm2(dl);
                ++terms;
            }
        }
    return acc / static_cast<double>(terms);
}

namespace {

void require_comparable(const netzoo::FieldModel& a, const netzoo::FieldModel& b, const char* op) {
    if (a.depth() != b.depth() || a.state_dim() != b.state_dim())
        throw std::invalid_argument(std::string(op) + ": models are not layer-comparable");
}

}  // namespace

double frs(const netzoo::FieldModel& m_old, const netzoo::FieldModel& m_new, const Tensor& anchors) {
    require_comparable(m_old, m_new, "frs");
    if (anchors.shape.size() != 2 || anchors.rows() < 1)
        throw std::invalid_argument("frs: anchor set is empty");
    auto fo = m_old.forward_with_trajectory(anchors);
    auto fn = m_new.forward_with_trajectory(anchors);
    double acc = 0.0;
    double inv_states = 1.0 / static_cast<double>(fo.states.size());
    for (std::int64_t r = 0; r < anchors.rows(); ++r) {
        double per_anchor = 0.0;
        for (std::size_t l = 0; l < fo.states.size(); ++l)
            per_anchor += squared_norm(sub(fo.states[l].row_at(r), fn.states[l].row_at(r)));
        acc += per_anchor * inv_states;
    }
    return acc / static_cast<double>(anchors.rows());
}

double jrs(const netzoo::FieldModel& m_old, const netzoo::FieldModel& m_new, const Tensor& anchors,
           std::int64_t probes, Rng& rng, double eps) {
    require_comparable(m_old, m_new, "jrs");
    if (anchors.shape.size() != 2 || anchors.rows() < 1)
        throw std::invalid_argument("jrs: anchor set is empty");
    if (probes < 1) throw std::invalid_argument("jrs: probe count must be >= 1");
    std::int64_t d = m_old.state_dim();
    double acc = 0.0;
    std::int64_t terms = 0;
    for (std::int64_t p = 0; p < probes; ++p) {
        Tensor delta = rng.rademacher_tensor({anchors.rows(), d});
        for (std::int64_t l = 0; l < m_old.depth(); ++l) {
            Tensor jo = m_old.layer_jvp(anchors, l, delta);
            Tensor jn = m_new.layer_jvp(anchors, l, delta);
            for (std::int64_t r = 0; r < anchors.rows(); ++r) {
                double num = squared_norm(sub(jo.row_at(r), jn.row_at(r)));
                double den = squared_norm(delta.row_at(r)) + eps;
                acc += num / den;
                ++terms;
            }
        }
    }
    return acc / static_cast<double>(terms);
}

std::vector<double> jacobian_spectrum(const netzoo::FieldModel& m, const Tensor& x, std::int64_t layer,
                                      std::int64_t k, Rng& rng) {
    std::int64_t d = m.state_dim();
    if (k < 1 || k > d)
        throw std::invalid_argument("jacobian_spectrum: k must be in [1, state_dim]");
    if (x.shape.size() != 2 || x.rows() != 1)
        throw std::invalid_argument("jacobian_spectrum: expects a single-row input");
    std::int64_t block = std::min<std::int64_t>(d, 2 * k);

    // replicate the sample so each probe row shares the same operating point
    Tensor xb = Tensor::zeros({block, x.cols()});
    for (std::int64_t r = 0; r < block; ++r)
        for (std::int64_t c = 0; c < x.cols(); ++c) xb.at(r, c) = x.at(0, c);

    auto orthonormalize_rows = [](Tensor& v) {
        for (std::int64_t r = 0; r < v.rows(); ++r) {
            for (std::int64_t prev = 0; prev < r; ++prev) {
                double proj = 0.0;
                for (std::int64_t c = 0; c < v.cols(); ++c) proj += v.at(r, c) * v.at(prev, c);
                for (std::int64_t c = 0; c < v.cols(); ++c) v.at(r, c) -= proj * v.at(prev, c);
            }
            double nrm = 0.0;
            for (std::int64_t c = 0; c < v.cols(); ++c) nrm += v.at(r, c) * v.at(r, c);
            nrm = std::sqrt(nrm);
            if (nrm < 1e-300) nrm = 1.0;  // rank-deficient operator; keep zero row
            for (std::int64_t c = 0; c < v.cols(); ++c) v.at(r, c) /= nrm;
        }
    };

    Tensor probes = rng.normal_tensor({block, d});
    orthonormalize_rows(probes);
    for (int it = 0; it < 4; ++it) {
        Tensor y = m.layer_jvp(xb, layer, probes);
        orthonormalize_rows(y);
        Tensor z = m.layer_vjp(xb, layer, y);
        orthonormalize_rows(z);
        probes = z;
    }
    Tensor w = m.layer_jvp(xb, layer, probes);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(w));
    std::vector<double> sv(svd.singularValues().data(),
                           svd.singularValues().data() + svd.singularValues().size());
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    sv.resize(static_cast<std::size_t>(k));
    return sv;
}

double jac_wasserstein(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("jac_wasserstein: spectra must be non-empty and equal length");
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) acc += std::abs(sa[i] - sb[i]);
    return acc / static_cast<double>(sa.size());
}

double spectral_entropy(const std::vector<double>& spectrum) {
    if (spectrum.empty()) throw std::invalid_argument("spectral_entropy: empty spectrum");
    double total = 0.0;
    for (double s : spectrum) {
        if (s < 0.0) throw std::invalid_argument("spectral_entropy: negative singular value");
        total += s;
    }
    if (total <= 0.0) return 0.0;
    double h = 0.0;
    for (double s : spectrum) {
        if (s <= 0.0) continue;
        double p = s / total;
        h -= p * std::log(p);
    }
    return h;
}

namespace {

Eigen::MatrixXd resample_trajectory(const Trajectory& t, std::int64_t points) {
    std::int64_t d = t.front().numel();
    Eigen::MatrixXd out(points, d);
    double src_last = static_cast<double>(t.size() - 1);
    for (std::int64_t j = 0; j < points; ++j) {
        double tau = (points == 1) ? 0.0 : src_last * static_cast<double>(j) / static_cast<double>(points - 1);
        auto lo = static_cast<std::size_t>(std::floor(tau));
        std::size_t hi = std::min(lo + 1, t.size() - 1);
        double w = tau - static_cast<double>(lo);
        for (std::int64_t c = 0; c < d; ++c)
            out(j, c) = (1.0 - w) * t[lo].at(c) + w * t[hi].at(c);
    }
    return out;
}

}  // namespace

double procrustes_error(const Trajectory& a, const Trajectory& b) {
    require_traj(a, 2, "procrustes_error");
    require_traj(b, 2, "procrustes_error");
    if (a.front().numel() != b.front().numel())
        throw std::invalid_argument("procrustes_error: state dimensions differ");
    std::int64_t points = static_cast<std::int64_t>(std::max(a.size(), b.size()));
    Eigen::MatrixXd A = resample_trajectory(a, points);
    Eigen::MatrixXd B = resample_trajectory(b, points);

    Eigen::MatrixXd M = A.transpose() * B;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd Q = svd.matrixU() * svd.matrixV().transpose();
    double a_sq = A.squaredNorm();
    double s = (a_sq > 0.0) ? svd.singularValues().sum() / a_sq : 0.0;
    double denom = std::max(B.norm(), 1e-12);
    return (s * A * Q - B).norm() / denom;
}

double calibration_ece(const Tensor& logits, const std::vector<std::int64_t>& labels, std::int64_t bins) {
    if (logits.shape.size() != 2 || logits.rows() < 1)
        throw std::invalid_argument("calibration_ece: empty input");
    if (static_cast<std::int64_t>(labels.size()) != logits.rows())
        throw std::invalid_argument("calibration_ece: label count mismatch");
    if (bins < 1) throw std::invalid_argument("calibration_ece: bins must be >= 1");

    std::int64_t n = logits.rows(), c = logits.cols();
    std::vector<double> bin_conf(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bin_acc(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bin_n(static_cast<std::size_t>(bins), 0.0);
    for (std::int64_t r = 0; r < n; ++r) {
        double mx = logits.at(r, 0);
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(r, j));
        double z = 0.0;
        for (std::int64_t j = 0; j < c; ++j) z += std::exp(logits.at(r, j) - mx);
        double best_p = 0.0;
        std::int64_t best_j = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            double p = std::exp(logits.at(r, j) - mx) / z;
            if (p > best_p) {
                best_p = p;
                best_j = j;
            }
        }
        auto bin = static_cast<std::int64_t>(best_p * static_cast<double>(bins));
        bin = std::min(bin, bins - 1);
        bin_conf[static_cast<std::size_t>(bin)] += best_p;
        bin_acc[static_cast<std::size_t>(bin)] += (best_j == labels[static_cast<std::size_t>(r)]) ? 1.0 : 0.0;
        bin_n[static_cast<std::size_t>(bin)] += 1.0;
    }
    double ece = 0.0;
    for (std::int64_t b = 0; b < bins; ++b) {
        auto bi = static_cast<std::size_t>(b);
        if (bin_n[bi] == 0.0) continue;
        ece += (bin_n[bi] / static_cast<double>(n)) * std::abs(bin_acc[bi] / bin_n[bi] - bin_conf[bi] / bin_n[bi]);
    }
    return ece;
}

namespace {

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    std::size_t n = xs.size();
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw std::invalid_argument("correlations: zero variance input");
    return sxy / std::sqrt(sxx * syy);
}

double t_approx_p(double r, std::size_t n) {
    double df = static_cast<double>(n) - 2.0;
    double denom = std::max(1.0 - r * r, 1e-15);
    double t = std::abs(r) * std::sqrt(df / denom);
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
    std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace

Correlations correlations(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("correlations: length mismatch");
    if (xs.size() < 3) throw std::invalid_argument("correlations: need at least 3 points");
    std::size_t n = xs.size();

    Correlations out;
    out.pearson_r = pearson(xs, ys);
    out.pearson_p = t_approx_p(out.pearson_r, n);

    std::vector<double> rx = ranks_with_ties(xs);
    std::vector<double> ry = ranks_with_ties(ys);
    out.spearman_rho = pearson(rx, ry);

    if (n <= 10) {
        // exact permutation distribution of the rank correlation
        std::vector<double> perm = ry;
        std::sort(perm.begin(), perm.end());
        std::int64_t total = 0, extreme = 0;
        double target = std::abs(out.spearman_rho) - 1e-12;
        do {
            double rho = pearson(rx, perm);
            if (std::abs(rho) >= target) ++extreme;
            ++total;
        } while (std::next_permutation(perm.begin(), perm.end()));
        out.spearman_p = static_cast<double>(extreme) / static_cast<double>(total);
    } else {
        out.spearman_p = t_approx_p(out.spearman_rho, n);
    }
    return out;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
    if (v.has_value()) return *v;
    return nullptr;
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

}  // namespace

std::string FieldReport::to_json() const {
    nlohmann::json j;
    j["len"] = opt_json(len);
    j["norm_path"] = opt_json(norm_path);
    j["norm_path_is_reconstruction"] = true;
    j["curvature"] = opt_json(curvature);
    j["vel_align"] = opt_json(vel_align);
    j["path_sens_hidden"] = opt_json(path_sens_hidden);
    j["path_sens_logit"] = opt_json(path_sens_logit);
    j["solver_err"] = opt_json(solver_err);
    j["jac_wdist"] = opt_json(jac_wdist);
    j["frs"] = opt_json(frs);
    j["jrs"] = opt_json(jrs);
    j["spectral_entropy"] = spectral_entropy;
    return j.dump(2);
}

FieldReport FieldReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    FieldReport r;
    r.len = opt_from(j, "len");
    r.norm_path = opt_from(j, "norm_path");
    r.curvature = opt_from(j, "curvature");
    r.vel_align = opt_from(j, "vel_align");
    r.path_sens_hidden = opt_from(j, "path_sens_hidden");
    r.path_sens_logit = opt_from(j, "path_sens_logit");
    r.solver_err = opt_from(j, "solver_err");
    r.jac_wdist = opt_from(j, "jac_wdist");
    r.frs = opt_from(j, "frs");
    r.jrs = opt_from(j, "jrs");
    if (j.contains("spectral_entropy")) r.spectral_entropy = j.at("spectral_entropy").get<std::vector<double>>();
    return r;
}

FieldReport report_for(const netzoo::FieldModel& m, const Tensor& x, std::int64_t spectrum_k, Rng& rng) {
    auto fwd = m.forward_with_trajectory(x);
    double len_acc = 0.0, curv_acc = 0.0, align_acc = 0.0, npath_acc = 0.0;
    std::int64_t n = x.rows();
    bool has_curv = fwd.states.size() >= 3;
    for (std::int64_t r = 0; r < n; ++r) {
        Trajectory t = row_trajectory(fwd.states, r);
        len_acc += path_length(t);
        npath_acc += norm_path(t);
        if (has_curv) {
            curv_acc += curvature(t);
            align_acc += velocity_alignment(t);
        }
    }
    FieldReport rep;
    rep.len = len_acc / static_cast<double>(n);
    rep.norm_path = npath_acc / static_cast<double>(n);
    if (has_curv) {
        rep.curvature = curv_acc / static_cast<double>(n);
        rep.vel_align = align_acc / static_cast<double>(n);
    }

    std::int64_t k = std::min<std::int64_t>(spectrum_k, m.state_dim());
    if (k >= 1 && m.depth() >= 1) {
        std::int64_t probe_rows = std::min<std::int64_t>(n, 4);
        std::vector<std::vector<double>> layer_spectra;
        for (std::int64_t l = 0; l < m.depth(); ++l) {
            std::vector<double> mean_spec(static_cast<std::size_t>(k), 0.0);
            for (std::int64_t r = 0; r < probe_rows; ++r) {
                Rng sub = rng.split(static_cast<std::uint64_t>(l * 1000 + r));
                Tensor xr = Tensor::zeros({1, x.cols()});
                for (std::int64_t c = 0; c < x.cols(); ++c) xr.at(0, c) = x.at(r, c);
                auto spec = jacobian_spectrum(m, xr, l, k, sub);
                for (std::size_t i = 0; i < spec.size(); ++i) mean_spec[i] += spec[i];
            }
            for (auto& s : mean_spec) s /= static_cast<double>(probe_rows);
            layer_spectra.push_back(mean_spec);
            rep.spectral_entropy.push_back(spectral_entropy(mean_spec));
        }
        if (layer_spectra.size() >= 2) {
            double wacc = 0.0;
            for (std::size_t l = 1; l < layer_spectra.size(); ++l)
                wacc += jac_wasserstein(layer_spectra[l - 1], layer_spectra[l]);
            rep.jac_wdist = wacc / static_cast<double>(layer_spectra.size() - 1);
        }
    }
    return rep;
}

}  // namespace fieldlab::fieldmetrics
