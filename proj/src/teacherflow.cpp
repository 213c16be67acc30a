#include "fieldlab/teacherflow.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

namespace fieldlab::teacherflow {

using ad::Dual;
using ad::Tape;
using ad::Var;

void TeacherSpec::validate() const {
    if (latent_dim < 1) throw std::invalid_argument("teacher spec: latent_dim >= 1");
    if (sample_times < 2) throw std::invalid_argument("teacher spec: needs K >= 2 sample times");
    if (!(horizon > 0.0)) throw std::invalid_argument("teacher spec: horizon must be positive");
    if (!std::isfinite(omega) || !std::isfinite(contraction) || !std::isfinite(gain))
        throw std::invalid_argument("teacher spec: rates must be finite");
    if (obs_dim < latent_dim) throw std::invalid_argument("teacher spec: obs_dim >= latent_dim");
    if (fine_substeps < 1) throw std::invalid_argument("teacher spec: fine_substeps >= 1");
}

const char* task_name(TaskKind t) { return t == TaskKind::A ? "A" : "B"; }

TaskKind task_from_string(const std::string& s) {
    if (s == "A") return TaskKind::A;
    if (s == "B") return TaskKind::B;
    throw std::invalid_argument("unknown teacher task '" + s + "'");
}

Tensor teacher_field(const Tensor& z, double /*t*/, const TeacherSpec& spec) {
    Tensor out = Tensor::zeros(z.shape);
    std::int64_t n = z.cols();
    for (std::int64_t r = 0; r < z.rows(); ++r) {
        for (std::int64_t c = 0; c + 1 < n; c += 2) {
            out.at(r, c) = -spec.omega * z.at(r, c + 1);
            out.at(r, c + 1) = spec.omega * z.at(r, c);
        }
        for (std::int64_t c = 0; c < n; ++c)
            out.at(r, c) += -spec.contraction * z.at(r, c) + spec.gain * std::tanh(z.at(r, c));
    }
    return out;
}

Tensor invert_observation(const Tensor& x, const Tensor& lift) {
    std::int64_t n = lift.rows(), D = lift.cols();
    if (x.cols() != D) throw std::invalid_argument("invert_observation: width mismatch");
    Eigen::MatrixXd L(n, D);
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < D; ++c) L(r, c) = lift.at(r, c);
    // atanh(x) = z0 . L  =>  solve L^T z0^T = atanh(x)^T by least squares
    Eigen::MatrixXd rhs(D, x.rows());
    for (std::int64_t r = 0; r < x.rows(); ++r)
        for (std::int64_t c = 0; c < D; ++c) {
            double v = std::max(-1.0 + 1e-15, std::min(1.0 - 1e-15, x.at(r, c)));
            rhs(c, r) = std::atanh(v);
        }
    Eigen::MatrixXd sol = L.transpose().colPivHouseholderQr().solve(rhs);  // [n x N]
    Tensor out = Tensor::zeros({x.rows(), n});
    for (std::int64_t r = 0; r < x.rows(); ++r)
        for (std::int64_t c = 0; c < n; ++c) out.at(r, c) = sol(c, r);
    return out;
}

TeacherDataset generate_dataset(const TeacherSpec& spec, std::int64_t count, TaskKind task,
                                double lambda, Rng& rng) {
    spec.validate();
    if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("generate_dataset: lambda must be in [0, 1]");

    std::int64_t n = spec.latent_dim, D = spec.obs_dim, K = spec.sample_times;

    TeacherDataset ds;
    ds.spec = spec;
    ds.task = task;
    ds.lambda = lambda;

    Rng obs_rng = Rng(spec.obs_seed).split("observation");
    // mild saturation: strongly nonlinear lifts put the exact inverse out of
    // reach of the models' linear encoders and floor every trajectory metric
    ds.lift = obs_rng.normal_tensor({n, D}, 0.5 / std::sqrt(static_cast<double>(n)));
    Rng label_rng = rng.split("label");
    ds.label_dir = label_rng.normal_tensor({n});
    double wn = norm2(ds.label_dir);
    for (auto& v : ds.label_dir.data) v /= wn;

    Rng z_rng = rng.split("z0");
    ds.z0 = z_rng.normal_tensor({count, n});

    // observations
    ds.x = Tensor::zeros({count, D});
    for (std::int64_t r = 0; r < count; ++r)
        for (std::int64_t c = 0; c < D; ++c) {
            double arg = 0.0;
            for (std::int64_t j = 0; j < n; ++j) arg += ds.z0.at(r, j) * ds.lift.at(j, c);
            ds.x.at(r, c) = std::tanh(arg);
        }
    // the lift must be invertible on the data range to numerical precision
    Tensor rec = invert_observation(ds.x, ds.lift);
    for (std::int64_t r = 0; r < count; ++r)
        if (norm2(sub(rec.row_at(r), ds.z0.row_at(r))) > 1e-8)
            throw std::runtime_error("generate_dataset: observation map failed the inversion check");

    // fine integration with winding accumulation
    auto field = [&](const Tensor& z, double t) { return teacher_field(z, t, spec); };
    double dt_fine = spec.horizon / static_cast<double>(K * spec.fine_substeps);
    Tensor cur = ds.z0;
    ds.traj.push_back(cur);
    ds.winding.assign(static_cast<std::size_t>(count), 0.0);
    std::vector<double> theta_prev(static_cast<std::size_t>(count));
    for (std::int64_t r = 0; r < count; ++r)
        theta_prev[static_cast<std::size_t>(r)] = std::atan2(cur.at(r, 1 % n), cur.at(r, 0));
    double t = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
        for (std::int64_t s = 0; s < spec.fine_substeps; ++s) {
            cur = odesolve::step_once(field, cur, t, dt_fine, odesolve::Method::rk4);
            t += dt_fine;
            for (std::int64_t r = 0; r < count; ++r) {
                double th = std::atan2(cur.at(r, 1 % n), cur.at(r, 0));
                double dth = th - theta_prev[static_cast<std::size_t>(r)];
                while (dth > M_PI) dth -= 2.0 * M_PI;
                while (dth < -M_PI) dth += 2.0 * M_PI;
                ds.winding[static_cast<std::size_t>(r)] += dth;
                theta_prev[static_cast<std::size_t>(r)] = th;
            }
        }
        ds.traj.push_back(cur);
    }
    for (auto& w : ds.winding) w /= spec.horizon;  // mean angular velocity

    for (std::int64_t k = 0; k <= K; ++k)
        ds.deriv.push_back(teacher_field(ds.traj[static_cast<std::size_t>(k)], ds.sample_time(k), spec));

    // labels
    const Tensor& zT = ds.traj.back();
    for (std::int64_t r = 0; r < count; ++r) {
        double endpoint_score = 0.0;
        for (std::int64_t j = 0; j < n; ++j) endpoint_score += ds.label_dir.at(j) * zT.at(r, j);
        double score = endpoint_score;
        if (task == TaskKind::B)
            score = (1.0 - lambda) * endpoint_score + lambda * ds.winding[static_cast<std::size_t>(r)];
        ds.labels.push_back(score > 0.0 ? 1 : 0);
    }
    return ds;
}

std::string dataset_to_jsonl(const TeacherDataset& ds) {
    std::ostringstream out;
    nlohmann::json header;
    header["record"] = "teacher-spec";
    header["latent_dim"] = ds.spec.latent_dim;
    header["omega"] = ds.spec.omega;
    header["contraction"] = ds.spec.contraction;
    header["gain"] = ds.spec.gain;
    header["horizon"] = ds.spec.horizon;
    header["sample_times"] = ds.spec.sample_times;
    header["obs_dim"] = ds.spec.obs_dim;
    header["obs_seed"] = ds.spec.obs_seed;
    header["fine_substeps"] = ds.spec.fine_substeps;
    header["task"] = task_name(ds.task);
    header["lambda"] = ds.lambda;
    header["lift"] = ds.lift.data;
    header["label_dir"] = ds.label_dir.data;
    out << header.dump() << "\n";
    for (std::int64_t r = 0; r < ds.size(); ++r) {
        nlohmann::json j;
        j["z0"] = ds.z0.row_at(r).data;
        nlohmann::json traj = nlohmann::json::array(), deriv = nlohmann::json::array();
        for (const auto& zk : ds.traj) traj.push_back(zk.row_at(r).data);
        for (const auto& dk : ds.deriv) deriv.push_back(dk.row_at(r).data);
        j["trajectory"] = traj;
        j["derivatives"] = deriv;
        j["x"] = ds.x.row_at(r).data;
        j["label"] = ds.labels[static_cast<std::size_t>(r)];
        j["lambda"] = ds.lambda;
        j["winding"] = ds.winding[static_cast<std::size_t>(r)];
        out << j.dump() << "\n";
    }
    return out.str();
}

TeacherDataset dataset_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("teacher dataset: empty input");
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("record", "") != "teacher-spec")
        throw std::invalid_argument("teacher dataset: missing spec header");

    TeacherDataset ds;
    ds.spec.latent_dim = header.at("latent_dim").get<std::int64_t>();
    ds.spec.omega = header.at("omega").get<double>();
    ds.spec.contraction = header.at("contraction").get<double>();
    ds.spec.gain = header.at("gain").get<double>();
    ds.spec.horizon = header.at("horizon").get<double>();
    ds.spec.sample_times = header.at("sample_times").get<std::int64_t>();
    ds.spec.obs_dim = header.at("obs_dim").get<std::int64_t>();
    ds.spec.obs_seed = header.at("obs_seed").get<std::uint64_t>();
    ds.spec.fine_substeps = header.at("fine_substeps").get<std::int64_t>();
    ds.task = task_from_string(header.at("task").get<std::string>());
    ds.lambda = header.at("lambda").get<double>();
    std::int64_t n = ds.spec.latent_dim, D = ds.spec.obs_dim, K = ds.spec.sample_times;
    ds.lift = Tensor({n, D}, header.at("lift").get<std::vector<double>>());
    ds.label_dir = Tensor({n}, header.at("label_dir").get<std::vector<double>>());

    std::vector<std::vector<double>> traj_rows(static_cast<std::size_t>(K + 1));
    std::vector<std::vector<double>> deriv_rows(static_cast<std::size_t>(K + 1));
    std::vector<double> xs, z0s;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        auto z0 = j.at("z0").get<std::vector<double>>();
        z0s.insert(z0s.end(), z0.begin(), z0.end());
        auto xv = j.at("x").get<std::vector<double>>();
        xs.insert(xs.end(), xv.begin(), xv.end());
        const auto& traj = j.at("trajectory");
        const auto& deriv = j.at("derivatives");
        for (std::int64_t k = 0; k <= K; ++k) {
            auto tk = traj.at(static_cast<std::size_t>(k)).get<std::vector<double>>();
            auto dk = deriv.at(static_cast<std::size_t>(k)).get<std::vector<double>>();
            auto& tr = traj_rows[static_cast<std::size_t>(k)];
            auto& dr = deriv_rows[static_cast<std::size_t>(k)];
            tr.insert(tr.end(), tk.begin(), tk.end());
            dr.insert(dr.end(), dk.begin(), dk.end());
        }
        ds.labels.push_back(j.at("label").get<std::int64_t>());
        ds.winding.push_back(j.at("winding").get<double>());
    }
    auto count = static_cast<std::int64_t>(ds.labels.size());
    ds.z0 = Tensor({count, n}, std::move(z0s));
    ds.x = Tensor({count, D}, std::move(xs));
    for (std::int64_t k = 0; k <= K; ++k) {
        ds.traj.emplace_back(Shape{count, n}, std::move(traj_rows[static_cast<std::size_t>(k)]));
        ds.deriv.emplace_back(Shape{count, n}, std::move(deriv_rows[static_cast<std::size_t>(k)]));
    }
    return ds;
}

std::pair<TeacherDataset, TeacherDataset> split_rows(const TeacherDataset& ds, std::int64_t first) {
    if (first < 1 || first >= ds.size())
        throw std::invalid_argument("split_rows: split point outside (0, size)");
    auto take = [&](std::int64_t lo, std::int64_t hi) {
        TeacherDataset out;
        out.spec = ds.spec;
        out.task = ds.task;
        out.lambda = ds.lambda;
        out.lift = ds.lift;
        out.label_dir = ds.label_dir;
        std::int64_t n = ds.spec.latent_dim, D = ds.spec.obs_dim;
        std::int64_t count = hi - lo;
        out.x = Tensor::zeros({count, D});
        out.z0 = Tensor::zeros({count, n});
        for (std::int64_t r = 0; r < count; ++r) {
            for (std::int64_t c = 0; c < D; ++c) out.x.at(r, c) = ds.x.at(lo + r, c);
            for (std::int64_t c = 0; c < n; ++c) out.z0.at(r, c) = ds.z0.at(lo + r, c);
            out.labels.push_back(ds.labels[static_cast<std::size_t>(lo + r)]);
            out.winding.push_back(ds.winding[static_cast<std::size_t>(lo + r)]);
        }
        for (const auto& zk : ds.traj) {
            Tensor t = Tensor::zeros({count, n});
            for (std::int64_t r = 0; r < count; ++r)
                for (std::int64_t c = 0; c < n; ++c) t.at(r, c) = zk.at(lo + r, c);
            out.traj.push_back(std::move(t));
        }
        for (const auto& dk : ds.deriv) {
            Tensor t = Tensor::zeros({count, n});
            for (std::int64_t r = 0; r < count; ++r)
                for (std::int64_t c = 0; c < n; ++c) t.at(r, c) = dk.at(lo + r, c);
            out.deriv.push_back(std::move(t));
        }
        return out;
    };
    return {take(0, first), take(first, ds.size())};
}

// ---------------------------------------------------------------------------

LatentFlowModel LatentFlowModel::create(const FlowModelConfig& cfg, Rng& init_rng) {
    if (cfg.obs_dim < 1 || cfg.latent_dim < 1 || cfg.classes < 2)
        throw std::invalid_argument("flow model config out of range");
    cfg.solver.validate();
    LatentFlowModel m;
    m.cfg_ = cfg;
    std::int64_t n = cfg.latent_dim, w = cfg.field_width;
    m.layout_.add("enc.W", {cfg.obs_dim, n});
    m.layout_.add("enc.b", {n});
    m.layout_.add("field.W1", {n + 1, w});
    m.layout_.add("field.b1", {w});
    m.layout_.add("field.W2", {w, n});
    m.layout_.add("field.b2", {n});
    m.layout_.add("head.W", {n, cfg.classes});
    m.layout_.add("head.b", {cfg.classes});
    m.theta_.assign(static_cast<std::size_t>(m.layout_.total()), 0.0);
    for (const char* wname : {"enc.W", "field.W1", "field.W2", "head.W"}) {
        const Shape& ws = m.layout_.shape(wname);
        double std = 1.0 / std::sqrt(static_cast<double>(ws[0]));
        std::int64_t off = m.layout_.offset(wname);
        for (std::int64_t i = 0; i < shape_numel(ws); ++i)
            m.theta_[static_cast<std::size_t>(off + i)] = std * init_rng.normal();
    }
    return m;
}

Var LatentFlowModel::field_on_tape(netzoo::TapeCtx& ctx, Var z, double t) const {
    Tape& tp = ctx.tp;
    Var zt = tp.concat_cols({z, tp.constant(Tensor::full({z.shape()[0], 1}, t))});
    Var h = tp.tanh(tp.add_rowvec(tp.matmul(zt, ctx.p("field.W1")), ctx.p("field.b1")));
    return tp.add_rowvec(tp.matmul(h, ctx.p("field.W2")), ctx.p("field.b2"));
}

LatentFlowModel::Trace LatentFlowModel::trace(Tape& tp, const Tensor& x,
                                              const odesolve::SolverSpec& spec) const {
    if (x.shape.size() != 2 || x.cols() != cfg_.obs_dim)
        throw std::invalid_argument("trace: input must be [B x obs_dim]");
    netzoo::TapeCtx ctx{tp, theta_, layout_, {}};
    Var z0 = tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b"));
    auto states = odesolve::integrate(
        [&](Var z, double t) { return field_on_tape(ctx, z, t); }, z0, spec);
    Trace out;
    out.states = std::move(states);
    out.logits = tp.add_rowvec(tp.matmul(out.states.back(), ctx.p("head.W")), ctx.p("head.b"));
    return out;
}

LatentFlowModel::Forward LatentFlowModel::forward(const Tensor& x, const odesolve::SolverSpec& spec) const {
    Tape tp;
    Trace tr = trace(tp, x, spec);
    Forward f;
    for (Var s : tr.states) f.states.push_back(tp.value(s));
    f.logits = tp.value(tr.logits);
    return f;
}

Tensor LatentFlowModel::encode(const Tensor& x) const {
    Tape tp;
    netzoo::TapeCtx ctx{tp, theta_, layout_, {}};
    return tp.value(tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b")));
}

Tensor LatentFlowModel::field_value(const Tensor& z, double t) const {
    Tape tp;
    netzoo::TapeCtx ctx{tp, theta_, layout_, {}};
    return tp.value(field_on_tape(ctx, tp.constant(z), t));
}

Tensor LatentFlowModel::head_value(const Tensor& z_final) const {
    Tape tp;
    netzoo::TapeCtx ctx{tp, theta_, layout_, {}};
    return tp.value(tp.add_rowvec(tp.matmul(tp.constant(z_final), ctx.p("head.W")), ctx.p("head.b")));
}

RecoveryMetrics evaluate_field_recovery(const LatentFlowModel& m, const TeacherDataset& ds,
                                        const std::function<Tensor(const Tensor&)>& encode_override) {
    if (m.config().latent_dim != ds.spec.latent_dim)
        throw std::invalid_argument("evaluate_field_recovery: model/teacher latent dimensions differ");
    const odesolve::SolverSpec& spec = m.config().solver;
    std::int64_t K = ds.spec.sample_times;
    if (spec.steps % K != 0)
        throw std::invalid_argument("evaluate_field_recovery: solver steps must be a multiple of K");
    std::int64_t stride = spec.steps / K;

    Tensor z0 = encode_override ? encode_override(ds.x) : m.encode(ds.x);
    auto states = odesolve::integrate(
        [&](const Tensor& z, double t) { return m.field_value(z, t); }, z0, spec);

    RecoveryMetrics out;
    std::int64_t n = ds.spec.latent_dim, N = ds.size();

    double traj_acc = 0.0;
    for (std::int64_t k = 0; k <= K; ++k) {
        const Tensor& pred = states[static_cast<std::size_t>(k * stride)];
        const Tensor& truth = ds.traj[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            double d = pred.data[i] - truth.data[i];
            traj_acc += d * d;
        }
    }
    out.traj_rmse = std::sqrt(traj_acc / static_cast<double>((K + 1) * N * n));

    double deriv_acc = 0.0;
    for (std::int64_t k = 0; k <= K; ++k) {
        Tensor fp = m.field_value(ds.traj[static_cast<std::size_t>(k)], ds.sample_time(k));
        const Tensor& ft = ds.deriv[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < fp.data.size(); ++i) {
            double d = fp.data[i] - ft.data[i];
            deriv_acc += d * d;
        }
    }
    out.deriv_rmse = std::sqrt(deriv_acc / static_cast<double>((K + 1) * N * n));

    // reparameterization: same field, doubled step count
    odesolve::SolverSpec fine = spec;
    fine.steps *= 2;
    auto states_fine = odesolve::integrate(
        [&](const Tensor& z, double t) { return m.field_value(z, t); }, z0, fine);
    Tensor logits = m.head_value(states.back());
    Tensor logits_fine = m.head_value(states_fine.back());
    double rep = 0.0;
    for (std::int64_t r = 0; r < N; ++r) {
        rep += norm2(sub(states.back().row_at(r), states_fine.back().row_at(r)));
        rep += norm2(sub(logits.row_at(r), logits_fine.row_at(r)));
    }
    out.reparam_consistency = rep / static_cast<double>(N);

    out.accuracy = netzoo::accuracy(logits, ds.labels);
    return out;
}

}  // namespace fieldlab::teacherflow
