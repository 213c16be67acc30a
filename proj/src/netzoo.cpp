#include "fieldlab/netzoo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace fieldlab::netzoo {

using ad::Dual;
using ad::Var;

const char* family_name(Family f) {
    switch (f) {
        case Family::endpoint: return "endpoint";
        case Family::timecond: return "timecond";
        case Family::sharedfield: return "sharedfield";
        case Family::continuous: return "continuous";
        case Family::residual: return "residual";
        case Family::hybrid: return "hybrid";
    }
    return "?";
}

Family family_from_string(const std::string& s) {
    for (Family f : {Family::endpoint, Family::timecond, Family::sharedfield, Family::continuous,
                     Family::residual, Family::hybrid})
        if (s == family_name(f)) return f;
    throw std::invalid_argument("unknown model family '" + s + "'");
}

void ModelConfig::validate() const {
    if (input_dim < 1 || hidden_dim < 1 || classes < 2)
        throw std::invalid_argument("model config: input_dim/hidden_dim/classes out of range");
    if (family != Family::endpoint && family != Family::continuous && depth < 1)
        throw std::invalid_argument("model config: depth must be >= 1");
    if (family == Family::continuous) solver.validate();
}

std::int64_t ParamLayout::add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::invalid_argument("param layout: duplicate name " + name);
    std::int64_t off = total_;
    total_ += shape_numel(shape);
    index_[name] = Entry{off, std::move(shape)};
    names_.push_back(name);
    return off;
}

std::int64_t ParamLayout::offset(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("param layout: unknown name " + name);
    return it->second.offset;
}

const Shape& ParamLayout::shape(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("param layout: unknown name " + name);
    return it->second.shape;
}

Tensor orthonormal_projection(std::int64_t rows, std::int64_t cols, Rng& rng) {
    if (rows > cols) throw std::invalid_argument("orthonormal_projection: rows must be <= cols");
    Tensor q = Tensor::zeros({rows, cols});
    for (std::int64_t r = 0; r < rows; ++r) {
        Tensor v = rng.normal_tensor({cols});
        for (std::int64_t prev = 0; prev < r; ++prev) {
            double proj = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) proj += v.at(c) * q.at(prev, c);
            for (std::int64_t c = 0; c < cols; ++c) v.at(c) -= proj * q.at(prev, c);
        }
        double nrm = norm2(v);
        if (nrm < 1e-12) throw std::runtime_error("orthonormal_projection: degenerate draw");
        for (std::int64_t c = 0; c < cols; ++c) q.at(r, c) = v.at(c) / nrm;
    }
    return q;
}

Var TapeCtx::p(const std::string& name) {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    Var v = tp.param(std::span<const double>(theta.data(), theta.size()), layout.offset(name),
                     layout.shape(name));
    cache.emplace(name, v);
    return v;
}

// ---------------------------------------------------------------------------

namespace {

void init_linear(std::vector<double>& theta, const ParamLayout& lay, const std::string& w,
                 const std::string& b, Rng& rng) {
    const Shape& ws = lay.shape(w);
    double std = 1.0 / std::sqrt(static_cast<double>(ws[0]));
    std::int64_t off = lay.offset(w);
    for (std::int64_t i = 0; i < shape_numel(ws); ++i)
        theta[static_cast<std::size_t>(off + i)] = std * rng.normal();
    // biases stay zero
    (void)b;
}

Var mlp2(TapeCtx& ctx, Var in, const std::string& prefix) {
    ad::Tape& tp = ctx.tp;
    Var z = tp.add_rowvec(tp.matmul(in, ctx.p(prefix + ".W1")), ctx.p(prefix + ".b1"));
    z = tp.tanh(z);
    return tp.add_rowvec(tp.matmul(z, ctx.p(prefix + ".W2")), ctx.p(prefix + ".b2"));
}

Dual mlp2(TapeCtx& ctx, Dual in, const std::string& prefix) {
    Dual z = ad::dadd_rowvec(ad::dmatmul(in, ctx.p(prefix + ".W1")), ctx.p(prefix + ".b1"));
    z = ad::dtanh(z);
    return ad::dadd_rowvec(ad::dmatmul(z, ctx.p(prefix + ".W2")), ctx.p(prefix + ".b2"));
}

Var time_col(ad::Tape& tp, std::int64_t rows, double t) {
    return tp.constant(Tensor::full({rows, 1}, t));
}

}  // namespace

std::int64_t FieldModel::depth() const {
    switch (cfg_.family) {
        case Family::endpoint: return 1;
        case Family::continuous: return cfg_.solver.steps;
        default: return cfg_.depth;
    }
}

void FieldModel::build_layout() {
    std::int64_t d = cfg_.hidden_dim, m = cfg_.width();
    layout_ = ParamLayout{};
    layout_.add("enc.W", {cfg_.input_dim, d});
    layout_.add("enc.b", {d});
    switch (cfg_.family) {
        case Family::endpoint:
            layout_.add("block.W1", {d, d});
            layout_.add("block.b1", {d});
            break;
        case Family::sharedfield:
        case Family::hybrid:
            layout_.add("field.W1", {d, m});
            layout_.add("field.b1", {m});
            layout_.add("field.W2", {m, d});
            layout_.add("field.b2", {d});
            break;
        case Family::timecond:
        case Family::continuous:
            layout_.add("field.W1", {d + 1, m});
            layout_.add("field.b1", {m});
            layout_.add("field.W2", {m, d});
            layout_.add("field.b2", {d});
            break;
        case Family::residual:
            for (std::int64_t l = 0; l < cfg_.depth; ++l) {
                std::string pre = "block" + std::to_string(l);
                layout_.add(pre + ".W1", {d, m});
                layout_.add(pre + ".b1", {m});
                layout_.add(pre + ".W2", {m, d});
                layout_.add(pre + ".b2", {d});
            }
            break;
    }
    if (cfg_.family == Family::hybrid) {
        for (std::int64_t l = 0; l < cfg_.depth; ++l) {
            std::string pre = "corr" + std::to_string(l);
            layout_.add(pre + ".a", {d});
            layout_.add(pre + ".c", {d});
        }
    }
    layout_.add("head.W", {d, cfg_.classes});
    layout_.add("head.b", {cfg_.classes});
}

FieldModel FieldModel::create(const ModelConfig& cfg, Rng& init_rng) {
    cfg.validate();
    FieldModel m;
    m.cfg_ = cfg;
    m.build_layout();
    m.theta_.assign(static_cast<std::size_t>(m.layout_.total()), 0.0);
    init_linear(m.theta_, m.layout_, "enc.W", "enc.b", init_rng);
    for (const auto& name : m.layout_.names()) {
        if (name.size() > 3 && name.substr(name.size() - 3) == ".W1")
            init_linear(m.theta_, m.layout_, name, "", init_rng);
        else if (name.size() > 3 && name.substr(name.size() - 3) == ".W2")
            init_linear(m.theta_, m.layout_, name, "", init_rng);
    }
    init_linear(m.theta_, m.layout_, "head.W", "head.b", init_rng);
    // hybrid correction gains/offsets start at zero: the hybrid flow is born
    // as a pure shared field and learns its per-layer corrections.
    return m;
}

Var FieldModel::field_eval(TapeCtx& ctx, Var h, double t, const std::string& prefix) const {
    if (cfg_.family == Family::timecond || cfg_.family == Family::continuous) {
        Var ht = ctx.tp.concat_cols({h, time_col(ctx.tp, h.shape()[0], t)});
        return mlp2(ctx, ht, prefix);
    }
    return mlp2(ctx, h, prefix);
}

Dual FieldModel::field_eval(TapeCtx& ctx, Dual h, double t, const std::string& prefix) const {
    if (cfg_.family == Family::timecond || cfg_.family == Family::continuous) {
        Dual ht = ad::dconcat_cols(h, time_col(ctx.tp, h.v.shape()[0], t));
        return mlp2(ctx, ht, prefix);
    }
    return mlp2(ctx, h, prefix);
}

Var FieldModel::step(TapeCtx& ctx, Var h, std::int64_t layer) const {
    ad::Tape& tp = ctx.tp;
    double dt = cfg_.horizon / static_cast<double>(depth());
    double t = dt * static_cast<double>(layer);
    switch (cfg_.family) {
        case Family::endpoint:
            return tp.tanh(tp.add_rowvec(tp.matmul(h, ctx.p("block.W1")), ctx.p("block.b1")));
        case Family::sharedfield:
        case Family::timecond:
            return odesolve::step_once([&](Var s, double tt) { return field_eval(ctx, s, tt, "field"); },
                                       h, t, dt, odesolve::Method::euler);
        case Family::residual:
            return tp.add(h, mlp2(ctx, h, "block" + std::to_string(layer)));
        case Family::hybrid: {
            Var base = odesolve::step_once(
                [&](Var s, double tt) { return field_eval(ctx, s, tt, "field"); }, h, t, dt,
                odesolve::Method::euler);
            std::string pre = "corr" + std::to_string(layer);
            Var corr = tp.add_rowvec(tp.mul_rowvec(h, ctx.p(pre + ".a")), ctx.p(pre + ".c"));
            return tp.add(base, corr);
        }
        case Family::continuous: {
            odesolve::SolverSpec s = cfg_.solver;
            double sdt = s.dt();
            return odesolve::step_once(
                [&](Var st, double tt) { return field_eval(ctx, st, tt, "field"); }, h,
                s.t0 + sdt * static_cast<double>(layer), sdt, s.method);
        }
    }
    throw std::logic_error("unreachable family");
}

Dual FieldModel::dual_step(TapeCtx& ctx, Dual h, std::int64_t layer) const {
    double dt = cfg_.horizon / static_cast<double>(depth());
    double t = dt * static_cast<double>(layer);
    switch (cfg_.family) {
        case Family::endpoint: {
            Dual z = ad::dadd_rowvec(ad::dmatmul(h, ctx.p("block.W1")), ctx.p("block.b1"));
            return ad::dtanh(z);
        }
        case Family::sharedfield:
        case Family::timecond:
            return odesolve::step_once([&](Dual s, double tt) { return field_eval(ctx, s, tt, "field"); },
                                       h, t, dt, odesolve::Method::euler);
        case Family::residual:
            return ad::dadd(h, mlp2(ctx, h, "block" + std::to_string(layer)));
        case Family::hybrid: {
            Dual base = odesolve::step_once(
                [&](Dual s, double tt) { return field_eval(ctx, s, tt, "field"); }, h, t, dt,
                odesolve::Method::euler);
            std::string pre = "corr" + std::to_string(layer);
            Dual corr = ad::dadd_rowvec(ad::dmul_rowvec(h, ctx.p(pre + ".a")), ctx.p(pre + ".c"));
            return ad::dadd(base, corr);
        }
        case Family::continuous: {
            odesolve::SolverSpec s = cfg_.solver;
            double sdt = s.dt();
            return odesolve::step_once(
                [&](Dual st, double tt) { return field_eval(ctx, st, tt, "field"); }, h,
                s.t0 + sdt * static_cast<double>(layer), sdt, s.method);
        }
    }
    throw std::logic_error("unreachable family");
}

Var FieldModel::head(TapeCtx& ctx, Var h_final) const {
    return ctx.tp.add_rowvec(ctx.tp.matmul(h_final, ctx.p("head.W")), ctx.p("head.b"));
}

FieldModel::Trace FieldModel::trace(ad::Tape& tp, const Tensor& x) const {
    if (x.shape.size() != 2 || x.cols() != cfg_.input_dim)
        throw std::invalid_argument("trace: input must be [B x " + std::to_string(cfg_.input_dim) +
                                    "], got " + shape_str(x.shape));
    TapeCtx ctx{tp, theta_, layout_, {}};
    Var h = tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b"));
    Trace out;
    out.states.push_back(h);
    for (std::int64_t l = 0; l < depth(); ++l) {
        h = step(ctx, h, l);
        out.states.push_back(h);
    }
    out.logits = head(ctx, h);
    return out;
}

FieldModel::Trace FieldModel::trace(ad::Tape& tp, const Tensor& x,
                                    const odesolve::SolverSpec& spec) const {
    if (cfg_.family != Family::continuous)
        throw std::invalid_argument("solver override only applies to the continuous family");
    spec.validate();
    TapeCtx ctx{tp, theta_, layout_, {}};
    Var h0 = tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b"));
    auto states = odesolve::integrate(
        [&](Var s, double t) { return field_eval(ctx, s, t, "field"); }, h0, spec);
    Trace out;
    out.states = std::move(states);
    out.logits = head(ctx, out.states.back());
    return out;
}

FieldModel::Forward FieldModel::forward_with_trajectory(const Tensor& x) const {
    ad::Tape tp;
    Trace tr = trace(tp, x);
    Forward f;
    for (Var s : tr.states) f.states.push_back(tp.value(s));
    f.logits = tp.value(tr.logits);
    return f;
}

FieldModel::Forward FieldModel::forward_with_trajectory(const Tensor& x,
                                                        const odesolve::SolverSpec& spec) const {
    ad::Tape tp;
    Trace tr = trace(tp, x, spec);
    Forward f;
    for (Var s : tr.states) f.states.push_back(tp.value(s));
    f.logits = tp.value(tr.logits);
    return f;
}

Tensor FieldModel::encode(const Tensor& x) const {
    ad::Tape tp;
    TapeCtx ctx{tp, theta_, layout_, {}};
    Var h = tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b"));
    return tp.value(h);
}

Tensor FieldModel::field_value(const Tensor& h, double t) const {
    if (cfg_.family == Family::endpoint || cfg_.family == Family::residual)
        throw std::invalid_argument("field_value: family has no shared flow field");
    ad::Tape tp;
    TapeCtx ctx{tp, theta_, layout_, {}};
    return tp.value(field_eval(ctx, tp.constant(h), t, "field"));
}

Tensor FieldModel::layer_jvp(const Tensor& x, std::int64_t layer, const Tensor& v) const {
    if (layer < 0 || layer >= depth())
        throw std::invalid_argument("layer_jvp: layer " + std::to_string(layer) + " out of range [0, " +
                                    std::to_string(depth()) + ")");
    ad::Tape tp;
    TapeCtx ctx{tp, theta_, layout_, {}};
    Var h = tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b"));
    for (std::int64_t l = 0; l < layer; ++l) h = step(ctx, h, l);
    if (!tp.value(h).same_shape(v))
        throw std::invalid_argument("layer_jvp: probe shape " + shape_str(v.shape) +
                                    " does not match state " + shape_str(tp.value(h).shape));
    Dual dh{h, tp.constant(v)};
    Dual out = dual_step(ctx, dh, layer);
    return tp.value(out.t);
}

Tensor FieldModel::layer_vjp(const Tensor& x, std::int64_t layer, const Tensor& u) const {
    if (layer < 0 || layer >= depth())
        throw std::invalid_argument("layer_vjp: layer out of range");
    ad::Tape tp;
    TapeCtx ctx{tp, theta_, layout_, {}};
    Var h = tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b"));
    for (std::int64_t l = 0; l < layer; ++l) h = step(ctx, h, l);
    // re-root the state so the gradient of <step(h), u> lands on it
    Var h_leaf = tp.constant(tp.value(h));
    Var out = step(ctx, h_leaf, layer);
    if (!tp.value(out).same_shape(u)) throw std::invalid_argument("layer_vjp: adjoint shape mismatch");
    tp.backward(tp.dot(out, tp.constant(u)));
    return tp.grad_at(h_leaf);
}

Tensor FieldModel::accumulated_jvp(const Tensor& x, std::int64_t upto, const Tensor& v) const {
    if (upto < 0 || upto > depth())
        throw std::invalid_argument("accumulated_jvp: layer count out of range");
    ad::Tape tp;
    TapeCtx ctx{tp, theta_, layout_, {}};
    Var h = tp.add_rowvec(tp.matmul(tp.constant(x), ctx.p("enc.W")), ctx.p("enc.b"));
    if (!tp.value(h).same_shape(v))
        throw std::invalid_argument("accumulated_jvp: probe shape mismatch");
    Dual dh{h, tp.constant(v)};
    for (std::int64_t l = 0; l < upto; ++l) dh = dual_step(ctx, dh, l);
    return tp.value(dh.t);
}

std::string FieldModel::to_checkpoint_json() const {
    nlohmann::json j;
    j["version"] = "fieldlab-ckpt-1";
    j["config"] = {{"family", family_name(cfg_.family)},
                   {"input_dim", cfg_.input_dim},
                   {"hidden_dim", cfg_.hidden_dim},
                   {"field_width", cfg_.field_width},
                   {"depth", cfg_.depth},
                   {"classes", cfg_.classes},
                   {"horizon", cfg_.horizon},
                   {"solver",
                    {{"method", odesolve::method_name(cfg_.solver.method)},
                     {"steps", cfg_.solver.steps},
                     {"t0", cfg_.solver.t0},
                     {"t1", cfg_.solver.t1}}}};
    j["theta"] = theta_;
    return j.dump();
}

FieldModel FieldModel::from_checkpoint_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("version", "") != "fieldlab-ckpt-1")
        throw std::invalid_argument("checkpoint: unsupported version tag");
    const auto& c = j.at("config");
    ModelConfig cfg;
    cfg.family = family_from_string(c.at("family").get<std::string>());
    cfg.input_dim = c.at("input_dim").get<std::int64_t>();
    cfg.hidden_dim = c.at("hidden_dim").get<std::int64_t>();
    cfg.field_width = c.at("field_width").get<std::int64_t>();
    cfg.depth = c.at("depth").get<std::int64_t>();
    cfg.classes = c.at("classes").get<std::int64_t>();
    cfg.horizon = c.at("horizon").get<double>();
    const auto& s = c.at("solver");
    cfg.solver.method = odesolve::method_from_string(s.at("method").get<std::string>());
    cfg.solver.steps = s.at("steps").get<std::int64_t>();
    cfg.solver.t0 = s.at("t0").get<double>();
    cfg.solver.t1 = s.at("t1").get<double>();

    FieldModel m;
    m.cfg_ = cfg;
    m.build_layout();
    m.theta_ = j.at("theta").get<std::vector<double>>();
    if (static_cast<std::int64_t>(m.theta_.size()) != m.layout_.total())
        throw std::invalid_argument("checkpoint: theta length does not match config layout");
    return m;
}

std::vector<std::int64_t> predict(const Tensor& logits) {
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(logits.rows()));
    for (std::int64_t r = 0; r < logits.rows(); ++r) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < logits.cols(); ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        out.push_back(best);
    }
    return out;
}

double accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
    if (static_cast<std::int64_t>(labels.size()) != logits.rows())
        throw std::invalid_argument("accuracy: label count mismatch");
    auto preds = predict(logits);
    double hits = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (preds[i] == labels[i]) hits += 1.0;
    return hits / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------

RevealFlowModel RevealFlowModel::create(const RevealModelConfig& cfg, Rng& init_rng) {
    if (cfg.view_dim < 1 || cfg.hidden_dim < 1 || cfg.classes < 2)
        throw std::invalid_argument("reveal model config out of range");
    RevealFlowModel m;
    m.cfg_ = cfg;
    std::int64_t d = cfg.hidden_dim, w = cfg.width();
    m.layout_.add("enc.W", {cfg.view_dim, d});
    m.layout_.add("enc.b", {d});
    m.layout_.add("field.W1", {2 * d, w});
    m.layout_.add("field.b1", {w});
    m.layout_.add("field.W2", {w, d});
    m.layout_.add("field.b2", {d});
    m.layout_.add("head.W", {d, cfg.classes});
    m.layout_.add("head.b", {cfg.classes});
    m.theta_.assign(static_cast<std::size_t>(m.layout_.total()), 0.0);
    init_linear(m.theta_, m.layout_, "enc.W", "enc.b", init_rng);
    init_linear(m.theta_, m.layout_, "field.W1", "field.b1", init_rng);
    init_linear(m.theta_, m.layout_, "field.W2", "field.b2", init_rng);
    init_linear(m.theta_, m.layout_, "head.W", "head.b", init_rng);
    return m;
}

Var RevealFlowModel::step(TapeCtx& ctx, Var h, Var view) const {
    ad::Tape& tp = ctx.tp;
    Var u = tp.add_rowvec(tp.matmul(view, ctx.p("enc.W")), ctx.p("enc.b"));
    Var z = tp.concat_cols({h, u});
    Var f = mlp2(ctx, z, "field");
    return tp.add(h, tp.scale(f, cfg_.dt()));
}

RevealFlowModel::Trace RevealFlowModel::trace_schedule(ad::Tape& tp,
                                                       const std::vector<Tensor>& views) const {
    if (static_cast<std::int64_t>(views.size()) != cfg_.steps)
        throw std::invalid_argument("trace_schedule: schedule length " + std::to_string(views.size()) +
                                    " does not match configured steps " + std::to_string(cfg_.steps));
    std::int64_t rows = views[0].rows();
    TapeCtx ctx{tp, theta_, layout_, {}};
    Var h = tp.constant(Tensor::zeros({rows, cfg_.hidden_dim}));
    Trace out;
    out.states.push_back(h);
    for (const Tensor& view : views) {
        if (view.cols() != cfg_.view_dim || view.rows() != rows)
            throw std::invalid_argument("trace_schedule: view shape mismatch");
        h = step(ctx, h, tp.constant(view));
        out.states.push_back(h);
    }
    out.logits = tp.add_rowvec(tp.matmul(h, ctx.p("head.W")), ctx.p("head.b"));
    return out;
}

RevealFlowModel::Forward RevealFlowModel::forward_schedule(const std::vector<Tensor>& views) const {
    ad::Tape tp;
    Trace tr = trace_schedule(tp, views);
    Forward f;
    for (Var s : tr.states) f.states.push_back(tp.value(s));
    f.logits = tp.value(tr.logits);
    return f;
}

Dual RevealFlowModel::dual_step(TapeCtx& ctx, Dual h, const Tensor& view) const {
    ad::Tape& tp = ctx.tp;
    Var u = tp.add_rowvec(tp.matmul(tp.constant(view), ctx.p("enc.W")), ctx.p("enc.b"));
    Dual z = ad::dconcat_cols(h, u);
    Dual f = mlp2(ctx, z, "field");
    return ad::dadd(h, ad::dscale(f, cfg_.dt()));
}

}  // namespace fieldlab::netzoo
