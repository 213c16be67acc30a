#include <doctest.h>

#include <cmath>

#include "fieldlab/fieldlosses.hpp"
#include "fieldlab/trainlab.hpp"
#include "oracles.hpp"

using namespace fieldlab;
using namespace fieldlab::trainlab;
using teacherflow::LatentFlowModel;
using teacherflow::TeacherDataset;
using teacherflow::TeacherSpec;

TEST_CASE("sgd on a quadratic reaches the analytic minimum") {
    std::vector<double> theta{5.0, -3.0, 1.0};
    Tensor target = Tensor::vec({1.0, 2.0, -0.5});
    Sgd opt(0.3);
    for (int step = 0; step < 60; ++step) {
        ad::Tape tp;
        ad::Var x = tp.param(theta, 0, {3});
        ad::Var diff = x - tp.constant(target);
        tp.backward(tp.sum_sq(diff));
        opt.step(theta, tp.flat_grad(3));
    }
    for (int i = 0; i < 3; ++i) CHECK(std::abs(theta[static_cast<std::size_t>(i)] - target.at(i)) < 1e-6);
}

TEST_CASE("adam on a quadratic also converges") {
    std::vector<double> theta{4.0, -4.0};
    Tensor target = Tensor::vec({0.5, 0.25});
    Adam opt(0.1);
    for (int step = 0; step < 800; ++step) {
        ad::Tape tp;
        ad::Var x = tp.param(theta, 0, {2});
        tp.backward(tp.sum_sq(x - tp.constant(target)));
        opt.step(theta, tp.flat_grad(2));
    }
    for (int i = 0; i < 2; ++i) CHECK(std::abs(theta[static_cast<std::size_t>(i)] - target.at(i)) < 1e-5);
}

TEST_CASE("pcgrad: orthogonal sum unchanged, antiparallel cancels, conflict resolves") {
    Tensor a = Tensor::vec({1.0, 0.0});
    Tensor b = Tensor::vec({0.0, 2.0});
    CHECK(pcgrad_combine(a, b).data == add(a, b).data);

    Tensor na = Tensor::vec({1.0, 1.0});
    Tensor nb = Tensor::vec({-1.0, -1.0});
    CHECK(norm2(pcgrad_combine(na, nb)) < 1e-14);

    Rng rng(1);
    int conflicting = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor g1 = rng.normal_tensor({6});
        Tensor g2 = rng.normal_tensor({6});
        if (dot(g1, g2) >= 0.0) continue;
        ++conflicting;
        double inner = dot(g1, g2);
        Tensor t_proj = sub(g1, scale(g2, inner / squared_norm(g2)));
        Tensor f_proj = sub(g2, scale(g1, inner / squared_norm(g1)));
        CHECK(dot(t_proj, g2) >= -1e-12);
        CHECK(dot(f_proj, g1) >= -1e-12);
        CHECK(oracles::max_abs_diff(pcgrad_combine(g1, g2), add(t_proj, f_proj)) < 1e-14);
    }
    CHECK(conflicting > 5);
}

TEST_CASE("mgda: degenerate cases and the grid-search min-norm oracle") {
    Tensor g = Tensor::vec({0.3, -0.7, 1.1});
    CHECK(mgda_combine(g, g).data == g.data);
    CHECK(mgda_combine(g, Tensor::zeros({3})).data == g.data);

    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor g1 = rng.normal_tensor({5});
        Tensor g2 = rng.normal_tensor({5});
        Tensor dir = mgda_combine(g1, g2);
        double best = 1e300;
        for (double w = 0.0; w <= 1.0; w += 1e-4) {
            double nrm = norm2(add(scale(g1, w), scale(g2, 1.0 - w)));
            best = std::min(best, nrm);
        }
        CHECK(std::abs(norm2(dir) - best) < 1e-6);
    }
}

TEST_CASE("projected_task_step: aligned unchanged, antiparallel zero, invariant holds") {
    Tensor a = Tensor::vec({1.0, 2.0});
    CHECK(projected_task_step(a, a).data == a.data);
    CHECK(norm2(projected_task_step(a, scale(a, -3.0))) < 1e-14);

    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor g1 = rng.normal_tensor({7});
        Tensor g2 = rng.normal_tensor({7});
        Tensor out = projected_task_step(g1, g2);
        CHECK(dot(out, g2) >= -1e-12);
    }
}

namespace {

TeacherDataset small_teacher(std::uint64_t seed, std::int64_t count) {
    TeacherSpec spec;
    spec.sample_times = 4;
    spec.fine_substeps = 20;
    Rng rng(seed);
    return teacherflow::generate_dataset(spec, count, teacherflow::TaskKind::A, 0.0, rng);
}

LatentFlowModel small_model(std::uint64_t seed) {
    teacherflow::FlowModelConfig cfg;
    cfg.field_width = 16;
    cfg.solver = {odesolve::Method::rk4, 4, 0.0, 1.0};
    Rng rng = Rng(seed).split("init");
    return LatentFlowModel::create(cfg, rng);
}

}  // namespace

TEST_CASE("zero field weights: conflict-aware algorithms match plain task descent") {
    TeacherDataset ds = small_teacher(4, 40);
    TrainConfig base;
    base.epochs = 2;
    base.batch = 20;
    base.alpha = 0.0;
    base.beta = 0.0;
    base.gamma = 0.0;
    base.seed = 9;

    auto run = [&](Algorithm alg) {
        LatentFlowModel m = small_model(5);
        TrainConfig cfg = base;
        cfg.algorithm = alg;
        train(m, ds, ds, cfg);
        return m.theta();
    };
    auto ref = run(Algorithm::fullbptt);
    CHECK(run(Algorithm::pcgrad) == ref);
    CHECK(run(Algorithm::mgda) == ref);
    CHECK(run(Algorithm::projected_task) == ref);
    CHECK(run(Algorithm::curriculum) == ref);  // no field phase when weights are zero
}

TEST_CASE("shooting: one segment equals the terminal trajectory loss") {
    TeacherDataset ds = small_teacher(6, 12);
    LatentFlowModel m = small_model(7);
    double got = shooting_penalty_value(m, ds, 1, 1.0);

    // hand-assembled: integrate from the encoding, compare only z(T)
    Tensor z = m.encode(ds.x);
    auto states = odesolve::integrate(
        [&](const Tensor& s, double t) { return m.field_value(s, t); }, z, m.config().solver);
    double want = 0.0;
    for (std::int64_t r = 0; r < ds.size(); ++r)
        want += squared_norm(sub(states.back().row_at(r), ds.traj.back().row_at(r)));
    want /= static_cast<double>(ds.size());
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("shooting: two-segment fixture against a hand-assembled loss") {
    TeacherDataset ds = small_teacher(8, 10);
    LatentFlowModel m = small_model(9);
    double got = shooting_penalty_value(m, ds, 2, 1.0);

    auto integrate_seg = [&](const Tensor& start, double t0, double t1) {
        odesolve::SolverSpec spec = m.config().solver;
        spec.steps = 2;
        spec.t0 = t0;
        spec.t1 = t1;
        return odesolve::integrate(
                   [&](const Tensor& s, double t) { return m.field_value(s, t); }, start, spec)
            .back();
    };
    Tensor end0 = integrate_seg(m.encode(ds.x), 0.0, 0.5);
    Tensor end1 = integrate_seg(ds.traj[2], 0.5, 1.0);  // K=4: boundary state at k=2
    double want = 0.0;
    for (std::int64_t r = 0; r < ds.size(); ++r) {
        want += squared_norm(sub(end0.row_at(r), ds.traj[2].row_at(r)));
        want += squared_norm(sub(end1.row_at(r), ds.traj[4].row_at(r)));
    }
    want /= static_cast<double>(ds.size());
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("conflict log: cosines bounded, negative fraction in [0,1]") {
    TeacherDataset ds = small_teacher(10, 30);
    LatentFlowModel m = small_model(11);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 15;
    cfg.alpha = 1.0;
    cfg.beta = 1.0;
    cfg.gamma = 0.0;
    cfg.seed = 12;
    auto result = train(m, ds, ds, cfg);
    CHECK(result.conflict.cosines.size() == 3);
    for (double c : result.conflict.cosines) {
        CHECK(c >= -1.0 - 1e-12);
        CHECK(c <= 1.0 + 1e-12);
    }
    CHECK(result.conflict.negative_fraction >= 0.0);
    CHECK(result.conflict.negative_fraction <= 1.0);
    CHECK(result.history.size() == 3);
}

TEST_CASE("training reduces the task loss on a small teacher problem") {
    TeacherDataset ds = small_teacher(13, 80);
    LatentFlowModel m = small_model(14);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch = 20;
    cfg.lr = 3e-3;
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    cfg.gamma = 0.0;
    cfg.seed = 15;
    auto result = train(m, ds, ds, cfg);
    CHECK(result.history.back().task_loss < result.history.front().task_loss);
    CHECK(result.history.back().accuracy > 0.6);
}
