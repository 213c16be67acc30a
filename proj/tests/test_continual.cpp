#include <doctest.h>

#include <cmath>
#include <set>

#include "fieldlab/continual.hpp"
#include "fieldlab/fieldmetrics.hpp"

using namespace fieldlab;
using namespace fieldlab::continual;

namespace {

ContinualConfig tiny_config(std::int64_t tasks, std::uint64_t seed) {
    ContinualConfig cfg;
    cfg.tasks = tasks;
    cfg.classes_per_task = 2;
    cfg.ambient_dim = 12;
    cfg.intrinsic_dim = 2;
    cfg.train_per_class = 30;
    cfg.test_per_class = 10;
    cfg.hidden_dim = 16;
    cfg.depth = 4;
    cfg.epochs_per_task = 6;
    cfg.batch = 16;
    cfg.buffer_budget = 20;
    cfg.metric_anchors = 12;
    cfg.jrs_probes = 2;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("task sequence: disjoint classes, seed-stable order") {
    ContinualConfig cfg = tiny_config(4, 3);
    Rng r1(cfg.seed), r2(cfg.seed);
    TaskSequence a = make_task_sequence(cfg, r1);
    TaskSequence b = make_task_sequence(cfg, r2);
    REQUIRE(a.tasks.size() == 4);
    std::set<std::int64_t> seen;
    for (const auto& t : a.tasks) {
        for (auto c : t.class_ids) {
            CHECK_FALSE(seen.count(c));
            seen.insert(c);
        }
        CHECK(t.train_x.rows() == 60);
        CHECK(t.test_x.rows() == 20);
    }
    CHECK(seen.size() == 8);
    for (std::size_t t = 0; t < 4; ++t) CHECK(a.tasks[t].class_ids == b.tasks[t].class_ids);
    CHECK(a.tasks[0].train_x.data == b.tasks[0].train_x.data);
}

TEST_CASE("metrics: fixtures and matrix round trip") {
    AccuracyMatrix m;
    m.tasks = 2;
    m.r = {{0.9}, {0.5, 0.8}};
    m.pre = {0.5, 0.55};
    auto metrics = metrics_aa_bwt_fwt(m, 0.5);
    CHECK(metrics.aa == doctest::Approx(0.65));
    REQUIRE(metrics.bwt.has_value());
    CHECK(*metrics.bwt == doctest::Approx(-0.4));
    REQUIRE(metrics.fwt.has_value());
    CHECK(*metrics.fwt == doctest::Approx(0.05));

    AccuracyMatrix constant;
    constant.tasks = 3;
    constant.r = {{0.7}, {0.7, 0.7}, {0.7, 0.7, 0.7}};
    constant.pre = {0.0, 0.0, 0.0};
    CHECK(*metrics_aa_bwt_fwt(constant, 0.1).bwt == doctest::Approx(0.0));

    std::string text = m.to_json();
    AccuracyMatrix back = AccuracyMatrix::from_json(text);
    CHECK(back.r == m.r);
    CHECK(back.pre == m.pre);
    auto again = metrics_aa_bwt_fwt(back, 0.5);
    CHECK(again.aa == metrics.aa);
    CHECK(*again.bwt == *metrics.bwt);
}

TEST_CASE("single-task sequence: BWT absent, AA equals final accuracy") {
    ContinualConfig cfg = tiny_config(1, 5);
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    auto artifacts = run_method(Method::finetune, seq, cfg);
    CHECK_FALSE(artifacts.result.metrics.bwt.has_value());
    CHECK(artifacts.result.metrics.aa == doctest::Approx(artifacts.result.acc.r[0][0]));
}

TEST_CASE("finetune forgets: accuracy on task 0 drops after task 1") {
    ContinualConfig cfg = tiny_config(2, 7);
    cfg.epochs_per_task = 12;
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    auto artifacts = run_method(Method::finetune, seq, cfg);
    double just_trained = artifacts.result.acc.r[0][0];
    double after_next = artifacts.result.acc.r[1][0];
    MESSAGE("task0 acc " << just_trained << " -> " << after_next);
    CHECK(after_next < just_trained);
}

TEST_CASE("extreme field preservation freezes the field: tiny FRS, chance-level new task") {
    ContinualConfig cfg = tiny_config(2, 9);
    cfg.fpr_lambda = 1e4;
    cfg.epochs_per_task = 10;
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    auto fpr = run_method(Method::fpr_full, seq, cfg);
    auto finetune = run_method(Method::finetune, seq, cfg);
    MESSAGE("fpr frs_final " << fpr.result.frs_final << " vs finetune " << finetune.result.frs_final);
    CHECK(fpr.result.frs_final < 0.05 * finetune.result.frs_final);
    // the new task cannot carve out a head against an immovable field
    CHECK(fpr.result.acc.r[1][1] < 0.75);
}

TEST_CASE("retention metrics agree with fieldmetrics on the stored snapshots") {
    ContinualConfig cfg = tiny_config(3, 11);
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    auto artifacts = run_method(Method::finetune, seq, cfg);

    double frs_fin = 0.0;
    for (std::int64_t j = 0; j + 1 < 3; ++j)
        frs_fin += fieldmetrics::frs(artifacts.snapshots[static_cast<std::size_t>(j)],
                                     artifacts.snapshots.back(),
                                     artifacts.anchors[static_cast<std::size_t>(j)]);
    frs_fin /= 2.0;
    CHECK(artifacts.result.frs_final == doctest::Approx(frs_fin).epsilon(1e-12));
}

TEST_CASE("replay methods demand a budget") {
    ContinualConfig cfg = tiny_config(2, 13);
    cfg.buffer_budget = 0;
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    CHECK_THROWS_AS(run_method(Method::er, seq, cfg), std::invalid_argument);
    CHECK_THROWS_AS(run_method(Method::derpp, seq, cfg), std::invalid_argument);
}

TEST_CASE("drift diagnostics: identical snapshots give zero drifts") {
    ContinualConfig cfg = tiny_config(2, 15);
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    auto artifacts = run_method(Method::finetune, seq, cfg);
    artifacts.snapshots[1] = artifacts.snapshots[0];  // force identical models
    artifacts.result.acc.r[1][0] = artifacts.result.acc.r[0][0];
    auto diag = drift_diagnostics(artifacts, cfg);
    REQUIRE(diag.records.size() == 1);
    CHECK(diag.records[0].param_drift == 0.0);
    CHECK(diag.records[0].traj_drift == 0.0);
    CHECK(diag.records[0].jac_drift == 0.0);
    CHECK(diag.records[0].acc_drop == 0.0);
}

TEST_CASE("drift diagnostics: real run emits records and correlation report") {
    ContinualConfig cfg = tiny_config(3, 17);
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    auto artifacts = run_method(Method::finetune, seq, cfg);
    auto diag = drift_diagnostics(artifacts, cfg);
    CHECK(diag.records.size() == 3);  // (0,1), (0,2), (1,2)
    std::string csv = diag.records_csv();
    CHECK(csv.find("old_task,after_task,param_drift,traj_drift,jac_drift,acc_drop") == 0);
    std::string corr = diag.correlations_json();
    CHECK(corr.find("trajectory_drift_vs_drop") != std::string::npos);
    CHECK(corr.find("pearson_r") != std::string::npos);
}

TEST_CASE("hybrid_delta: identical results give zeros, fixture differences are signed") {
    MethodResult base;
    base.metrics.aa = 0.5;
    base.metrics.bwt = -0.4;
    base.frs_final = 2.0;
    base.jrs_final = 0.2;
    CHECK(hybrid_delta(base, base).d_aa == 0.0);
    CHECK(hybrid_delta(base, base).d_frs == 0.0);

    MethodResult hybrid = base;
    hybrid.metrics.aa = 0.55;
    hybrid.metrics.bwt = -0.3;
    hybrid.frs_final = 1.5;
    hybrid.jrs_final = 0.1;
    auto d = hybrid_delta(base, hybrid);
    CHECK(d.d_aa == doctest::Approx(0.05));
    CHECK(d.d_bwt == doctest::Approx(0.1));
    CHECK(d.d_frs == doctest::Approx(-0.5));
    CHECK(d.d_jrs == doctest::Approx(-0.1));
}

TEST_CASE("buffered methods run end to end and stay deterministic") {
    ContinualConfig cfg = tiny_config(2, 19);
    cfg.epochs_per_task = 4;
    Rng rng(cfg.seed);
    TaskSequence seq = make_task_sequence(cfg, rng);
    for (Method m : {Method::er, Method::derpp, Method::lwf, Method::ewc, Method::fpr_traj,
                     Method::fpr_jac, Method::er_fpr_late, Method::derpp_fpr_full}) {
        auto a = run_method(m, seq, cfg);
        auto b = run_method(m, seq, cfg);
        INFO(method_name(m));
        CHECK(a.result.metrics.aa == b.result.metrics.aa);
        CHECK(a.snapshots.back().theta() == b.snapshots.back().theta());
        CHECK(a.result.acc.r.size() == 2);
    }
}
