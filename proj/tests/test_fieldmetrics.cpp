#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fieldlab/fieldmetrics.hpp"
#include "fieldlab/netzoo.hpp"
#include "fieldlab/rng.hpp"
#include "oracles.hpp"

using namespace fieldlab;
using namespace fieldlab::fieldmetrics;
using netzoo::Family;
using netzoo::FieldModel;
using netzoo::ModelConfig;

namespace {

FieldModel make_model(Family fam, std::int64_t in, std::int64_t d, std::int64_t depth, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.family = fam;
    cfg.input_dim = in;
    cfg.hidden_dim = d;
    cfg.depth = depth;
    cfg.classes = 2;
    Rng rng = Rng(seed).split("init");
    return FieldModel::create(cfg, rng);
}

void set_param(FieldModel& m, const std::string& name, const Tensor& value) {
    std::int64_t off = m.layout().offset(name);
    for (std::int64_t i = 0; i < value.numel(); ++i)
        m.theta()[static_cast<std::size_t>(off + i)] = value.at(i);
}

void make_linear_field(FieldModel& m, const Tensor& M, double eps = 1e-4) {
    Tensor W1 = Tensor::zeros(m.layout().shape("field.W1"));
    for (std::int64_t i = 0; i < M.rows(); ++i) W1.at(i, i) = eps;
    set_param(m, "field.W1", W1);
    set_param(m, "field.b1", Tensor::zeros(m.layout().shape("field.b1")));
    set_param(m, "field.W2", scale(M, 1.0 / eps));
    set_param(m, "field.b2", Tensor::zeros(m.layout().shape("field.b2")));
}

Trajectory traj_2d(std::initializer_list<std::pair<double, double>> pts) {
    Trajectory t;
    for (auto [a, b] : pts) t.push_back(Tensor::vec({a, b}));
    return t;
}

}  // namespace

TEST_CASE("path_length: constant, 3-4-5, and pairwise oracle") {
    CHECK(path_length(traj_2d({{1, 1}, {1, 1}, {1, 1}})) == 0.0);
    CHECK(path_length(traj_2d({{0, 0}, {3, 4}})) == doctest::Approx(5.0).epsilon(1e-15));

    Rng rng(5);
    Trajectory t;
    for (int i = 0; i < 10; ++i) t.push_back(rng.normal_tensor({6}));
    double want = 0.0;
    for (int i = 0; i + 1 < 10; ++i) {
        double s = 0.0;
        for (int c = 0; c < 6; ++c) {
            double d = t[i + 1].at(c) - t[i].at(c);
            s += d * d;
        }
        want += std::sqrt(s);
    }
    CHECK(path_length(t) == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("path_length is invariant under a common orthogonal transform") {
    Rng rng(6);
    Trajectory t;
    for (int i = 0; i < 7; ++i) t.push_back(rng.normal_tensor({5}));
    Tensor q = netzoo::orthonormal_projection(5, 5, rng);
    Trajectory rotated;
    for (const auto& s : t) {
        Tensor out = Tensor::zeros({5});
        for (std::int64_t r = 0; r < 5; ++r)
            for (std::int64_t c = 0; c < 5; ++c) out.at(r) += q.at(r, c) * s.at(c);
        rotated.push_back(out);
    }
    CHECK(path_length(rotated) == doctest::Approx(path_length(t)).epsilon(1e-12));
}

TEST_CASE("curvature: collinear points vanish regardless of spacing") {
    CHECK(curvature(traj_2d({{0, 0}, {1, 1}, {2, 2}, {3, 3}})) == 0.0);
    // unequal spacing along the same line still has zero second difference?
    // No: unequal spacing bends the discrete parameterization, but an affinely
    // parameterized straight segment keeps z_{l+1} - 2z_l + z_{l-1} = 0.
    CHECK(curvature(traj_2d({{0, 0}, {2, 1}, {4, 2}, {6, 3}})) == 0.0);
}

TEST_CASE("curvature: right-angle fixture equals sqrt(2)") {
    double got = curvature(traj_2d({{0, 0}, {1, 0}, {1, 1}}));
    CHECK(got == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
    CHECK_THROWS_AS(curvature(traj_2d({{0, 0}, {1, 0}})), std::invalid_argument);
}

TEST_CASE("curvature and alignment: random trajectory against direct recompute") {
    Rng rng(7);
    Trajectory t;
    for (int i = 0; i < 8; ++i) t.push_back(rng.normal_tensor({4}));
    double curv_want = 0.0, align_want = 0.0;
    for (int l = 1; l + 1 < 8; ++l) {
        Tensor second = add(sub(t[l + 1], scale(t[l], 2.0)), t[l - 1]);
        Tensor d1 = sub(t[l + 1], t[l]);
        Tensor d0 = sub(t[l], t[l - 1]);
        curv_want += norm2(second) / (squared_norm(d1) + 1e-8);
        align_want += dot(d1, d0) / (norm2(d1) * norm2(d0) + 1e-8);
    }
    CHECK(curvature(t) == doctest::Approx(curv_want / 6.0).epsilon(1e-14));
    CHECK(velocity_alignment(t) == doctest::Approx(align_want / 6.0).epsilon(1e-14));
}

TEST_CASE("velocity_alignment: straight line 1, reversal -1") {
    CHECK(velocity_alignment(traj_2d({{0, 0}, {1, 2}, {2, 4}, {3, 6}})) ==
          doctest::Approx(1.0).epsilon(1e-7));
    CHECK(velocity_alignment(traj_2d({{0, 0}, {1, 0}, {0, 0}})) == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("path_sensitivity: invariant outputs give zero, brute force matches") {
    // a path-ignoring model produces identical outputs on every path
    std::vector<std::vector<Tensor>> same{{Tensor::vec({1, 2}), Tensor::vec({1, 2}), Tensor::vec({1, 2})}};
    CHECK(path_sensitivity(same) == 0.0);

    std::vector<std::vector<Tensor>> single{{Tensor::vec({1, 2})}};
    CHECK_THROWS_AS(path_sensitivity(single), std::invalid_argument);

    Rng rng(8);
    std::vector<std::vector<Tensor>> outs(2);
    for (auto& per : outs)
        for (int p = 0; p < 3; ++p) per.push_back(rng.normal_tensor({3}));
    double want = 0.0;
    for (const auto& per : outs)
        for (int p = 0; p < 3; ++p)
            for (int q = p + 1; q < 3; ++q) want += norm2(sub(per[p], per[q]));
    want /= 6.0;
    CHECK(path_sensitivity(outs) == doctest::Approx(want).epsilon(1e-14));
    // symmetric in path order: permuting paths leaves the mean untouched
    std::swap(outs[0][0], outs[0][2]);
    CHECK(path_sensitivity(outs) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("solver_consistency: identical specs and zero fields give zero") {
    odesolve::SolverSpec spec{odesolve::Method::rk4, 8, 0.0, 1.0};
    ModelConfig cfg;
    cfg.family = Family::continuous;
    cfg.input_dim = 2;
    cfg.hidden_dim = 2;
    cfg.classes = 2;
    cfg.solver = spec;
    Rng rng = Rng(9).split("init");
    FieldModel m = FieldModel::create(cfg, rng);

    Rng data(10);
    Tensor x = data.normal_tensor({3, 2});
    CHECK(solver_consistency(m, x, {spec, spec}) == 0.0);

    FieldModel zero = m;
    set_param(zero, "field.W2", Tensor::zeros(zero.layout().shape("field.W2")));
    set_param(zero, "field.b2", Tensor::zeros(zero.layout().shape("field.b2")));
    odesolve::SolverSpec other{odesolve::Method::euler, 3, 0.0, 1.0};
    CHECK(solver_consistency(zero, x, {spec, other}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("solver_consistency: linear decay matches the analytic truncation gap") {
    odesolve::SolverSpec eN{odesolve::Method::euler, 8, 0.0, 1.0};
    odesolve::SolverSpec e2N{odesolve::Method::euler, 16, 0.0, 1.0};
    ModelConfig cfg;
    cfg.family = Family::continuous;
    cfg.input_dim = 2;
    cfg.hidden_dim = 2;
    cfg.classes = 2;
    cfg.solver = eN;
    Rng rng = Rng(11).split("init");
    FieldModel m = FieldModel::create(cfg, rng);
    Tensor minusI({2, 2}, {-1, 0, 0, -1});
    make_linear_field(m, minusI);
    set_param(m, "enc.W", Tensor({2, 2}, {1, 0, 0, 1}));
    set_param(m, "enc.b", Tensor::zeros({2}));
    Tensor headW({2, 2}, {0.5, -0.3, 0.2, 0.8});
    set_param(m, "head.W", headW);
    set_param(m, "head.b", Tensor::zeros({2}));

    Tensor x({1, 2}, {0.7, -0.4});
    double got = solver_consistency(m, x, {eN, e2N});

    double f1 = std::pow(1.0 - 1.0 / 8.0, 8);
    double f2 = std::pow(1.0 - 1.0 / 16.0, 16);
    double gap = std::abs(f1 - f2);
    double want = gap * norm2(x.row_at(0)) + gap * norm2(matmul_eager(x, headW).row_at(0));
    CHECK(got == doctest::Approx(want).epsilon(0.10));
}

TEST_CASE("frs: zero on itself, direct recompute on distinct models, empty errors") {
    FieldModel a = make_model(Family::sharedfield, 3, 4, 3, 12);
    CHECK(frs(a, a, Rng(13).normal_tensor({4, 3})) == 0.0);

    FieldModel b = a;
    b.theta()[5] += 0.25;
    b.theta()[20] -= 0.5;
    Rng rng(14);
    Tensor anchors = rng.normal_tensor({5, 3});
    auto fa = a.forward_with_trajectory(anchors);
    auto fb = b.forward_with_trajectory(anchors);
    double want = 0.0;
    for (std::int64_t r = 0; r < 5; ++r) {
        double per = 0.0;
        for (std::size_t l = 0; l < fa.states.size(); ++l)
            per += squared_norm(sub(fa.states[l].row_at(r), fb.states[l].row_at(r)));
        want += per / static_cast<double>(fa.states.size());
    }
    want /= 5.0;
    CHECK(frs(a, b, anchors) == doctest::Approx(want).epsilon(1e-14));

    CHECK_THROWS_AS(frs(a, b, Tensor::zeros({1})), std::invalid_argument);
}

TEST_CASE("jrs: zero on itself; diagonal linear fields match the dense oracle exactly") {
    FieldModel a = make_model(Family::sharedfield, 2, 3, 2, 15);
    Rng pr(16);
    CHECK(jrs(a, a, Rng(17).normal_tensor({3, 2}), 4, pr) == 0.0);

    // diagonal difference: every Rademacher probe yields the same quotient
    FieldModel da = make_model(Family::sharedfield, 2, 3, 2, 18);
    FieldModel db = da;
    Tensor Ma({3, 3}, {0.6, 0, 0, 0, -0.4, 0, 0, 0, 0.2});
    Tensor Mb({3, 3}, {0.1, 0, 0, 0, 0.3, 0, 0, 0, -0.5});
    make_linear_field(da, Ma);
    make_linear_field(db, Mb);
    double dt = 0.5;  // horizon 1, depth 2
    double fro = 0.0;
    for (int i = 0; i < 3; ++i) {
        double d = dt * (Ma.at(i, i) - Mb.at(i, i));
        fro += d * d;
    }
    double want = fro / (3.0 + 1e-8);
    Rng pr2(19);
    CHECK(jrs(da, db, Rng(20).normal_tensor({4, 2}), 6, pr2) == doctest::Approx(want).epsilon(1e-6));

    Rng pr3(21);
    CHECK_THROWS_AS(jrs(da, db, Rng(22).normal_tensor({4, 2}), 0, pr3), std::invalid_argument);
}

TEST_CASE("jacobian_spectrum: identity layer, diagonal layer vs dense SVD, k bounds") {
    FieldModel m = make_model(Family::sharedfield, 2, 3, 1, 23);
    set_param(m, "field.W2", Tensor::zeros(m.layout().shape("field.W2")));
    set_param(m, "field.b2", Tensor::zeros(m.layout().shape("field.b2")));
    Rng rng(24);
    Tensor x = rng.normal_tensor({1, 2});
    Rng probe(25);
    auto spec = jacobian_spectrum(m, x, 0, 3, probe);
    for (double s : spec) CHECK(s == doctest::Approx(1.0).epsilon(1e-10));

    // J = I + dt M with M = diag(2, 1, 0) and dt = 1 gives diag(3, 2, 1)
    FieldModel dm = make_model(Family::sharedfield, 2, 3, 1, 26);
    Tensor M({3, 3}, {2, 0, 0, 0, 1, 0, 0, 0, 0});
    make_linear_field(dm, M);
    Rng probe2(27);
    auto top2 = jacobian_spectrum(dm, x, 0, 2, probe2);
    CHECK(top2[0] == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(top2[1] == doctest::Approx(2.0).epsilon(1e-6));

    Rng probe3(28);
    CHECK_THROWS_AS(jacobian_spectrum(dm, x, 0, 4, probe3), std::invalid_argument);
}

TEST_CASE("jac_wasserstein: fixtures and empirical-CDF oracle") {
    CHECK(jac_wasserstein({1, 3}, {1, 3}) == 0.0);
    CHECK(jac_wasserstein({1, 3}, {2, 2}) == 1.0);

    Rng rng(29);
    std::vector<double> a, b;
    for (int i = 0; i < 9; ++i) {
        a.push_back(std::abs(rng.normal()));
        b.push_back(std::abs(rng.normal()));
    }
    // empirical-CDF integral: with equal sample counts the W1 distance is the
    // mean absolute difference of order statistics; integrate |Fa - Fb| over a
    // fine grid as an independent route.
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double lo = 0.0, hi = 5.0, step = 1e-5, integral = 0.0;
    auto cdf = [](const std::vector<double>& v, double x) {
        return static_cast<double>(std::upper_bound(v.begin(), v.end(), x) - v.begin()) /
               static_cast<double>(v.size());
    };
    for (double x = lo; x < hi; x += step) integral += std::abs(cdf(sa, x) - cdf(sb, x)) * step;
    CHECK(jac_wasserstein(a, b) == doctest::Approx(integral).epsilon(1e-3));
}

TEST_CASE("jac_wasserstein: triangle inequality on random triples") {
    Rng rng(30);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a, b, c;
        for (int i = 0; i < 5; ++i) {
            a.push_back(rng.uniform(0.0, 3.0));
            b.push_back(rng.uniform(0.0, 3.0));
            c.push_back(rng.uniform(0.0, 3.0));
        }
        CHECK(jac_wasserstein(a, c) <= jac_wasserstein(a, b) + jac_wasserstein(b, c) + 1e-12);
    }
}

TEST_CASE("spectral_entropy: uniform spectrum maximal, degenerate zero") {
    CHECK(spectral_entropy({1, 1, 1, 1}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(spectral_entropy({2, 0, 0}) == doctest::Approx(0.0));
}

TEST_CASE("procrustes_error: rotations and scalings align to zero") {
    Rng rng(31);
    Trajectory a;
    for (int i = 0; i < 6; ++i) a.push_back(rng.normal_tensor({2}));
    CHECK(procrustes_error(a, a) < 1e-12);

    double phi = 0.83;
    double s = 1.7;
    Trajectory b;
    for (const auto& p : a) {
        double x = p.at(0), y = p.at(1);
        b.push_back(Tensor::vec({s * (std::cos(phi) * x - std::sin(phi) * y),
                                 s * (std::sin(phi) * x + std::cos(phi) * y)}));
    }
    CHECK(procrustes_error(a, b) < 1e-8);
}

TEST_CASE("procrustes_error: random 2-D pair against angle grid search") {
    Rng rng(32);
    Trajectory a, b;
    for (int i = 0; i < 5; ++i) {
        a.push_back(rng.normal_tensor({2}));
        b.push_back(rng.normal_tensor({2}));
    }
    double got = procrustes_error(a, b);

    double na2 = 0.0, nb = 0.0;
    for (int i = 0; i < 5; ++i) {
        na2 += squared_norm(a[static_cast<std::size_t>(i)]);
        nb += squared_norm(b[static_cast<std::size_t>(i)]);
    }
    nb = std::sqrt(nb);
    double best = 1e300;
    for (int reflect = 0; reflect < 2; ++reflect) {
        for (double phi = 0.0; phi < 6.2832; phi += 1e-4) {
            double c = std::cos(phi), sn = std::sin(phi);
            // Q columns; reflection flips the second column
            double q00 = c, q01 = -sn, q10 = sn, q11 = c;
            if (reflect) {
                q01 = sn;
                q11 = -c;
            }
            double inner = 0.0;
            for (int i = 0; i < 5; ++i) {
                double ax = a[static_cast<std::size_t>(i)].at(0), ay = a[static_cast<std::size_t>(i)].at(1);
                double rx = ax * q00 + ay * q10, ry = ax * q01 + ay * q11;
                inner += rx * b[static_cast<std::size_t>(i)].at(0) + ry * b[static_cast<std::size_t>(i)].at(1);
            }
            double s = inner / na2;
            double err2 = 0.0;
            for (int i = 0; i < 5; ++i) {
                double ax = a[static_cast<std::size_t>(i)].at(0), ay = a[static_cast<std::size_t>(i)].at(1);
                double rx = s * (ax * q00 + ay * q10), ry = s * (ax * q01 + ay * q11);
                double dx = rx - b[static_cast<std::size_t>(i)].at(0);
                double dy = ry - b[static_cast<std::size_t>(i)].at(1);
                err2 += dx * dx + dy * dy;
            }
            best = std::min(best, std::sqrt(err2) / nb);
        }
    }
    CHECK(got == doctest::Approx(best).epsilon(1e-4));
}

TEST_CASE("calibration_ece: perfect confidence, uniform logits, empty input") {
    Tensor perfect({3, 2}, {50, -50, -50, 50, 50, -50});
    CHECK(calibration_ece(perfect, {0, 1, 0}) == doctest::Approx(0.0).epsilon(1e-10));

    // all-equal logits: confidence 1/2; with a 3/1 label split on the argmax
    // class the bin error is |3/4 - 1/2|
    Tensor uniform = Tensor::zeros({4, 2});
    CHECK(calibration_ece(uniform, {0, 0, 0, 1}) == doctest::Approx(0.25).epsilon(1e-12));

    CHECK_THROWS_AS(calibration_ece(Tensor::zeros({1}), {}), std::invalid_argument);
}

TEST_CASE("correlations: exact linear relations") {
    std::vector<double> x{1, 2, 3, 4, 5, 6};
    std::vector<double> y2;
    std::vector<double> yneg;
    for (double v : x) {
        y2.push_back(2.0 * v);
        yneg.push_back(-v);
    }
    auto c1 = correlations(x, y2);
    CHECK(c1.pearson_r == doctest::Approx(1.0).epsilon(1e-12));
    auto c2 = correlations(x, yneg);
    CHECK(c2.spearman_rho == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("correlations: n=5 fixture against rank-enumeration oracle") {
    std::vector<double> x{0.3, 1.2, -0.7, 2.2, 0.9};
    std::vector<double> y{1.1, 0.2, -0.9, 1.7, 2.4};
    auto got = correlations(x, y);

    // tie-free ranks, rho = 1 - 6 sum d^2 / (n(n^2-1))
    auto rank_of = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double rr = 1.0;
            for (std::size_t j = 0; j < v.size(); ++j)
                if (v[j] < v[i]) rr += 1.0;
            r[i] = rr;
        }
        return r;
    };
    auto rho_formula = [&](const std::vector<double>& rx, const std::vector<double>& ry) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
        double n = static_cast<double>(rx.size());
        return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    };
    auto rx = rank_of(x);
    auto ry = rank_of(y);
    double rho_want = rho_formula(rx, ry);
    CHECK(got.spearman_rho == doctest::Approx(rho_want).epsilon(1e-12));

    // exact p: enumerate all 5! rank assignments
    std::vector<double> perm{1, 2, 3, 4, 5};
    std::sort(perm.begin(), perm.end());
    int total = 0, extreme = 0;
    do {
        if (std::abs(rho_formula(rx, perm)) >= std::abs(rho_want) - 1e-12) ++extreme;
        ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got.spearman_p == doctest::Approx(static_cast<double>(extreme) / total).epsilon(1e-12));
    CHECK(got.pearson_p > 0.0);
    CHECK(got.pearson_p <= 1.0);
}

TEST_CASE("field report: serialization round-trips including absent entries") {
    FieldReport r;
    r.len = 1.5;
    r.curvature = 0.25;
    r.spectral_entropy = {0.9, 1.1};
    std::string text = r.to_json();
    FieldReport back = FieldReport::from_json(text);
    CHECK(back.len == r.len);
    CHECK(back.curvature == r.curvature);
    CHECK_FALSE(back.solver_err.has_value());
    CHECK(back.spectral_entropy == r.spectral_entropy);
    CHECK(back.to_json() == text);
}

TEST_CASE("report_for: fills trajectory geometry and adjacent spectra") {
    FieldModel m = make_model(Family::sharedfield, 3, 4, 4, 33);
    Rng data(34);
    Rng probes(35);
    auto rep = report_for(m, data.normal_tensor({6, 3}), 3, probes);
    CHECK(rep.len.has_value());
    CHECK(rep.curvature.has_value());
    CHECK(rep.vel_align.has_value());
    CHECK(rep.jac_wdist.has_value());
    CHECK(rep.spectral_entropy.size() == 4);
    CHECK(*rep.len > 0.0);
}
