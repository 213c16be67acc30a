#include <sstream>

#include "fieldlab/experiments.hpp"
#include "fieldlab/pdebench.hpp"

namespace fieldlab::cli {

namespace {

using namespace fieldlab::pdebench;

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(10);
    s << v;
    return s.str();
}

std::string opt_cell(const std::optional<double>& v) { return v.has_value() ? fmt(*v) : "--"; }

}  // namespace

nlohmann::json run_pde_experiment(const Config& cfg, const std::filesystem::path& out_dir) {
    auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));

    PdeSpec spec;
    spec.family = pde_family_from_string(cfg.get_str("pde.family", "A"));
    spec.grid = cfg.get_int("pde.grid", 64);
    spec.advection = cfg.get_num("pde.advection", 1.0);
    spec.diffusivity = cfg.get_num("pde.diffusivity", 0.05);
    spec.reaction = cfg.get_num("pde.reaction", 1.0);
    spec.train_horizon = cfg.get_num("pde.train_horizon", 1.0);
    spec.max_horizon = cfg.get_num("pde.max_horizon", 2.0);
    spec.reference_dt = cfg.get_num("pde.reference_dt", 0.0025);

    std::int64_t n_train = cfg.get_int("pde.train_samples", 200);
    std::int64_t n_test = cfg.get_int("pde.test_samples", 50);
    std::vector<double> horizons = cfg.get_num_list("pde.eval_horizons", {0.5, 1.0, 1.5, 2.0});

    PdeTrainConfig tc;
    tc.hidden = cfg.get_int("pde.hidden", 32);
    tc.model_dt = cfg.get_num("pde.model_dt", 0.05);
    tc.lr = cfg.get_num("pde.lr", 2e-3);
    tc.epochs = cfg.get_int("pde.epochs", 40);
    tc.batch = cfg.get_int("pde.batch", 16);
    tc.train_horizons = cfg.get_num_list("pde.train_horizons", {0.25, 0.5, 0.75, 1.0});
    tc.seed = seed;

    std::vector<std::string> model_names =
        cfg.get_str_list("pde.models", {"M1", "M2", "M3", "M4"});
    bool run_controls = cfg.get_bool("pde.negative_controls", false);

    Rng train_rng = Rng(seed).split("pde-train-data");
    PdeDataset train = generate_pde_dataset(spec, n_train, train_rng);
    Rng test_rng = Rng(seed).split("pde-test-data");
    PdeDataset test = generate_pde_dataset(spec, n_test, test_rng);
    TrainTargets targets = targets_from_dataset(train, tc.train_horizons);

    nlohmann::json out;
    std::ostringstream csv;
    csv << "system,model,EndpointMSE,T2.0MSE,RegridDtHalf,EnergyR,PerturbMSE\n";
    for (const auto& name : model_names) {
        ModelClass mc = model_from_string(name);
        PdeModel model = train_pde_model(mc, spec, train.u0, targets, tc);
        Rng eval_rng = Rng(seed).split("pde-eval-" + name);
        auto eval = evaluate_pde(model, spec, test, horizons, eval_rng);

        nlohmann::json row;
        for (const auto& [h, v] : eval.endpoint_mse) row["mse_at"][fmt(h)] = v;
        row["endpoint_mse"] = eval.at(spec.train_horizon);
        row["t2_mse"] = eval.at(spec.max_horizon);
        if (eval.semigroup_err) row["semigroup_err"] = *eval.semigroup_err;
        if (eval.regrid_err) row["regrid_dt_half"] = *eval.regrid_err;
        if (eval.energy_corr) row["energy_corr"] = *eval.energy_corr;
        if (eval.perturb_mse) row["perturb_mse"] = *eval.perturb_mse;
        out[name] = row;

        csv << family_name(spec.family) << "," << name << "," << fmt(eval.at(spec.train_horizon))
            << "," << fmt(eval.at(spec.max_horizon)) << "," << opt_cell(eval.regrid_err) << ","
            << opt_cell(eval.energy_corr) << "," << opt_cell(eval.perturb_mse) << "\n";
    }
    write_text_file(out_dir / "results.csv", csv.str());

    if (run_controls) {
        Rng nc_rng = Rng(seed).split("pde-controls");
        auto nc = negative_controls(spec, train, test, tc, nc_rng);
        out["controls"] = {{"mse_normal", nc.mse_normal},     {"mse_nc1", nc.mse_nc1},
                           {"mse_nc2", nc.mse_nc2},           {"regrid_normal", nc.regrid_normal},
                           {"regrid_nc1", nc.regrid_nc1},     {"regrid_nc2", nc.regrid_nc2},
                           {"nc2_over_normal", nc.mse_nc2 / std::max(nc.mse_normal, 1e-300)}};
    }
    return out;
}

}  // namespace fieldlab::cli
