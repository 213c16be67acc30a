#include "fieldlab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

namespace fieldlab::cli {

namespace fs = std::filesystem;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file '" + path.string() + "'");
    out << content;
}

namespace {

fs::path resolve_out_dir(const Config& cfg, std::optional<std::int64_t> seed_override,
                         const std::string& out_override) {
    if (!out_override.empty()) return fs::path(out_override);
    std::string kind = cfg.get_str("kind", "");
    std::int64_t seed = seed_override.value_or(cfg.get_int("seed", 0));
    std::string leaf = cfg.get_str("out", "runs/" + kind + "-seed" + std::to_string(seed));
    const char* root = std::getenv("FIELDLAB_OUT");
    if (root != nullptr && *root != '\0') return fs::path(root) / leaf;
    return fs::path(leaf);
}

}  // namespace

int run_experiment(const std::string& config_path, const std::string& out_override,
                   std::optional<std::int64_t> seed_override) {
    Config cfg;
    std::string kind;
    fs::path out_dir;
    try {
        cfg = Config::parse_file(config_path);
        if (seed_override.has_value()) cfg.override_int("seed", *seed_override);
        kind = cfg.get_str("kind", "");
        if (kind.empty()) throw ConfigError("config is missing the experiment 'kind'");
        out_dir = resolve_out_dir(cfg, seed_override, out_override);
    } catch (const ConfigError& e) {
        std::cerr << "config error (" << config_path << "): " << e.what() << "\n";
        return 2;
    }

    auto t_start = std::chrono::steady_clock::now();
    nlohmann::json results;
    try {
        fs::create_directories(out_dir);
        if (kind == "teacherflow")
            results = run_teacherflow_experiment(cfg, out_dir);
        else if (kind == "pde")
            results = run_pde_experiment(cfg, out_dir);
        else if (kind == "reveal")
            results = run_reveal_experiment(cfg, out_dir);
        else if (kind == "continual")
            results = run_continual_experiment(cfg, out_dir);
        else if (kind == "pareto")
            results = run_pareto_experiment(cfg, out_dir);
        else if (kind == "metrics-report")
            results = run_metrics_report_experiment(cfg, out_dir);
        else
            throw ConfigError("unknown experiment kind '" + kind + "'");
        cfg.require_consumed();
    } catch (const ConfigError& e) {
        std::cerr << "config error (" << config_path << "): " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 1;
    }

    try {
        write_text_file(out_dir / "results.json", results.dump(2) + "\n");
        double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        nlohmann::json manifest;
        manifest["version"] = "fieldlab 0.1.0";
        manifest["kind"] = kind;
        manifest["seed"] = cfg.get_int("seed", 0);
        manifest["config_hash"] = hash_hex(fnv1a_hash(cfg.raw_text()));
        manifest["config"] = cfg.materialized();
        manifest["wall_clock_seconds"] = seconds;
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(out_dir))
            if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
                files.push_back(entry.path().filename().string());
        std::sort(files.begin(), files.end());
        manifest["files"] = files;
        write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
        std::cerr << "failed to write outputs: " << e.what() << "\n";
        return 1;
    }
    std::cout << "wrote " << (out_dir / "results.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

namespace {

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::map<std::string, std::vector<double>>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    } else if (j.is_number()) {
        out[prefix].push_back(j.get<double>());
    } else if (j.is_boolean()) {
        out[prefix].push_back(j.get<bool>() ? 1.0 : 0.0);
    }
    // arrays and strings are skipped in the numeric summary
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.empty()) return 0.0;
    double pos = q * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double w = pos - static_cast<double>(lo);
    return (1.0 - w) * v[lo] + w * v[hi];
}

}  // namespace

int report_command(const std::string& results_dir) {
    fs::path root(results_dir);
    if (!fs::exists(root)) {
        std::cerr << "report: directory '" << results_dir << "' does not exist\n";
        return 2;
    }
    std::map<std::string, std::vector<double>> columns;
    std::vector<std::string> skipped;
    std::int64_t runs = 0;

    std::vector<fs::path> candidates;
    if (fs::exists(root / "results.json")) candidates.push_back(root / "results.json");
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().filename() == "results.json" &&
            entry.path() != root / "results.json")
            candidates.push_back(entry.path());
    std::sort(candidates.begin(), candidates.end());

    for (const auto& path : candidates) {
        try {
            nlohmann::json j = nlohmann::json::parse(read_text_file(path.string()));
            flatten_json(j, "", columns);
            ++runs;
        } catch (const std::exception& e) {
            skipped.push_back(path.string() + " (" + e.what() + ")");
            std::cerr << "report: skipping malformed result file " << path << "\n";
        }
    }

    std::ostringstream csv, txt;
    csv << "key,count,median,q25,q75\n";
    txt << "summary over " << runs << " run(s)\n";
    for (const auto& [key, values] : columns) {
        double med = quantile(values, 0.5);
        double q25 = quantile(values, 0.25);
        double q75 = quantile(values, 0.75);
        csv << key << "," << values.size() << "," << med << "," << q25 << "," << q75 << "\n";
        txt << "  " << key << ": median " << med << "  iqr [" << q25 << ", " << q75 << "]  n="
            << values.size() << "\n";
    }
    if (!skipped.empty()) {
        csv << "# skipped malformed files: " << skipped.size() << "\n";
        txt << "skipped malformed files:\n";
        for (const auto& s : skipped) txt << "  " << s << "\n";
    }
    write_text_file(root / "summary.csv", csv.str());
    write_text_file(root / "summary.txt", txt.str());
    std::cout << txt.str();
    return 0;
}

int sweep_command(const std::string& config_path, const std::vector<std::int64_t>& seeds,
                  std::int64_t jobs) {
    if (seeds.empty()) {
        std::cerr << "sweep: no seeds given\n";
        return 2;
    }
    fs::path base;
    try {
        Config cfg = Config::parse_file(config_path);
        base = resolve_out_dir(cfg, std::nullopt, "");
    } catch (const ConfigError& e) {
        std::cerr << "config error (" << config_path << "): " << e.what() << "\n";
        return 2;
    }

    std::vector<int> codes(seeds.size(), 0);
    std::size_t next = 0;
    std::vector<std::thread> workers;
    std::int64_t n_workers = std::max<std::int64_t>(1, std::min<std::int64_t>(jobs, static_cast<std::int64_t>(seeds.size())));
    // each worker claims run indices by striding; runs share no mutable state
    for (std::int64_t w = 0; w < n_workers; ++w) {
        workers.emplace_back([&, w]() {
            for (std::size_t i = static_cast<std::size_t>(w); i < seeds.size();
                 i += static_cast<std::size_t>(n_workers)) {
                fs::path out = base / ("seed" + std::to_string(seeds[i]));
                codes[i] = run_experiment(config_path, out.string(), seeds[i]);
            }
        });
    }
    (void)next;
    for (auto& t : workers) t.join();
    for (int c : codes)
        if (c != 0) return c;
    return 0;
}

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"propagation-field laboratory"};
    app.require_subcommand(1);

    std::string run_config;
    std::string run_out;
    auto* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("config", run_config, "config file path")->required();
    run->add_option("--out", run_out, "output directory override");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "aggregate results.json files into a summary");
    report->add_option("dir", report_dir, "directory of runs")->required();

    std::string sweep_config;
    std::string sweep_seeds = "0";
    std::int64_t sweep_jobs = 1;
    auto* sweep = app.add_subcommand("sweep", "run one config across seeds");
    sweep->add_option("config", sweep_config, "config file path")->required();
    sweep->add_option("--seeds", sweep_seeds, "comma-separated seed list");
    sweep->add_option("--jobs", sweep_jobs, "parallel workers");

    std::vector<const char*> argv;
    argv.push_back("fieldlab");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return run_experiment(run_config, run_out);
        if (report->parsed()) return report_command(report_dir);
        if (sweep->parsed()) {
            std::vector<std::int64_t> seeds;
            std::stringstream ss(sweep_seeds);
            std::string tok;
            while (std::getline(ss, tok, ','))
                if (!tok.empty()) seeds.push_back(std::stoll(tok));
            return sweep_command(sweep_config, seeds, sweep_jobs);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace fieldlab::cli
