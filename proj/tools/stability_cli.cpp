// Command-line front end: analyze / simulate / phi-table / validate.
//
// Exit codes for `analyze`: 0 = Stable, 10 = Unstable, 20 = Inconclusive,
// 1 = error. Other verbs return 0 on success, 1 on error.

#include "kfstab/kfstab.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace kfstab;

int env_threads() {
    const char* v = std::getenv("KFSTAB_THREADS");
    if (!v) return 1;
    int n = std::atoi(v);
    return n >= 1 ? n : 1;
}

void write_out(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << "\n";
        return;
    }
    std::ofstream out(out_path);
    if (!out) throw Error("cannot open output file '" + out_path + "'");
    out << text;
}

std::vector<long long> parse_horizons(const std::string& spec) {
    std::vector<long long> out;
    if (spec.empty()) return out;
    if (spec.find(':') != std::string::npos) {
        long long lo, hi, step;
        char c1, c2;
        std::istringstream is(spec);
        if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' ||
            step <= 0)
            throw Error("bad horizon spec '" + spec + "' (want lo:hi:step)");
        for (long long t = lo; t <= hi; t += step) out.push_back(t);
        return out;
    }
    std::istringstream is(spec);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stoll(tok));
    return out;
}

std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> out;
    if (spec.empty()) return out;
    if (spec.find(':') != std::string::npos) {
        double lo, hi, step;
        char c1, c2;
        std::istringstream is(spec);
        if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' ||
            step <= 0)
            throw Error("bad grid spec '" + spec + "' (want lo:hi:step)");
        for (double v = lo; v <= hi + 1e-12; v += step) out.push_back(v);
        return out;
    }
    std::istringstream is(spec);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

struct CommonFlags {
    std::string config_path;
    std::string out_path;
    std::string format = "json";
    std::string strategy;
    std::string horizons;
    long long trials = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    double eps_margin = -1.0;
};

void apply_flags(AnalysisConfig& cfg, const CommonFlags& fl) {
    if (!fl.strategy.empty())
        cfg.engine.strategy = strategy_from_string(fl.strategy);
    if (fl.eps_margin > 0.0) cfg.engine.tol.eps_margin = fl.eps_margin;
    if (fl.trials >= 0) {
        cfg.engine.mc.trials = fl.trials;
        cfg.simulation.trials = fl.trials;
    }
    if (fl.seed_set) {
        cfg.engine.mc.seed = fl.seed;
        cfg.simulation.seed = fl.seed;
    }
    if (!fl.horizons.empty()) cfg.simulation.horizons = parse_horizons(fl.horizons);
    cfg.engine.mc.threads = env_threads();
}

int run_analyze(const CommonFlags& fl) {
    auto start = std::chrono::steady_clock::now();
    AnalysisConfig cfg = load_config(fl.config_path);
    apply_flags(cfg, fl);

    ReportDocument doc;
    doc.input_digest = cfg.digest;
    doc.seed = cfg.engine.mc.seed;
    doc.warnings = cfg.warnings;
    doc.outcome = analyze(cfg.system, cfg.channel, cfg.engine);
    doc.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();

    if (fl.format == "csv")
        write_out(report_csv(doc), fl.out_path);
    else
        write_out(to_json(doc).dump(2), fl.out_path);

    switch (doc.outcome.report.verdict) {
        case Verdict::Stable: return 0;
        case Verdict::Unstable: return 10;
        case Verdict::Inconclusive: return 20;
    }
    return 1;
}

int run_simulate(const CommonFlags& fl, bool compare,
                 const std::string& traj_path, long long traj_count) {
    AnalysisConfig cfg = load_config(fl.config_path);
    apply_flags(cfg, fl);
    std::vector<long long> horizons = cfg.simulation.horizons;
    if (horizons.empty())
        for (long long t = 10; t <= 200; t += 10) horizons.push_back(t);
    CMatrix P0 = cfg.simulation.P0 ? *cfg.simulation.P0 : cfg.system.P0;

    GrowthEstimate est =
        estimate_growth(cfg.system, cfg.channel, P0, 0, horizons,
                        cfg.simulation.trials, cfg.simulation.seed,
                        cfg.engine.tol, env_threads());

    std::ostringstream csv;
    csv << std::setprecision(15);
    csv << "horizon,log_mean_norm\n";
    for (size_t i = 0; i < est.horizons.size(); ++i)
        csv << est.horizons[i] << "," << est.log_mean_norms[i] << "\n";
    write_out(csv.str(), fl.out_path);

    std::ostringstream summary;
    summary << std::setprecision(15);
    summary << "slope=" << est.slope << " se=" << est.slope_se
            << " trials=" << est.trials << " seed=" << est.seed;
    if (compare) {
        AnalysisOutcome outcome = analyze(cfg.system, cfg.channel, cfg.engine);
        bool slope_up = est.slope > 3.0 * est.slope_se;
        bool verdict_up = outcome.report.verdict == Verdict::Unstable;
        summary << " verdict=" << to_string(outcome.report.verdict)
                << (slope_up == verdict_up ? " agrees with verdict"
                                           : " DISAGREES with verdict");
    }
    std::cerr << summary.str() << "\n";

    if (!traj_path.empty()) {
        std::vector<CovTrajectory> trajs;
        for (long long trial = 0; trial < traj_count; ++trial) {
            ChannelTrace trace =
                sample_trace(cfg.channel, 0, horizons.back(),
                             split_seed(cfg.simulation.seed,
                                        static_cast<std::uint64_t>(trial)));
            trajs.push_back(compose(P0, trace, cfg.system, cfg.engine.tol));
        }
        write_out(trajectory_csv(trajs), traj_path);
    }
    return 0;
}

int run_phi_table(const CommonFlags& fl, const std::string& param,
                  const std::string& grid_spec) {
    if (param != "lambda")
        throw Error("unknown sweep parameter '" + param +
                    "' (supported: lambda = i.i.d. loss probability)");
    std::ifstream in(fl.config_path);
    if (!in) throw Error("cannot open config file '" + fl.config_path + "'");
    std::string raw((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    Json root = Json::parse(raw);

    std::vector<double> grid = parse_grid(grid_spec);
    std::ostringstream csv;
    csv << std::setprecision(15);
    csv << "lambda";
    bool header_done = false;
    std::string rows;
    for (double lambda : grid) {
        root["channel"] = {{"variant", "iid"},
                           {"probs", Json::array({lambda, 1.0 - lambda})}};
        AnalysisConfig cfg = parse_config(root, root.dump());
        apply_flags(cfg, fl);
        AnalysisOutcome outcome = analyze(cfg.system, cfg.channel, cfg.engine);
        if (!header_done) {
            for (const PhiResult& r : outcome.report.per_block)
                csv << ",phi_" << r.block_index;
            csv << ",max_margin,verdict\n";
            header_done = true;
        }
        std::ostringstream row;
        row << std::setprecision(15) << lambda;
        double max_margin = 0.0;
        for (const PhiResult& r : outcome.report.per_block) {
            row << "," << r.phi;
            max_margin = std::max(max_margin, r.margin);
        }
        row << "," << max_margin << "," << to_string(outcome.report.verdict)
            << "\n";
        rows += row.str();
    }
    if (!header_done) csv << ",max_margin,verdict\n";  // empty grid: header only
    write_out(csv.str() + rows, fl.out_path);
    return 0;
}

int run_validate(const CommonFlags& fl) {
    AnalysisConfig cfg = load_config(fl.config_path);
    DiagnosticsReport rep = validate(cfg.system, cfg.channel);
    Json j = cfg::dump_diagnostics(rep);
    j["input_digest"] = cfg::hex64(cfg.digest);
    if (!cfg.warnings.empty()) j["warnings"] = cfg.warnings;
    write_out(j.dump(2), fl.out_path);
    return rep.valid ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kalman-filter stability under hidden-Markov measurement channels"};
    app.require_subcommand(1);

    CommonFlags fl;
    bool compare = false;
    std::string param = "lambda", grid_spec, traj_path;
    long long traj_count = 1;

    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config)
            sub->add_option("config", fl.config_path, "config file (JSON)")
                ->required();
        sub->add_option("--out", fl.out_path, "output path (default stdout)");
        sub->add_option("--seed", fl.seed, "RNG seed")
            ->each([&](const std::string&) { fl.seed_set = true; });
        sub->add_option("--trials", fl.trials, "Monte Carlo trials");
        sub->add_option("--horizons", fl.horizons,
                        "horizon list 'a,b,c' or 'lo:hi:step'");
        sub->add_option("--strategy", fl.strategy,
                        "auto|closed_form|exact|monte_carlo");
        sub->add_option("--eps-margin", fl.eps_margin,
                        "half-width of the inconclusive band");
        sub->add_option("--format", fl.format, "json|csv")
            ->check(CLI::IsMember({"json", "csv"}));
    };

    CLI::App* analyze_cmd = app.add_subcommand("analyze", "Phi + Theorem verdict");
    add_common(analyze_cmd);

    CLI::App* simulate_cmd =
        app.add_subcommand("simulate", "Riccati growth-rate simulation");
    add_common(simulate_cmd);
    simulate_cmd->add_flag("--compare", compare,
                           "annotate agreement with the analytic verdict");
    simulate_cmd->add_option("--export-trajectories", traj_path,
                             "write per-trial covariance norms as CSV");
    simulate_cmd->add_option("--trajectory-count", traj_count,
                             "number of exported trajectories");

    CLI::App* table_cmd = app.add_subcommand("phi-table", "parameter sweep");
    add_common(table_cmd);
    table_cmd->add_option("--param", param, "swept parameter (lambda)");
    table_cmd->add_option("--grid", grid_spec, "grid 'a,b,c' or 'lo:hi:step'")
        ->required();

    CLI::App* validate_cmd = app.add_subcommand("validate", "model diagnostics");
    add_common(validate_cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(analyze_cmd)) return run_analyze(fl);
        if (app.got_subcommand(simulate_cmd))
            return run_simulate(fl, compare, traj_path, traj_count);
        if (app.got_subcommand(table_cmd)) return run_phi_table(fl, param, grid_spec);
        if (app.got_subcommand(validate_cmd)) return run_validate(fl);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
