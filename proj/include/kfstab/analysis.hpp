#pragma once

// End-to-end orchestration: partition -> lattice -> Phi (with strategy
// fallback) -> Theorem verdict. Shared by the CLI and the test suite.

#include "kfstab/kalman_sim.hpp"
#include "kfstab/phi_engine.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kfstab {

enum class Strategy { Auto, ClosedForm, Exact, MonteCarlo };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::Auto: return "auto";
        case Strategy::ClosedForm: return "closed_form";
        case Strategy::Exact: return "exact";
        case Strategy::MonteCarlo: return "monte_carlo";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "auto") return Strategy::Auto;
    if (s == "closed_form") return Strategy::ClosedForm;
    if (s == "exact") return Strategy::Exact;
    if (s == "monte_carlo") return Strategy::MonteCarlo;
    throw Error("unknown strategy '" + s +
                "' (expected auto|closed_form|exact|monte_carlo)");
}

struct EngineOptions {
    Strategy strategy = Strategy::Auto;
    Tolerances tol;
    long long lattice_cap = 1000000;     // |A|^N enumeration cap
    long long sigma_work_cap = 10000000; // path-weight operations cap
    MonteCarloOptions mc;
};

struct AnalysisOutcome {
    FmoPartition partition;
    StabilityReport report;
    std::vector<std::string> notes;  // fallback notices and warnings
};

/// Run the full pipeline with the strategy preference order
/// closed_form -> exact -> monte_carlo (Auto), or a forced single strategy.
inline AnalysisOutcome analyze(const SystemModel& sys, const ChannelModel& channel,
                               const EngineOptions& opt = {}) {
    opt.tol.check();
    AnalysisOutcome out;
    out.report.diagnostics = validate(sys, channel);
    if (!out.report.diagnostics.valid) {
        std::string what = "invalid model:";
        for (const auto& issue : out.report.diagnostics.issues)
            what += " " + issue + ";";
        throw Error(what);
    }
    out.partition = partition(sys, opt.tol);
    const bool finite = channel.is_finite();

    std::vector<PhiResult> results;
    for (const FmoBlock& blk : out.partition.blocks) {
        if (std::abs(blk.alpha) == 0.0) continue;  // auto-stable
        std::optional<PhiResult> res;

        auto try_closed = [&]() -> std::optional<PhiResult> {
            if (!finite) return std::nullopt;
            return phi_closed_form(blk, sys, channel, opt.tol);
        };
        auto try_exact = [&]() -> std::optional<PhiResult> {
            if (!finite) return std::nullopt;
            try {
                KernelLattice lat =
                    build_lattice(blk, sys.alphabet, opt.tol, opt.lattice_cap);
                return phi_exact(blk, lat, sys, channel, opt.tol,
                                 opt.sigma_work_cap, &out.report.diagnostics);
            } catch (const Error& e) {
                out.notes.push_back("block " + std::to_string(blk.index) +
                                    ": exact strategy infeasible (" + e.what() +
                                    ")");
                return std::nullopt;
            }
        };
        auto run_mc = [&]() {
            MonteCarloOptions mc = opt.mc;
            mc.seed = split_seed(opt.mc.seed,
                                 static_cast<std::uint64_t>(blk.index) + 101);
            return phi_monte_carlo(blk, sys, channel, mc, opt.tol);
        };

        switch (opt.strategy) {
            case Strategy::ClosedForm:
                res = try_closed();
                if (!res)
                    throw Error("closed_form strategy forced but not applicable "
                                "to block " + std::to_string(blk.index));
                break;
            case Strategy::Exact:
                res = try_exact();
                if (!res)
                    throw Error("exact strategy forced but infeasible for block " +
                                std::to_string(blk.index));
                break;
            case Strategy::MonteCarlo:
                res = run_mc();
                break;
            case Strategy::Auto:
                res = try_closed();
                if (!res) res = try_exact();
                if (!res) {
                    out.notes.push_back("block " + std::to_string(blk.index) +
                                        ": falling back to monte_carlo");
                    res = run_mc();
                }
                break;
        }
        results.push_back(std::move(*res));
    }
    out.report = [&] {
        StabilityReport rep = verdict(out.partition, std::move(results), opt.tol);
        rep.diagnostics = validate(sys, channel);
        return rep;
    }();
    return out;
}

}  // namespace kfstab
