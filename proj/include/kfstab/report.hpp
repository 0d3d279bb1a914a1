#pragma once

// Machine-readable report document emitted by the CLI: input digest, partition
// summary, per-block Phi results, verdict, optional growth estimate, timings.

#include "kfstab/config.hpp"

#include <iomanip>
#include <sstream>

namespace kfstab {

inline constexpr const char* kToolVersion = "1.0.0";

struct ReportDocument {
    std::uint64_t input_digest = 0;
    std::uint64_t seed = 0;
    AnalysisOutcome outcome;
    std::optional<GrowthEstimate> growth;
    std::vector<std::string> warnings;
    double wall_seconds = 0.0;
};

namespace cfg {

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline Json dump_phi_result(const PhiResult& r) {
    Json j;
    j["block"] = r.block_index;
    j["phi"] = r.phi;
    j["method"] = to_string(r.method);
    j["margin"] = r.margin;
    if (r.ci) j["ci"] = Json::array({r.ci->first, r.ci->second});
    j["per_phase"] = r.per_phase;
    if (r.lower_bound_only) j["lower_bound_only"] = true;
    if (!r.notes.empty()) j["notes"] = r.notes;
    return j;
}

inline Json dump_partition(const FmoPartition& part) {
    Json blocks = Json::array();
    for (const FmoBlock& b : part.blocks) {
        Json j;
        j["index"] = b.index;
        j["col_begin"] = b.col_begin;
        j["dim"] = b.dim();
        j["alpha"] = dump_complex(b.alpha);
        j["abs_alpha"] = std::abs(b.alpha);
        j["order"] = b.order;
        j["jbar"] = b.jbar;
        blocks.push_back(std::move(j));
    }
    Json out;
    out["blocks"] = std::move(blocks);
    out["jbar_global"] = part.jbar_global;
    out["N_lcm"] = part.N_lcm;
    return out;
}

inline Json dump_diagnostics(const DiagnosticsReport& d) {
    Json j;
    j["valid"] = d.valid;
    j["proper"] = d.proper;
    j["cyclostationary"] = d.cyclostationary;
    j["monte_carlo_only"] = d.monte_carlo_only;
    if (std::isfinite(d.zeta_bound)) j["zeta_bound"] = d.zeta_bound;
    j["issues"] = d.issues;
    return j;
}

inline Json dump_growth(const GrowthEstimate& g) {
    Json j;
    j["horizons"] = g.horizons;
    j["log_mean_norms"] = g.log_mean_norms;
    j["slope"] = g.slope;
    j["slope_se"] = g.slope_se;
    j["trials"] = g.trials;
    j["seed"] = g.seed;
    return j;
}

}  // namespace cfg

inline Json to_json(const ReportDocument& doc) {
    Json j;
    j["tool_version"] = kToolVersion;
    j["input_digest"] = cfg::hex64(doc.input_digest);
    j["seed"] = doc.seed;
    j["partition"] = cfg::dump_partition(doc.outcome.partition);
    Json per_block = Json::array();
    for (const PhiResult& r : doc.outcome.report.per_block)
        per_block.push_back(cfg::dump_phi_result(r));
    j["phi"] = std::move(per_block);
    j["verdict"] = to_string(doc.outcome.report.verdict);
    j["eps_margin"] = doc.outcome.report.eps_margin;
    j["diagnostics"] = cfg::dump_diagnostics(doc.outcome.report.diagnostics);
    if (!doc.outcome.notes.empty()) j["notes"] = doc.outcome.notes;
    if (doc.growth) j["growth"] = cfg::dump_growth(*doc.growth);
    if (!doc.warnings.empty()) j["warnings"] = doc.warnings;
    j["wall_seconds"] = doc.wall_seconds;
    return j;
}

/// Per-block CSV rendering of the verdict (format=csv).
inline std::string report_csv(const ReportDocument& doc) {
    std::ostringstream os;
    os << std::setprecision(15);
    os << "block,abs_alpha,phi,margin,method,verdict\n";
    for (const PhiResult& r : doc.outcome.report.per_block) {
        double abs_alpha = std::sqrt(r.margin / std::max(r.phi, 1e-300));
        os << r.block_index << "," << abs_alpha << "," << r.phi << ","
           << r.margin << "," << to_string(r.method) << ","
           << to_string(doc.outcome.report.verdict) << "\n";
    }
    return os.str();
}

/// Trajectory export: columns t, norm_P, log_norm_P, trial_id.
inline std::string trajectory_csv(const std::vector<CovTrajectory>& trajectories) {
    std::ostringstream os;
    os << std::setprecision(15);
    os << "t,norm_P,log_norm_P,trial_id\n";
    for (size_t trial = 0; trial < trajectories.size(); ++trial) {
        const CovTrajectory& traj = trajectories[trial];
        for (size_t s = 0; s < traj.P_seq.size(); ++s) {
            double nrm = traj.P_seq[s].norm();
            os << (traj.t0 + static_cast<long long>(s)) << "," << nrm << ","
               << (nrm > 0 ? std::log(nrm) : -std::numeric_limits<double>::infinity())
               << "," << trial << "\n";
        }
    }
    return os.str();
}

}  // namespace kfstab
