#pragma once

// JSON config schema for the CLI: system or sensor_suite section, channel
// section, engine and simulation options. Complex scalars are encoded as
// plain numbers or [re, im] pairs; matrices as nested row arrays.

#include "kfstab/analysis.hpp"
#include "kfstab/schedule_builder.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>

namespace kfstab {

using Json = nlohmann::json;

namespace cfg {

inline Complex parse_complex(const Json& j, const std::string& where) {
    if (j.is_number()) return Complex(j.get<double>(), 0.0);
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number())
        return Complex(j[0].get<double>(), j[1].get<double>());
    throw Error(where + ": expected a number or an [re, im] pair");
}

inline CMatrix parse_cmatrix(const Json& j, const std::string& where) {
    if (!j.is_array() || j.empty())
        throw Error(where + ": expected a non-empty array of rows");
    const Index rows = static_cast<Index>(j.size());
    Index cols = -1;
    CMatrix m;
    for (Index r = 0; r < rows; ++r) {
        const Json& row = j[static_cast<size_t>(r)];
        if (!row.is_array())
            throw Error(where + ": row " + std::to_string(r) + " is not an array");
        if (cols < 0) {
            cols = static_cast<Index>(row.size());
            m.resize(rows, cols);
        }
        if (static_cast<Index>(row.size()) != cols)
            throw Error(where + ": row " + std::to_string(r) + " has ragged length");
        for (Index c = 0; c < cols; ++c)
            m(r, c) = parse_complex(row[static_cast<size_t>(c)],
                                    where + "[" + std::to_string(r) + "][" +
                                        std::to_string(c) + "]");
    }
    return m;
}

inline RMatrix parse_rmatrix(const Json& j, const std::string& where) {
    CMatrix m = parse_cmatrix(j, where);
    if (m.imag().cwiseAbs().maxCoeff() > 0.0)
        throw Error(where + ": expected a real matrix");
    return m.real();
}

inline RVector parse_rvector(const Json& j, const std::string& where) {
    if (!j.is_array()) throw Error(where + ": expected an array");
    RVector v(static_cast<Index>(j.size()));
    for (size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number())
            throw Error(where + "[" + std::to_string(i) + "]: expected a number");
        v(static_cast<Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline Json dump_complex(const Complex& z) {
    if (z.imag() == 0.0) return Json(z.real());
    return Json::array({z.real(), z.imag()});
}

inline Json dump_cmatrix(const CMatrix& m) {
    Json rows = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(dump_complex(m(r, c)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json dump_rmatrix(const RMatrix& m) { return dump_cmatrix(m.cast<Complex>()); }

inline ChannelModel parse_channel(const Json& j, const std::string& where) {
    if (!j.is_object()) throw Error(where + ": expected an object");
    std::string variant = j.value("variant", "");
    if (variant == "iid") {
        if (j.contains("phase_probs")) {
            std::vector<RVector> pp;
            for (size_t i = 0; i < j["phase_probs"].size(); ++i)
                pp.push_back(parse_rvector(j["phase_probs"][i],
                                           where + ".phase_probs[" +
                                               std::to_string(i) + "]"));
            return ChannelModel::iid(pp);
        }
        if (!j.contains("probs")) throw Error(where + ": iid needs probs");
        return ChannelModel::iid(parse_rvector(j["probs"], where + ".probs"));
    }
    if (variant == "gilbert_elliott") {
        for (const char* f : {"a", "b", "good_emit", "bad_emit"})
            if (!j.contains(f))
                throw Error(where + ": gilbert_elliott needs field '" +
                            std::string(f) + "'");
        return ChannelModel::gilbert_elliott(j["a"].get<double>(),
                                             j["b"].get<double>(),
                                             j["good_emit"].get<int>(),
                                             j["bad_emit"].get<int>());
    }
    if (variant == "finite_markov") {
        ChannelModel ch;
        ch.variant = ChannelVariant::FiniteMarkov;
        if (!j.contains("kernels") || !j["kernels"].is_array() || j["kernels"].empty())
            throw Error(where + ": finite_markov needs a non-empty kernels array");
        for (size_t m = 0; m < j["kernels"].size(); ++m)
            ch.kernels.push_back(parse_rmatrix(
                j["kernels"][m], where + ".kernels[" + std::to_string(m) + "]"));
        ch.period = static_cast<int>(ch.kernels.size());
        ch.num_states = static_cast<int>(ch.kernels[0].rows());
        if (!j.contains("emission")) throw Error(where + ": missing emission map");
        for (const auto& e : j["emission"]) ch.emission.push_back(e.get<int>());
        if (!j.contains("mu0")) throw Error(where + ": missing mu0");
        ch.mu0 = parse_rvector(j["mu0"], where + ".mu0");
        ch.check_finite_shape();
        return ch;
    }
    if (variant == "gaussian_hidden") {
        ChannelModel ch;
        ch.variant = ChannelVariant::GaussianHidden;
        if (!j.contains("K") || !j.contains("Sigma") || !j.contains("regions"))
            throw Error(where + ": gaussian_hidden needs K, Sigma, regions");
        ch.gaussian.K = parse_cmatrix(j["K"], where + ".K");
        ch.gaussian.Sigma = parse_rmatrix(j["Sigma"], where + ".Sigma");
        for (size_t i = 0; i < j["regions"].size(); ++i) {
            const Json& reg = j["regions"][i];
            std::string rw = where + ".regions[" + std::to_string(i) + "]";
            if (!reg.contains("lo") || !reg.contains("hi") || !reg.contains("emit"))
                throw Error(rw + ": needs lo, hi, emit");
            ch.gaussian.box_lo.push_back(parse_rvector(reg["lo"], rw + ".lo"));
            ch.gaussian.box_hi.push_back(parse_rvector(reg["hi"], rw + ".hi"));
            ch.gaussian.region_labels.push_back(reg["emit"].get<int>());
        }
        return ch;
    }
    throw Error(where + ": unknown channel variant '" + variant + "'");
}

}  // namespace cfg

struct SimulationOptions {
    std::vector<long long> horizons;
    long long trials = 2000;
    std::uint64_t seed = 1;
    std::optional<CMatrix> P0;  // defaults to the system P0
};

struct AnalysisConfig {
    SystemModel system;       // resolved (aggregated if sensor_suite given)
    ChannelModel channel;     // resolved product channel
    EngineOptions engine;
    SimulationOptions simulation;
    bool from_sensor_suite = false;
    std::uint64_t digest = 0;  // content hash of the raw config text
    std::vector<std::string> warnings;
};

namespace cfg {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline SystemModel parse_system(const Json& j) {
    SystemModel sys;
    if (!j.contains("A")) throw Error("system: missing A");
    sys.A = parse_cmatrix(j["A"], "system.A");
    sys.n = sys.A.rows();
    if (!j.contains("alphabet") || !j["alphabet"].is_array() || j["alphabet"].empty())
        throw Error("system: missing or empty alphabet");
    for (size_t i = 0; i < j["alphabet"].size(); ++i) {
        const Json& e = j["alphabet"][i];
        std::string where = "system.alphabet[" + std::to_string(i) + "]";
        MeasurementPair pr;
        if (!e.contains("C") || !e.contains("R"))
            throw Error(where + ": needs C and R");
        pr.C = parse_cmatrix(e["C"], where + ".C");
        pr.R = parse_cmatrix(e["R"], where + ".R");
        pr.label = e.value("label", "pair" + std::to_string(i));
        sys.alphabet.pairs.push_back(std::move(pr));
    }
    sys.p = sys.alphabet.pairs[0].C.rows();
    sys.Q = j.contains("Q") ? parse_cmatrix(j["Q"], "system.Q")
                            : CMatrix(CMatrix::Identity(sys.n, sys.n));
    sys.P0 = j.contains("P0") ? parse_cmatrix(j["P0"], "system.P0")
                              : CMatrix(CMatrix::Identity(sys.n, sys.n));
    sys.check_dimensions();
    return sys;
}

inline std::pair<SensorSuite, SchedulePlan> parse_sensor_suite(const Json& j) {
    SensorSuite suite;
    if (!j.contains("F")) throw Error("sensor_suite: missing F");
    suite.F = parse_cmatrix(j["F"], "sensor_suite.F");
    suite.N_cov = j.contains("N")
                      ? parse_cmatrix(j["N"], "sensor_suite.N")
                      : CMatrix(CMatrix::Identity(suite.F.rows(), suite.F.rows()));
    if (!j.contains("sensors") || !j["sensors"].is_array() || j["sensors"].empty())
        throw Error("sensor_suite: missing sensors");
    for (size_t s = 0; s < j["sensors"].size(); ++s) {
        const Json& e = j["sensors"][s];
        std::string where = "sensor_suite.sensors[" + std::to_string(s) + "]";
        Sensor sen;
        if (!e.contains("H")) throw Error(where + ": missing H");
        sen.H = parse_cmatrix(e["H"], where + ".H");
        sen.E = e.contains("E")
                    ? parse_cmatrix(e["E"], where + ".E")
                    : CMatrix(CMatrix::Identity(sen.H.rows(), sen.H.rows()));
        suite.sensors.push_back(std::move(sen));
    }
    suite.R_slots = j.value("R_slots", 1);

    SchedulePlan plan;
    if (!j.contains("schedule") || !j["schedule"].is_array() || j["schedule"].empty())
        throw Error("sensor_suite: missing schedule (list of selection matrices)");
    for (size_t m = 0; m < j["schedule"].size(); ++m)
        plan.selection.push_back(parse_rmatrix(
            j["schedule"][m], "sensor_suite.schedule[" + std::to_string(m) + "]"));
    return {std::move(suite), std::move(plan)};
}

}  // namespace cfg

inline AnalysisConfig parse_config(const Json& root, const std::string& raw_text) {
    if (!root.is_object()) throw Error("config: top level must be an object");
    AnalysisConfig cfg_out;
    cfg_out.digest = cfg::fnv1a(raw_text);

    const bool has_system = root.contains("system");
    const bool has_suite = root.contains("sensor_suite");
    if (has_system == has_suite)
        throw Error("config: exactly one of {system, sensor_suite} required");
    if (!root.contains("channel")) throw Error("config: missing channel section");
    ChannelModel channel = cfg::parse_channel(root["channel"], "channel");

    if (has_system) {
        cfg_out.system = cfg::parse_system(root["system"]);
        cfg_out.channel = std::move(channel);
    } else {
        auto [suite, plan] = cfg::parse_sensor_suite(root["sensor_suite"]);
        plan.loss = std::move(channel);  // channel section = slot-loss model
        AggregateResult agg = aggregate(suite, plan);
        cfg_out.system = std::move(agg.system);
        cfg_out.channel = std::move(agg.channel);
        cfg_out.warnings = std::move(agg.warnings);
        cfg_out.from_sensor_suite = true;
    }

    if (root.contains("engine")) {
        const Json& e = root["engine"];
        cfg_out.engine.strategy =
            strategy_from_string(e.value("strategy", std::string("auto")));
        cfg_out.engine.lattice_cap = e.value("lattice_cap", cfg_out.engine.lattice_cap);
        cfg_out.engine.sigma_work_cap =
            e.value("sigma_work_cap", cfg_out.engine.sigma_work_cap);
        if (e.contains("tolerances")) {
            const Json& t = e["tolerances"];
            Tolerances& tol = cfg_out.engine.tol;
            tol.tol_rank = t.value("tol_rank", tol.tol_rank);
            tol.tol_orth = t.value("tol_orth", tol.tol_orth);
            tol.tol_angle = t.value("tol_angle", tol.tol_angle);
            tol.n_max_order = t.value("n_max_order", tol.n_max_order);
            tol.eps_margin = t.value("eps_margin", tol.eps_margin);
        }
        if (e.contains("monte_carlo")) {
            const Json& m = e["monte_carlo"];
            MonteCarloOptions& mc = cfg_out.engine.mc;
            mc.trials = m.value("trials", mc.trials);
            mc.seed = m.value("seed", mc.seed);
            mc.min_hits = m.value("min_hits", mc.min_hits);
            if (m.contains("t_grid"))
                for (const auto& t : m["t_grid"])
                    mc.t_grid.push_back(t.get<long long>());
        }
    }
    if (root.contains("simulation")) {
        const Json& s = root["simulation"];
        cfg_out.simulation.trials = s.value("trials", cfg_out.simulation.trials);
        cfg_out.simulation.seed = s.value("seed", cfg_out.simulation.seed);
        if (s.contains("horizons"))
            for (const auto& h : s["horizons"])
                cfg_out.simulation.horizons.push_back(h.get<long long>());
        if (s.contains("P0"))
            cfg_out.simulation.P0 = cfg::parse_cmatrix(s["P0"], "simulation.P0");
    }
    return cfg_out;
}

inline AnalysisConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file '" + path + "'");
    std::string raw((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    Json root;
    try {
        root = Json::parse(raw);
    } catch (const std::exception& e) {
        throw Error("config parse error in '" + path + "': " + e.what());
    }
    return parse_config(root, raw);
}

}  // namespace kfstab
