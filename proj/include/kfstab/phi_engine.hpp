#pragma once

// Per-block stability exponent Phi by three strategies (exact spectral,
// closed form, Monte Carlo rate regression) and the |alpha|^2 Phi verdict.

#include "kfstab/model.hpp"
#include "kfstab/observability.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

namespace kfstab {

// ---------------------------------------------------------------------------
// Kernel walker: evolves the forward image v_m = A^m ker O(Gamma_{t,m}) via
//   v_0 = C^dim,   v_{m+1} = A (v_m ∩ ker C_gamma(m)).
// The recursion is step-index free, so transitions can be memoized as a
// finite-state machine discovered lazily. v_m is trivial iff O has FCR.

class KernelWalker {
public:
    KernelWalker(const FmoBlock& block, const MeasurementAlphabet& alphabet,
                 Tolerances tol = {})
        : block_(&block), tol_(tol) {
        if (std::abs(block.alpha) == 0.0)
            throw Error("KernelWalker: nilpotent block has no FCR rate");
        for (const CMatrix& c : block.C_parts) {
            bool zero = c.cwiseAbs().maxCoeff() == 0.0;
            step_kernels_.push_back(zero ? Subspace::full(block.dim())
                                         : nullspace(c, tol_));
        }
        states_.push_back(Subspace::full(block.dim()));  // id 0 = start
        states_.push_back(Subspace::trivial(block.dim()));
        trans_.resize(2 * step_kernels_.size(), -1);
    }

    int start() const { return 0; }
    int trivial_id() const { return 1; }
    bool is_trivial(int id) const { return id == 1; }
    const Subspace& state(int id) const { return states_[static_cast<size_t>(id)]; }
    int num_states() const { return static_cast<int>(states_.size()); }

    int step(int id, int gamma) {
        size_t slot = static_cast<size_t>(id) * step_kernels_.size() +
                      static_cast<size_t>(gamma);
        int cached = trans_[slot];
        if (cached >= 0) return cached;
        Subspace meet =
            intersect(states_[static_cast<size_t>(id)],
                      step_kernels_[static_cast<size_t>(gamma)], tol_);
        Subspace next =
            meet.is_trivial()
                ? meet
                : orthonormalize(block_->dim(),
                                 CMatrix(block_->A_block * meet.basis()), tol_);
        int nid = find_or_add(next);
        trans_[slot] = nid;
        return nid;
    }

    /// ker O(Gamma_{t,m}) = A^{-m} v_m for the state reached after m steps.
    Subspace kernel_of(int id, long long m) const {
        const Subspace& v = states_[static_cast<size_t>(id)];
        if (v.is_trivial() || v.is_full() || m == 0) return v;
        return orthonormalize(block_->dim(),
                              CMatrix(block_->power(-m) * v.basis()), tol_);
    }

private:
    int find_or_add(const Subspace& s) {
        for (size_t i = 0; i < states_.size(); ++i)
            if (states_[i].dim() == s.dim() && subspace_equal(states_[i], s, tol_))
                return static_cast<int>(i);
        states_.push_back(s);
        trans_.resize(states_.size() * step_kernels_.size(), -1);
        return static_cast<int>(states_.size()) - 1;
    }

    const FmoBlock* block_;
    Tolerances tol_;
    std::vector<Subspace> step_kernels_;  // ker C_k^(gamma) per alphabet entry
    std::vector<Subspace> states_;
    std::vector<int> trans_;
};

// ---------------------------------------------------------------------------

/// Finite-state representation of the maps T_t / sigma_t over one period
/// block of length M: matrices[(i, j)][e', e] accumulates the probability of
/// reaching e' from e while psi(Gamma_{t,M}) ∩ K_j = K_i.
struct SigmaOperator {
    int phase = 0;
    long long M = 0;  // common multiple of N and tau (smallest is used)
    int num_states = 0;
    int lattice_size = 0;  // I + 1
    std::map<std::pair<int, int>, RMatrix> matrices;

    const RMatrix* find(int i, int j) const {
        auto it = matrices.find({i, j});
        return it == matrices.end() ? nullptr : &it->second;
    }

    /// For each j, summing sigma(i, j) over i must reproduce the M-step chain
    /// (column sums 1). Returns the worst deviation.
    double conservation_defect() const {
        double worst = 0.0;
        for (int j = 0; j < lattice_size; ++j) {
            RVector col_sums = RVector::Zero(num_states);
            for (int i = 0; i < lattice_size; ++i)
                if (const RMatrix* m = find(i, j))
                    col_sums += m->colwise().sum().transpose();
            worst = std::max(worst, (col_sums.array() - 1.0).abs().maxCoeff());
        }
        return worst;
    }
};

inline SigmaOperator build_sigma(const FmoBlock& block, const KernelLattice& lattice,
                                 const SystemModel& sys, const ChannelModel& channel,
                                 int t, const Tolerances& tol = {},
                                 long long work_cap = 10000000) {
    channel.check_finite_shape();
    SigmaOperator sig;
    sig.phase = t;
    sig.M = std::lcm(static_cast<long long>(block.order),
                     static_cast<long long>(channel.period));
    sig.num_states = channel.num_states;
    sig.lattice_size = lattice.size();

    KernelWalker walker(block, sys.alphabet, tol);
    const int E = channel.num_states;

    // frontier: walker state id -> W with W(f, e) = P(rho_{t+m} = f, class | rho_t = e)
    std::map<int, RMatrix> frontier;
    frontier[walker.start()] = RMatrix::Identity(E, E);

    long long work = 0;
    for (long long m = 0; m < sig.M; ++m) {
        const RMatrix& K = channel.kernel_at(t + m);
        std::map<int, RMatrix> next;
        for (auto& [vid, W] : frontier) {
            // group rows by emitted symbol
            std::map<int, RMatrix> by_symbol;
            for (int f = 0; f < E; ++f) {
                int g = channel.emission[static_cast<size_t>(f)];
                auto [it, inserted] = by_symbol.try_emplace(g, RMatrix::Zero(E, E));
                it->second.row(f) = W.row(f);
            }
            for (auto& [g, Wg] : by_symbol) {
                int nid = walker.step(vid, g);
                RMatrix propagated = K.transpose() * Wg;
                auto [it, inserted] = next.try_emplace(nid, std::move(propagated));
                if (!inserted) it->second += propagated;
                work += static_cast<long long>(E) * E;
                if (work > work_cap)
                    throw Error("build_sigma: work cap exceeded; fall back to "
                                "the Monte Carlo strategy");
            }
        }
        frontier = std::move(next);
    }

    for (auto& [vid, W] : frontier) {
        Subspace psi = walker.kernel_of(vid, sig.M);
        for (int j = 0; j < lattice.size(); ++j) {
            Subspace meet =
                intersect(psi, lattice.elements[static_cast<size_t>(j)], tol);
            int i = lattice.locate(meet, tol);
            if (i < 0)
                throw Error("build_sigma: psi ∩ K_j escaped the lattice");
            auto [it, inserted] = sig.matrices.try_emplace(std::make_pair(i, j), W);
            if (!inserted) it->second += W;
        }
    }
    return sig;
}

// ---------------------------------------------------------------------------

enum class PhiMethod { Exact, ClosedForm, MonteCarlo };

inline const char* to_string(PhiMethod m) {
    switch (m) {
        case PhiMethod::Exact: return "exact";
        case PhiMethod::ClosedForm: return "closed_form";
        case PhiMethod::MonteCarlo: return "monte_carlo";
    }
    return "?";
}

struct PhiResult {
    int block_index = 0;
    double phi = 0.0;
    PhiMethod method = PhiMethod::Exact;
    double margin = 0.0;  // |alpha_k|^2 Phi_k
    std::optional<std::pair<double, double>> ci;
    std::vector<double> per_phase;
    bool lower_bound_only = false;
    std::vector<std::string> notes;
};

/// Prop-6.1 route: Phi = max over phases t and lattice indices 0 <= i < I of
/// rho(sigma_t(i, i))^{1/M}. The spectral radius is taken on the unrestricted
/// matrix; a non-proper chain gets a warning note instead of the (out of
/// scope) restriction construction.
inline PhiResult phi_exact(const FmoBlock& block, const KernelLattice& lattice,
                           const SystemModel& sys, const ChannelModel& channel,
                           const Tolerances& tol = {},
                           long long work_cap = 10000000,
                           const DiagnosticsReport* diag = nullptr) {
    PhiResult res;
    res.block_index = block.index;
    res.method = PhiMethod::Exact;
    if (std::abs(block.alpha) == 0.0) {
        res.per_phase.assign(static_cast<size_t>(channel.period), 0.0);
        return res;  // nilpotent block: auto-stable, Phi irrelevant
    }
    double phi = 0.0;
    long long M = 0;
    for (int t = 0; t < channel.period; ++t) {
        SigmaOperator sig = build_sigma(block, lattice, sys, channel, t, tol, work_cap);
        M = sig.M;
        double best = 0.0;
        for (int i = 0; i + 1 < lattice.size(); ++i)  // excludes the bottom
            if (const RMatrix* m = sig.find(i, i))
                best = std::max(best, spectral_radius(*m));
        double phase_phi = std::pow(best, 1.0 / static_cast<double>(sig.M));
        res.per_phase.push_back(phase_phi);
        phi = std::max(phi, phase_phi);
    }
    (void)M;
    res.phi = std::min(phi, 1.0);
    res.margin = std::norm(block.alpha) * res.phi;
    if (diag && !diag->proper)
        res.notes.push_back("chain not proper: rho(eta) = rho(eta-restricted) "
                            "assumed, not verified");
    return res;
}

/// Closed-form route: applicable when, among the distinct block measurement
/// matrices, exactly one value c* leaves (A_k, c*) non-observable, every
/// other value has FCR on its own, and the noise paired with c* is unique
/// (trivially so when c* = 0, where the measurement carries nothing).
/// Then Phi is the per-period rate of the all-c* event,
/// rho(prod_t K_t D)^{1/tau} with D masking the c*-emitting states.
inline std::optional<PhiResult> phi_closed_form(const FmoBlock& block,
                                                const SystemModel& sys,
                                                const ChannelModel& channel,
                                                const Tolerances& tol = {}) {
    if (!channel.is_finite()) return std::nullopt;
    channel.check_finite_shape();
    if (std::abs(block.alpha) == 0.0) return std::nullopt;

    // Group alphabet entries by (approximately) equal block measurement part.
    const int A = sys.alphabet.size();
    std::vector<int> group_of(static_cast<size_t>(A), -1);
    std::vector<CMatrix> reps;
    for (int d = 0; d < A; ++d) {
        const CMatrix& c = block.C_parts[static_cast<size_t>(d)];
        for (size_t g = 0; g < reps.size(); ++g) {
            double scale = std::max(1.0, reps[g].cwiseAbs().maxCoeff());
            if ((reps[g] - c).cwiseAbs().maxCoeff() <= 1e-12 * scale) {
                group_of[static_cast<size_t>(d)] = static_cast<int>(g);
                break;
            }
        }
        if (group_of[static_cast<size_t>(d)] < 0) {
            reps.push_back(c);
            group_of[static_cast<size_t>(d)] = static_cast<int>(reps.size()) - 1;
        }
    }

    auto observable = [&](const CMatrix& c) {
        CMatrix obs(c.rows() * block.dim(), block.dim());
        for (Index s = 0; s < block.dim(); ++s)
            obs.middleRows(s * c.rows(), c.rows()) = c * block.power(s);
        return numerical_rank(obs, tol) == block.dim();
    };
    auto single_fcr = [&](const CMatrix& c) {
        if (c.cwiseAbs().maxCoeff() == 0.0) return false;
        return numerical_rank(c, tol) == block.dim();
    };

    int blind = -1;
    for (size_t g = 0; g < reps.size(); ++g) {
        if (!observable(reps[g])) {
            if (blind >= 0) return std::nullopt;  // two non-observable values
            blind = static_cast<int>(g);
        } else if (!single_fcr(reps[g])) {
            return std::nullopt;  // observable only over time: Cor. route invalid
        }
    }
    if (blind < 0) return std::nullopt;

    // Noise uniqueness for the blind value (irrelevant when c* = 0).
    bool cstar_zero = reps[static_cast<size_t>(blind)].cwiseAbs().maxCoeff() == 0.0;
    if (!cstar_zero) {
        const CMatrix* r0 = nullptr;
        for (int d = 0; d < A; ++d) {
            if (group_of[static_cast<size_t>(d)] != blind) continue;
            const CMatrix& r = sys.alphabet.pairs[static_cast<size_t>(d)].R;
            if (!r0) {
                r0 = &r;
            } else if ((*r0 - r).cwiseAbs().maxCoeff() > 1e-12) {
                return std::nullopt;
            }
        }
    }

    // Mask of hidden states emitting the blind value.
    RVector mask = RVector::Zero(channel.num_states);
    for (int e = 0; e < channel.num_states; ++e)
        if (group_of[static_cast<size_t>(channel.emission[static_cast<size_t>(e)])] ==
            blind)
            mask(e) = 1.0;

    RMatrix period_map = RMatrix::Identity(channel.num_states, channel.num_states);
    for (int t = 0; t < channel.period; ++t)
        period_map = period_map * (channel.kernel_at(t) * mask.asDiagonal());
    double rho = spectral_radius(period_map);
    PhiResult res;
    res.block_index = block.index;
    res.method = PhiMethod::ClosedForm;
    res.phi = std::min(std::pow(rho, 1.0 / channel.period), 1.0);
    res.margin = std::norm(block.alpha) * res.phi;
    return res;
}

// ---------------------------------------------------------------------------
// Monte Carlo rate regression

struct MonteCarloOptions {
    std::vector<long long> t_grid;  // horizons; default {M, 2M, ..., 40M}
    long long trials = 100000;
    std::uint64_t seed = 1;
    long long min_hits = 20;  // bins below this are dropped from the fit
    int threads = 1;
};

namespace detail {

struct PhaseFit {
    double phi = 0.0;
    double lo = 0.0, hi = 0.0;
    bool usable = false;
    bool lower_bound = false;
};

/// OLS fit of log p_hat vs T with the covariance of nested non-FCR events
/// (the event at horizon T2 implies it at T1 < T2) propagated through the
/// slope weights.
inline PhaseFit fit_rate(const std::vector<long long>& grid,
                         const std::vector<long long>& hits, long long trials,
                         long long min_hits) {
    PhaseFit out;
    std::vector<double> ts, logs, ps;
    for (size_t i = 0; i < grid.size(); ++i) {
        if (hits[i] < min_hits) continue;
        double p = static_cast<double>(hits[i]) / static_cast<double>(trials);
        ts.push_back(static_cast<double>(grid[i]));
        logs.push_back(std::log(p));
        ps.push_back(p);
    }
    if (ts.size() < 2) {
        out.lower_bound = true;
        return out;
    }
    double tbar = 0.0;
    for (double t : ts) tbar += t;
    tbar /= static_cast<double>(ts.size());
    double sxx = 0.0;
    for (double t : ts) sxx += (t - tbar) * (t - tbar);
    double slope = 0.0;
    for (size_t i = 0; i < ts.size(); ++i)
        slope += (ts[i] - tbar) * logs[i] / sxx;

    // Var(log p_hat(Ta), log p_hat(Tb)) ~= (1 - p_min) / (n p_min) with
    // p_min the probability at the smaller horizon (nested events).
    double var = 0.0;
    for (size_t a = 0; a < ts.size(); ++a) {
        for (size_t b = 0; b < ts.size(); ++b) {
            double p_small = ps[std::min(a, b)];  // grid ascending => larger p
            double cov = (1.0 - p_small) / (static_cast<double>(trials) * p_small);
            var += (ts[a] - tbar) * (ts[b] - tbar) * cov / (sxx * sxx);
        }
    }
    double se = std::sqrt(std::max(var, 0.0));
    out.phi = std::exp(slope);
    out.lo = std::exp(slope - 1.96 * se);
    out.hi = std::exp(slope + 1.96 * se);
    out.usable = true;
    return out;
}

}  // namespace detail

/// Estimate Phi by sampling channel traces and regressing the log-probability
/// of the non-FCR event against the horizon. Works for any channel variant
/// that sample_trace supports (the lattice is not required).
inline PhiResult phi_monte_carlo(const FmoBlock& block, const SystemModel& sys,
                                 const ChannelModel& channel,
                                 const MonteCarloOptions& opts_in,
                                 const Tolerances& tol = {}) {
    MonteCarloOptions opts = opts_in;
    if (opts.trials < 1000)
        throw Error("phi_monte_carlo: trials >= 1000 required");
    PhiResult res;
    res.block_index = block.index;
    res.method = PhiMethod::MonteCarlo;
    if (std::abs(block.alpha) == 0.0) return res;

    const int tau = channel.is_finite() ? channel.period : 1;
    long long M = std::lcm(static_cast<long long>(block.order),
                           static_cast<long long>(tau));
    if (opts.t_grid.empty())
        for (long long m = 1; m <= 40; ++m) opts.t_grid.push_back(m * M);
    std::sort(opts.t_grid.begin(), opts.t_grid.end());
    const long long T_max = opts.t_grid.back();

    double best_phi = 0.0;
    std::optional<std::pair<double, double>> best_ci;
    bool any_usable = false;

    for (int t0 = 0; t0 < tau; ++t0) {
        KernelWalker walker(block, sys.alphabet, tol);
        std::vector<long long> survive(opts.t_grid.size(), 0);

        const int nb = std::max(1, opts.threads);
        std::vector<std::vector<long long>> batch_counts(
            static_cast<size_t>(nb),
            std::vector<long long>(opts.t_grid.size(), 0));
        // Pre-warm the walker transitions single-threaded so concurrent reads
        // below never mutate it: walk a deterministic probe set.
        {
            std::vector<int> frontier{walker.start()};
            for (long long depth = 0; depth < std::min<long long>(T_max, 64); ++depth) {
                std::vector<int> next;
                for (int s : frontier)
                    for (int g = 0; g < sys.alphabet.size(); ++g) {
                        int ns = walker.step(s, g);
                        if (!walker.is_trivial(ns) &&
                            std::find(next.begin(), next.end(), ns) == next.end())
                            next.push_back(ns);
                    }
                if (next.empty()) break;
                frontier = std::move(next);
            }
        }

        auto run_batch = [&](int b) {
            long long lo = opts.trials * b / nb;
            long long hi = opts.trials * (b + 1) / nb;
            auto& counts = batch_counts[static_cast<size_t>(b)];
            // Per-batch copy: cache misses beyond the pre-warmed depth mutate
            // only batch-local state.
            KernelWalker local = walker;
            for (long long trial = lo; trial < hi; ++trial) {
                ChannelTrace trace = sample_trace(
                    channel, t0, T_max,
                    split_seed(opts.seed, static_cast<std::uint64_t>(trial) * tau +
                                              static_cast<std::uint64_t>(t0)));
                int s = local.start();
                long long first_fcr = T_max + 1;
                for (long long m = 0; m < T_max; ++m) {
                    s = local.step(s, trace.gamma[static_cast<size_t>(m)]);
                    if (local.is_trivial(s)) {
                        first_fcr = m + 1;
                        break;
                    }
                }
                for (size_t gi = 0; gi < opts.t_grid.size(); ++gi)
                    if (opts.t_grid[gi] < first_fcr) ++counts[gi];
            }
        };
        if (nb == 1) {
            run_batch(0);
        } else {
            std::vector<std::thread> pool;
            for (int b = 0; b < nb; ++b) pool.emplace_back(run_batch, b);
            for (auto& th : pool) th.join();
        }
        for (const auto& counts : batch_counts)
            for (size_t gi = 0; gi < opts.t_grid.size(); ++gi)
                survive[gi] += counts[gi];

        auto fit = detail::fit_rate(opts.t_grid, survive, opts.trials, opts.min_hits);
        if (!fit.usable) {
            if (survive[0] == 0) {
                res.per_phase.push_back(0.0);
                continue;  // never non-FCR at the smallest horizon
            }
            res.lower_bound_only = true;
            double p0 = static_cast<double>(survive[0]) /
                        static_cast<double>(opts.trials);
            double crude = std::pow(p0, 1.0 / static_cast<double>(opts.t_grid[0]));
            res.per_phase.push_back(crude);
            best_phi = std::max(best_phi, crude);
            continue;
        }
        any_usable = true;
        res.per_phase.push_back(std::min(fit.phi, 1.0));
        if (fit.phi >= best_phi) {
            best_phi = fit.phi;
            best_ci = std::make_pair(fit.lo, std::min(fit.hi, 1.0));
        }
    }
    if (!any_usable && best_phi == 0.0)
        res.notes.push_back("all sampled horizons had full column rank; "
                            "Phi reported as 0");
    res.phi = std::min(best_phi, 1.0);
    res.ci = best_ci;
    res.margin = std::norm(block.alpha) * res.phi;
    return res;
}

// ---------------------------------------------------------------------------

enum class Verdict { Stable, Unstable, Inconclusive };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Stable: return "Stable";
        case Verdict::Unstable: return "Unstable";
        case Verdict::Inconclusive: return "Inconclusive";
    }
    return "?";
}

struct StabilityReport {
    std::vector<PhiResult> per_block;
    Verdict verdict = Verdict::Inconclusive;
    double eps_margin = 1e-6;
    DiagnosticsReport diagnostics;
};

inline StabilityReport verdict(const FmoPartition& part,
                               std::vector<PhiResult> phi_results,
                               const Tolerances& tol = {}) {
    for (const FmoBlock& blk : part.blocks) {
        if (std::abs(blk.alpha) == 0.0) continue;  // auto-stable side
        bool found = false;
        for (const auto& r : phi_results)
            if (r.block_index == blk.index) found = true;
        if (!found)
            throw Error("verdict: missing Phi result for block " +
                        std::to_string(blk.index));
    }
    StabilityReport rep;
    rep.eps_margin = tol.eps_margin;
    rep.per_block = std::move(phi_results);
    bool all_stable = true, any_unstable = false;
    for (const auto& r : rep.per_block) {
        if (r.margin > 1.0 + tol.eps_margin) any_unstable = true;
        if (!(r.margin < 1.0 - tol.eps_margin)) all_stable = false;
    }
    rep.verdict = any_unstable ? Verdict::Unstable
                 : all_stable ? Verdict::Stable
                              : Verdict::Inconclusive;
    return rep;
}

}  // namespace kfstab
