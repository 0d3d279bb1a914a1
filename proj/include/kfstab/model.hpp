#pragma once

// System model, finite measurement alphabet and the hidden-Markov channel
// generating gamma_t = (C_t, R_t). Validation of cyclostationarity and the
// structural assumptions, plus seeded trajectory sampling.

#include "kfstab/matrix_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace kfstab {

// ---------------------------------------------------------------------------
// RNG: seeded mt19937_64, split by mixing the seed with a stream index.

inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 step on seed ^ stream keeps per-task streams decorrelated.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------

struct MeasurementPair {
    CMatrix C;
    CMatrix R;
    std::string label;
};

/// The finite set of (C, R) pairs gamma_t can take. Only pairs that actually
/// occur are stored; emission maps reference them by index.
struct MeasurementAlphabet {
    std::vector<MeasurementPair> pairs;

    int size() const { return static_cast<int>(pairs.size()); }

    void check(Index n, Index p) const {
        if (pairs.empty()) throw Error("MeasurementAlphabet: empty");
        for (const auto& pr : pairs) {
            if (pr.C.rows() != p || pr.C.cols() != n)
                throw Error("MeasurementAlphabet: C must be p x n");
            if (pr.R.rows() != p || pr.R.cols() != p)
                throw Error("MeasurementAlphabet: R must be p x p");
            require_finite(pr.C, "alphabet C");
            require_finite(pr.R, "alphabet R");
        }
    }
};

struct SystemModel {
    Index n = 0;  // state dimension
    Index p = 0;  // measurement dimension
    CMatrix A;    // n x n, Jordan normal form
    CMatrix Q;    // n x n, Hermitian PSD
    CMatrix P0;   // n x n, Hermitian PSD
    MeasurementAlphabet alphabet;

    void check_dimensions() const {
        if (A.rows() != n || A.cols() != n) throw Error("SystemModel: A must be n x n");
        if (Q.rows() != n || Q.cols() != n) throw Error("SystemModel: Q must be n x n");
        if (P0.rows() != n || P0.cols() != n) throw Error("SystemModel: P0 must be n x n");
        alphabet.check(n, p);
    }
};

// ---------------------------------------------------------------------------
// Channel

enum class ChannelVariant { FiniteMarkov, Iid, GilbertElliott, GaussianHidden };

inline const char* to_string(ChannelVariant v) {
    switch (v) {
        case ChannelVariant::FiniteMarkov: return "finite_markov";
        case ChannelVariant::Iid: return "iid";
        case ChannelVariant::GilbertElliott: return "gilbert_elliott";
        case ChannelVariant::GaussianHidden: return "gaussian_hidden";
    }
    return "?";
}

struct GaussianHiddenSpec {
    CMatrix K;        // stable hidden dynamics, rho(K) < 1
    RMatrix Sigma;    // PSD innovation covariance (real part used)
    // Axis-aligned boxes partitioning the hidden space; box i maps to
    // alphabet index region_labels[i]. A point falls in the first matching box.
    std::vector<RVector> box_lo;
    std::vector<RVector> box_hi;
    std::vector<int> region_labels;
};

/// Hidden-Markov generator of gamma_t. Iid and GilbertElliott are stored in
/// the same finite representation (states / per-phase kernels / emission /
/// mu0); the variant tag records how the model was declared.
struct ChannelModel {
    ChannelVariant variant = ChannelVariant::FiniteMarkov;

    // Finite representation (all variants except GaussianHidden).
    int num_states = 0;
    std::vector<RMatrix> kernels;  // kernels[m] maps phase m -> phase m+1
    std::vector<int> emission;     // state -> alphabet index
    RVector mu0;                   // distribution of rho_0 (phase 0)
    int period = 1;                // tau

    GaussianHiddenSpec gaussian;

    bool is_finite() const { return variant != ChannelVariant::GaussianHidden; }

    const RMatrix& kernel_at(long long t) const {
        long long m = t % period;
        if (m < 0) m += period;
        return kernels[static_cast<size_t>(m)];
    }

    void check_finite_shape() const {
        if (!is_finite()) throw Error("ChannelModel: finite variant required");
        if (num_states <= 0) throw Error("ChannelModel: empty state space");
        if (static_cast<int>(kernels.size()) != period)
            throw Error("ChannelModel: need one kernel per phase");
        for (const auto& k : kernels)
            if (k.rows() != num_states || k.cols() != num_states)
                throw Error("ChannelModel: kernel dimension mismatch");
        if (static_cast<int>(emission.size()) != num_states)
            throw Error("ChannelModel: emission map size mismatch");
        if (mu0.size() != num_states)
            throw Error("ChannelModel: mu0 size mismatch");
    }

    /// Phase-periodic i.i.d. channel: per-phase emission probabilities.
    static ChannelModel iid(const std::vector<RVector>& phase_probs) {
        if (phase_probs.empty()) throw Error("iid channel: no phases");
        const int tau = static_cast<int>(phase_probs.size());
        const int a = static_cast<int>(phase_probs[0].size());
        ChannelModel ch;
        ch.variant = ChannelVariant::Iid;
        ch.period = tau;
        ch.num_states = a;
        ch.emission.resize(a);
        for (int i = 0; i < a; ++i) ch.emission[static_cast<size_t>(i)] = i;
        for (int m = 0; m < tau; ++m) {
            const RVector& next = phase_probs[static_cast<size_t>((m + 1) % tau)];
            if (next.size() != a) throw Error("iid channel: ragged phase probs");
            RMatrix k(a, a);
            for (int r = 0; r < a; ++r) k.row(r) = next.transpose();
            ch.kernels.push_back(std::move(k));
        }
        ch.mu0 = phase_probs[0];
        return ch;
    }

    static ChannelModel iid(const RVector& probs) {
        return iid(std::vector<RVector>{probs});
    }

    /// Two-state chain [[1-a, a], [b, 1-b]] with per-state alphabet indices.
    /// State 0 is "good", state 1 is "bad".
    static ChannelModel gilbert_elliott(double a, double b, int good_emit,
                                        int bad_emit) {
        ChannelModel ch;
        ch.variant = ChannelVariant::GilbertElliott;
        ch.num_states = 2;
        ch.period = 1;
        RMatrix k(2, 2);
        k << 1.0 - a, a, b, 1.0 - b;
        ch.kernels.push_back(k);
        ch.emission = {good_emit, bad_emit};
        ch.mu0 = RVector(2);
        if (a + b > 0) {
            ch.mu0 << b / (a + b), a / (a + b);
        } else {
            ch.mu0 << 1.0, 0.0;
        }
        return ch;
    }

    /// Lift an order-L conditional table P(gamma_t | gamma_{t-L..t-1}) to a
    /// first-order chain on A^L (states encode the last L symbols).
    static ChannelModel from_order_L_table(int alphabet_size, int L,
                                           const std::vector<RVector>& table) {
        if (L < 1) throw Error("from_order_L_table: L >= 1 required");
        int states = 1;
        for (int i = 0; i < L; ++i) states *= alphabet_size;
        if (static_cast<int>(table.size()) != states)
            throw Error("from_order_L_table: table must have |A|^L rows");
        ChannelModel ch;
        ch.variant = ChannelVariant::FiniteMarkov;
        ch.num_states = states;
        ch.period = 1;
        RMatrix k = RMatrix::Zero(states, states);
        for (int s = 0; s < states; ++s) {
            const RVector& row = table[static_cast<size_t>(s)];
            if (row.size() != alphabet_size)
                throw Error("from_order_L_table: ragged table row");
            for (int g = 0; g < alphabet_size; ++g) {
                // shift the history window and append g
                int next = (s % (states / alphabet_size)) * alphabet_size + g;
                k(s, next) += row(g);
            }
        }
        ch.emission.resize(static_cast<size_t>(states));
        for (int s = 0; s < states; ++s)
            ch.emission[static_cast<size_t>(s)] = s % alphabet_size;
        // stationary mu0 via power iteration of the kernel
        RVector mu = RVector::Constant(states, 1.0 / states);
        for (int it = 0; it < 100000; ++it) {
            RVector next = (mu.transpose() * k).transpose();
            if ((next - mu).lpNorm<1>() < 1e-15) { mu = next; break; }
            mu = next;
        }
        ch.mu0 = mu;
        ch.kernels.push_back(std::move(k));
        return ch;
    }
};

struct ChannelTrace {
    long long t0 = 0;
    std::vector<int> gamma;          // alphabet indices Gamma_{t0, T}
    std::vector<int> hidden;         // finite case: visited states
    std::vector<RVector> hidden_vec; // Gaussian case: visited vectors
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Diagnostics

struct DiagnosticsReport {
    bool valid = true;
    bool proper = false;
    bool cyclostationary = false;
    bool monte_carlo_only = false;  // GaussianHidden path
    double zeta_bound = std::numeric_limits<double>::infinity();
    std::vector<std::string> issues;

    void flag(const std::string& msg) {
        valid = false;
        issues.push_back(msg);
    }
};

namespace detail {

inline bool check_jordan_form(const CMatrix& A, std::vector<std::string>* issues) {
    const Index n = A.rows();
    bool ok = true;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            Complex v = A(i, j);
            if (j == i + 1) {
                bool zero = std::abs(v) <= 1e-12;
                bool one = std::abs(v - 1.0) <= 1e-12;
                if (!zero && !one) {
                    ok = false;
                    if (issues) issues->push_back("A: superdiagonal entry not in {0,1}");
                }
                if (one && std::abs(A(i, i) - A(i + 1, i + 1)) > 1e-12) {
                    ok = false;
                    if (issues)
                        issues->push_back("A: Jordan chain crosses distinct eigenvalues");
                }
            } else if (std::abs(v) > 1e-12) {
                ok = false;
                if (issues) {
                    std::ostringstream os;
                    os << "A: nonzero entry outside Jordan structure at (" << i
                       << "," << j << ")";
                    issues->push_back(os.str());
                }
            }
        }
    }
    return ok;
}

}  // namespace detail

/// Distribution of rho at phase t under cyclostationarity: the fixed point of
/// the tau-step kernel product starting at phase t, seeded from the
/// propagated mu0 so the correct ergodic class is selected.
inline RVector stationary_phase_distribution(const ChannelModel& ch, long long t) {
    ch.check_finite_shape();
    RVector mu = ch.mu0;
    long long steps = ((t % ch.period) + ch.period) % ch.period;
    for (long long m = 0; m < steps; ++m)
        mu = (mu.transpose() * ch.kernel_at(m)).transpose();
    // Polish: power-iterate the tau-step product from phase t.
    RMatrix prod = RMatrix::Identity(ch.num_states, ch.num_states);
    for (int m = 0; m < ch.period; ++m) prod = prod * ch.kernel_at(steps + m);
    for (int it = 0; it < 100000; ++it) {
        RVector next = (mu.transpose() * prod).transpose();
        double s = next.sum();
        if (s > 0) next /= s;
        if ((next - mu).lpNorm<1>() < 1e-14) return next;
        mu = next;
    }
    return mu;
}

inline ChannelTrace sample_trace(const ChannelModel& ch, long long t0, long long T,
                                 std::uint64_t seed) {
    if (T < 1) throw Error("sample_trace: T >= 1 required");
    ChannelTrace trace;
    trace.t0 = t0;
    trace.seed = seed;
    Rng rng(split_seed(seed, static_cast<std::uint64_t>(t0) * 0x10001ull));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    if (ch.is_finite()) {
        RVector mu = stationary_phase_distribution(ch, t0);
        auto draw = [&](const RVector& w) {
            double u = unif(rng) * w.sum();
            double acc = 0.0;
            for (int i = 0; i < w.size(); ++i) {
                acc += w(i);
                if (u <= acc) return i;
            }
            return static_cast<int>(w.size()) - 1;
        };
        int state = draw(mu);
        trace.hidden.reserve(static_cast<size_t>(T));
        trace.gamma.reserve(static_cast<size_t>(T));
        for (long long s = 0; s < T; ++s) {
            trace.hidden.push_back(state);
            trace.gamma.push_back(ch.emission[static_cast<size_t>(state)]);
            if (s + 1 < T) {
                RVector row = ch.kernel_at(t0 + s).row(state).transpose();
                state = draw(row);
            }
        }
        return trace;
    }

    // Gaussian hidden Markov: stationary start from the Lyapunov fixed point.
    const auto& g = ch.gaussian;
    const Index d = g.K.rows();
    if (spectral_radius(g.K) >= 1.0)
        throw Error("sample_trace: Gaussian hidden dynamics must be stable");
    // Solve S = K S K^T + Sigma by iteration (rho(K) < 1 makes it contract).
    RMatrix Kr = g.K.real();
    RMatrix S = g.Sigma;
    for (int it = 0; it < 20000; ++it) {
        RMatrix next = Kr * S * Kr.transpose() + g.Sigma;
        if ((next - S).cwiseAbs().maxCoeff() < 1e-14) { S = next; break; }
        S = next;
    }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(S);
    RMatrix sqrtS = es.eigenvectors() *
                    es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                    es.eigenvectors().transpose();
    Eigen::SelfAdjointEigenSolver<RMatrix> es2(g.Sigma);
    RMatrix sqrtSigma = es2.eigenvectors() *
                        es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                        es2.eigenvectors().transpose();
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto randn = [&](Index dim) {
        RVector v(dim);
        for (Index i = 0; i < dim; ++i) v(i) = gauss(rng);
        return v;
    };
    auto classify = [&](const RVector& x) {
        for (size_t i = 0; i < g.box_lo.size(); ++i) {
            bool inside = true;
            for (Index j = 0; j < d; ++j)
                if (x(j) < g.box_lo[i](j) || x(j) > g.box_hi[i](j)) {
                    inside = false;
                    break;
                }
            if (inside) return g.region_labels[i];
        }
        throw Error("sample_trace: hidden vector escaped the region partition");
    };
    RVector x = sqrtS * randn(d);
    for (long long s = 0; s < T; ++s) {
        trace.hidden_vec.push_back(x);
        trace.gamma.push_back(classify(x));
        if (s + 1 < T) x = Kr * x + sqrtSigma * randn(d);
    }
    return trace;
}

/// Exact P(Gamma_{t0,T} = gamma) by the forward algorithm over hidden paths.
inline double sequence_probability(const ChannelModel& ch, long long t0,
                                   const std::vector<int>& gamma) {
    ch.check_finite_shape();
    if (gamma.empty()) return 1.0;
    RVector fwd = stationary_phase_distribution(ch, t0);
    for (int e = 0; e < ch.num_states; ++e)
        if (ch.emission[static_cast<size_t>(e)] != gamma[0]) fwd(e) = 0.0;
    for (size_t s = 1; s < gamma.size(); ++s) {
        fwd = (fwd.transpose() * ch.kernel_at(t0 + static_cast<long long>(s) - 1))
                  .transpose();
        for (int e = 0; e < ch.num_states; ++e)
            if (ch.emission[static_cast<size_t>(e)] != gamma[s]) fwd(e) = 0.0;
    }
    return fwd.sum();
}

/// Reachable states per phase (positive stationary probability).
inline std::vector<std::vector<bool>> reachable_states(const ChannelModel& ch) {
    std::vector<std::vector<bool>> reach(static_cast<size_t>(ch.period));
    for (int ph = 0; ph < ch.period; ++ph) {
        RVector mu = stationary_phase_distribution(ch, ph);
        reach[static_cast<size_t>(ph)].resize(static_cast<size_t>(ch.num_states));
        for (int e = 0; e < ch.num_states; ++e)
            reach[static_cast<size_t>(ph)][static_cast<size_t>(e)] = mu(e) > 1e-12;
    }
    return reach;
}

inline DiagnosticsReport validate(const SystemModel& sys, const ChannelModel& ch) {
    DiagnosticsReport rep;
    sys.check_dimensions();

    detail::check_jordan_form(sys.A, &rep.issues);
    if (!rep.issues.empty()) rep.valid = false;
    if (!is_hermitian_psd(sys.Q)) rep.flag("Q is not Hermitian PSD");
    if (!is_hermitian_psd(sys.P0)) rep.flag("P0 is not Hermitian PSD");
    for (size_t i = 0; i < sys.alphabet.pairs.size(); ++i)
        if (!is_hermitian_psd(sys.alphabet.pairs[i].R))
            rep.flag("alphabet R[" + std::to_string(i) + "] is not Hermitian PSD");

    if (!ch.is_finite()) {
        rep.monte_carlo_only = true;
        rep.cyclostationary = true;  // holds by construction (stationary Gaussian)
        if (spectral_radius(ch.gaussian.K) >= 1.0)
            rep.flag("Gaussian hidden dynamics not stable (rho(K) >= 1)");
        return rep;
    }

    ch.check_finite_shape();
    for (int m = 0; m < ch.period; ++m) {
        const RMatrix& k = ch.kernels[static_cast<size_t>(m)];
        if (k.minCoeff() < -1e-12) rep.flag("kernel has negative entries");
        for (int r = 0; r < ch.num_states; ++r)
            if (std::abs(k.row(r).sum() - 1.0) > 1e-12)
                rep.flag("kernel at phase " + std::to_string(m) +
                         " is not row-stochastic");
    }
    if (std::abs(ch.mu0.sum() - 1.0) > 1e-10 || ch.mu0.minCoeff() < -1e-12)
        rep.flag("mu0 is not a probability distribution");
    for (int e : ch.emission)
        if (e < 0 || e >= sys.alphabet.size())
            rep.flag("emission map references a missing alphabet entry");
    if (!rep.valid) return rep;

    // Cyclostationarity: mu0 invariant under the tau-fold kernel product.
    RVector mu = ch.mu0;
    for (int m = 0; m < ch.period; ++m)
        mu = (mu.transpose() * ch.kernel_at(m)).transpose();
    rep.cyclostationary = (mu - ch.mu0).lpNorm<1>() < 1e-10;
    if (!rep.cyclostationary)
        rep.issues.push_back("mu0 not invariant under tau-fold product: not cyclostationary");

    // Properness: from every reachable state, every symbol that occurs at the
    // next phase must have positive one-step probability.
    auto reach = reachable_states(ch);
    rep.proper = true;
    for (int ph = 0; ph < ch.period; ++ph) {
        int next_ph = (ph + 1) % ch.period;
        std::vector<bool> occurs(sys.alphabet.pairs.size(), false);
        for (int e = 0; e < ch.num_states; ++e)
            if (reach[static_cast<size_t>(next_ph)][static_cast<size_t>(e)])
                occurs[static_cast<size_t>(ch.emission[static_cast<size_t>(e)])] = true;
        const RMatrix& k = ch.kernels[static_cast<size_t>(ph)];
        for (int e = 0; e < ch.num_states; ++e) {
            if (!reach[static_cast<size_t>(ph)][static_cast<size_t>(e)]) continue;
            for (size_t g = 0; g < occurs.size(); ++g) {
                if (!occurs[g]) continue;
                double pg = 0.0;
                for (int e2 = 0; e2 < ch.num_states; ++e2)
                    if (ch.emission[static_cast<size_t>(e2)] == static_cast<int>(g))
                        pg += k(e, e2);
                if (pg <= 0.0) {
                    rep.proper = false;
                    break;
                }
            }
        }
    }

    // zeta <= max over reachable states of 1 / P(rho).
    double min_prob = 1.0;
    for (int ph = 0; ph < ch.period; ++ph) {
        RVector m2 = stationary_phase_distribution(ch, ph);
        for (int e = 0; e < ch.num_states; ++e)
            if (m2(e) > 1e-12) min_prob = std::min(min_prob, m2(e));
    }
    rep.zeta_bound = 1.0 / min_prob;
    return rep;
}

}  // namespace kfstab
