#pragma once

// Randomized Riccati recursion, finite-horizon composition, Monte Carlo
// growth-rate estimation and optional full state/measurement simulation.

#include "kfstab/model.hpp"

#include <cmath>
#include <thread>
#include <vector>

namespace kfstab {

namespace detail {

inline CMatrix hermitian_pinv(const CMatrix& m, double tol_rank) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(CMatrix((m + m.adjoint()) / 2.0));
    const RVector& ev = es.eigenvalues();
    double cutoff = tol_rank * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    RVector inv = RVector::Zero(ev.size());
    for (Index i = 0; i < ev.size(); ++i)
        if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().adjoint();
}

inline CMatrix psd_floor(const CMatrix& m) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(CMatrix((m + m.adjoint()) / 2.0));
    if (es.eigenvalues().minCoeff() >= 0.0)
        return (m + m.adjoint()) / 2.0;
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
           es.eigenvectors().adjoint();
}

}  // namespace detail

/// One step of the covariance recursion:
///   psi(P) = A P A* + Q - A P C* (C P C* + R)^+ C P A*.
/// The innovation Gramian is inverted by Moore-Penrose pseudo-inverse; the
/// output is symmetrized and eigenvalue-floored at zero.
inline CMatrix riccati_step(const CMatrix& P, const CMatrix& C, const CMatrix& R,
                            const CMatrix& A, const CMatrix& Q,
                            const Tolerances& tol = {}) {
    const Index n = A.rows();
    if (P.rows() != n || P.cols() != n || Q.rows() != n || Q.cols() != n ||
        C.cols() != n || R.rows() != C.rows() || R.cols() != C.rows())
        throw Error("riccati_step: dimension mismatch");
    CMatrix S = C * P * C.adjoint() + R;
    CMatrix Sinv = detail::hermitian_pinv(S, tol.tol_rank);
    CMatrix APC = A * P * C.adjoint();
    CMatrix out = A * P * A.adjoint() + Q - APC * Sinv * APC.adjoint();
    return detail::psd_floor(out);
}

struct CovTrajectory {
    long long t0 = 0;
    std::vector<CMatrix> P_seq;  // length horizon + 1
    ChannelTrace gamma_used;
};

/// Left-fold of riccati_step along a sampled gamma sequence.
inline CovTrajectory compose(const CMatrix& P0, const ChannelTrace& gamma,
                             const SystemModel& sys, const Tolerances& tol = {}) {
    if (!is_hermitian_psd(P0)) throw Error("compose: P0 must be Hermitian PSD");
    CovTrajectory traj;
    traj.t0 = gamma.t0;
    traj.gamma_used = gamma;
    traj.P_seq.push_back(P0);
    CMatrix P = P0;
    for (int g : gamma.gamma) {
        const auto& pr = sys.alphabet.pairs[static_cast<size_t>(g)];
        P = riccati_step(P, pr.C, pr.R, sys.A, sys.Q, tol);
        traj.P_seq.push_back(P);
    }
    return traj;
}

struct GrowthEstimate {
    std::vector<long long> horizons;
    std::vector<double> log_mean_norms;  // log ||E(Psi)|| per horizon
    double slope = 0.0;                  // fitted exponential rate
    double slope_se = 0.0;
    long long trials = 0;
    std::uint64_t seed = 0;
};

namespace detail {

/// Scale-aware Riccati step on the pair (P, L) representing P e^L.
/// Exploits psi(P e^L) = e^L psi_scaled(P; Q e^-L, R e^-L).
inline void riccati_step_scaled(CMatrix& P, double& L, const CMatrix& C,
                                const CMatrix& R, const CMatrix& A,
                                const CMatrix& Q, const Tolerances& tol) {
    double damp = std::exp(-L);
    P = riccati_step(P, C, CMatrix(R * damp), A, CMatrix(Q * damp), tol);
    double norm = P.norm();
    if (norm > 0.0) {
        P /= norm;
        L += std::log(norm);
    }
}

/// Streaming mean of matrices P_i e^{L_i} kept as (accumulator, L_max).
struct LogScaledMean {
    CMatrix acc;
    double L_max = -std::numeric_limits<double>::infinity();
    long long count = 0;

    void add(const CMatrix& P, double L) {
        if (count == 0) acc = CMatrix::Zero(P.rows(), P.cols());
        if (L > L_max) {
            if (std::isfinite(L_max)) acc *= std::exp(L_max - L);
            L_max = L;
        }
        acc += P * std::exp(L - L_max);
        ++count;
    }

    void merge(const LogScaledMean& other) {
        if (other.count == 0) return;
        if (count == 0) {
            *this = other;
            return;
        }
        if (other.L_max > L_max) {
            acc = acc * std::exp(L_max - other.L_max) + other.acc;
            L_max = other.L_max;
        } else {
            acc += other.acc * std::exp(other.L_max - L_max);
        }
        count += other.count;
    }

    double log_norm_of_mean() const {
        if (count == 0) return -std::numeric_limits<double>::infinity();
        return L_max + std::log(acc.norm() / static_cast<double>(count));
    }
};

}  // namespace detail

/// Monte Carlo estimate of ||E(Psi(P0, Gamma_{t0,T}))|| over a horizon grid,
/// with the exponential rate fitted over the upper half of the grid. The
/// standard error comes from batch means (10 batches).
inline GrowthEstimate estimate_growth(const SystemModel& sys,
                                      const ChannelModel& channel,
                                      const CMatrix& P0, long long t0,
                                      std::vector<long long> horizons,
                                      long long trials, std::uint64_t seed,
                                      const Tolerances& tol = {},
                                      int threads = 1) {
    if (trials < 100) throw Error("estimate_growth: trials >= 100 required");
    if (horizons.empty()) throw Error("estimate_growth: empty horizon grid");
    std::sort(horizons.begin(), horizons.end());
    const long long T_max = horizons.back();
    const int n_batches = 10;

    std::vector<std::vector<detail::LogScaledMean>> batch_means(
        n_batches, std::vector<detail::LogScaledMean>(horizons.size()));

    auto run_batch = [&](int b) {
        long long lo = trials * b / n_batches;
        long long hi = trials * (b + 1) / n_batches;
        auto& means = batch_means[static_cast<size_t>(b)];
        for (long long trial = lo; trial < hi; ++trial) {
            ChannelTrace trace = sample_trace(
                channel, t0, T_max, split_seed(seed, static_cast<std::uint64_t>(trial)));
            CMatrix P = P0;
            double L = 0.0;
            size_t hi_idx = 0;
            for (long long s = 0; s <= T_max; ++s) {
                while (hi_idx < horizons.size() && horizons[hi_idx] == s) {
                    means[hi_idx].add(P, L);
                    ++hi_idx;
                }
                if (s == T_max) break;
                const auto& pr =
                    sys.alphabet.pairs[static_cast<size_t>(trace.gamma[static_cast<size_t>(s)])];
                detail::riccati_step_scaled(P, L, pr.C, pr.R, sys.A, sys.Q, tol);
            }
        }
    };
    if (threads <= 1) {
        for (int b = 0; b < n_batches; ++b) run_batch(b);
    } else {
        std::vector<std::thread> pool;
        for (int b = 0; b < n_batches; ++b) pool.emplace_back(run_batch, b);
        for (auto& th : pool) th.join();
    }

    GrowthEstimate est;
    est.horizons = horizons;
    est.trials = trials;
    est.seed = seed;

    // Slope per batch over the upper half of the grid, then batch means.
    size_t fit_begin = horizons.size() / 2;
    auto fit_slope = [&](const std::vector<double>& logs) {
        double tbar = 0.0, ybar = 0.0;
        size_t m = horizons.size() - fit_begin;
        for (size_t i = fit_begin; i < horizons.size(); ++i) {
            tbar += static_cast<double>(horizons[i]);
            ybar += logs[i];
        }
        tbar /= static_cast<double>(m);
        ybar /= static_cast<double>(m);
        double sxx = 0.0, sxy = 0.0;
        for (size_t i = fit_begin; i < horizons.size(); ++i) {
            double dt = static_cast<double>(horizons[i]) - tbar;
            sxx += dt * dt;
            sxy += dt * (logs[i] - ybar);
        }
        return sxy / sxx;
    };

    std::vector<detail::LogScaledMean> total(horizons.size());
    for (const auto& means : batch_means)
        for (size_t i = 0; i < horizons.size(); ++i) total[i].merge(means[i]);
    for (size_t i = 0; i < horizons.size(); ++i)
        est.log_mean_norms.push_back(total[i].log_norm_of_mean());
    est.slope = fit_slope(est.log_mean_norms);

    std::vector<double> batch_slopes;
    for (const auto& means : batch_means) {
        std::vector<double> logs;
        for (const auto& m : means) logs.push_back(m.log_norm_of_mean());
        bool ok = true;
        for (size_t i = fit_begin; i < logs.size(); ++i)
            if (!std::isfinite(logs[i])) ok = false;
        if (ok) batch_slopes.push_back(fit_slope(logs));
    }
    if (batch_slopes.size() >= 2) {
        double mean = 0.0;
        for (double s : batch_slopes) mean += s;
        mean /= static_cast<double>(batch_slopes.size());
        double var = 0.0;
        for (double s : batch_slopes) var += (s - mean) * (s - mean);
        var /= static_cast<double>(batch_slopes.size() - 1);
        est.slope_se = std::sqrt(var / static_cast<double>(batch_slopes.size()));
    }
    return est;
}

// ---------------------------------------------------------------------------
// Full filter simulation (states, measurements, estimates).

struct FilterRun {
    std::vector<CVector> states;
    std::vector<CVector> measurements;
    std::vector<CVector> estimates;  // x_hat_{t|t-1}
    CovTrajectory covariances;
};

/// Co-simulate the state, the lossy measurements under a sampled gamma
/// sequence and the time-varying Kalman predictor.
inline FilterRun simulate_filter(const SystemModel& sys, const ChannelModel& channel,
                                 long long horizon, std::uint64_t seed,
                                 const Tolerances& tol = {}) {
    if (horizon < 1) throw Error("simulate_filter: horizon >= 1 required");
    FilterRun run;
    ChannelTrace trace = sample_trace(channel, 0, horizon, split_seed(seed, 7));
    Rng rng(split_seed(seed, 11));
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto sqrt_psd = [](const CMatrix& m) {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(CMatrix((m + m.adjoint()) / 2.0));
        return CMatrix(es.eigenvectors() *
                       es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                       es.eigenvectors().adjoint());
    };
    auto crandn = [&](Index d) {
        CVector v(d);
        // circularly-symmetric: unit total variance per component
        for (Index i = 0; i < d; ++i)
            v(i) = Complex(gauss(rng), gauss(rng)) / std::sqrt(2.0);
        return v;
    };

    CMatrix sqrtQ = sqrt_psd(sys.Q);
    CVector x = sqrt_psd(sys.P0) * crandn(sys.n);
    CVector xhat = CVector::Zero(sys.n);
    CMatrix P = sys.P0;
    run.covariances.t0 = 0;
    run.covariances.gamma_used = trace;
    run.covariances.P_seq.push_back(P);

    for (long long t = 0; t < horizon; ++t) {
        const auto& pr =
            sys.alphabet.pairs[static_cast<size_t>(trace.gamma[static_cast<size_t>(t)])];
        CVector v = sqrt_psd(pr.R) * crandn(sys.p);
        CVector y = pr.C * x + v;
        run.states.push_back(x);
        run.measurements.push_back(y);
        run.estimates.push_back(xhat);

        // predictor update: x_hat_{t+1|t} = A x_hat + A K (y - C x_hat)
        CMatrix S = pr.C * P * pr.C.adjoint() + pr.R;
        CMatrix K = P * pr.C.adjoint() * detail::hermitian_pinv(S, tol.tol_rank);
        xhat = sys.A * (xhat + K * (y - pr.C * xhat));
        P = riccati_step(P, pr.C, pr.R, sys.A, sys.Q, tol);
        run.covariances.P_seq.push_back(P);

        x = sys.A * x + sqrtQ * crandn(sys.n);
    }
    return run;
}

}  // namespace kfstab
