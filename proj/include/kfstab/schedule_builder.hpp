#pragma once

// Multi-sensor scheduling with packet loss: aggregate a plant with S sensors,
// a periodic row-selection schedule M_t and a Markov loss process L_t into a
// SystemModel + ChannelModel pair consumable by the stability engine.

#include "kfstab/model.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace kfstab {

struct Sensor {
    CMatrix H;  // d x n measurement matrix
    CMatrix E;  // d x d noise covariance
};

struct SensorSuite {
    CMatrix F;      // plant dynamics (n x n)
    CMatrix N_cov;  // process noise covariance (n x n)
    std::vector<Sensor> sensors;
    int R_slots = 1;  // transmissions per instant

    Index n() const { return F.rows(); }
    Index sensor_dim() const { return sensors.front().H.rows(); }

    void check() const {
        if (F.rows() != F.cols()) throw Error("SensorSuite: F must be square");
        if (N_cov.rows() != F.rows() || N_cov.cols() != F.cols())
            throw Error("SensorSuite: N must match F");
        if (sensors.empty()) throw Error("SensorSuite: no sensors");
        const Index d = sensors.front().H.rows();
        for (const Sensor& s : sensors) {
            if (s.H.rows() != d)
                throw Error("SensorSuite: all sensors must share an output dimension");
            if (s.H.cols() != F.rows())
                throw Error("SensorSuite: H columns must match the state dimension");
            if (s.E.rows() != d || s.E.cols() != d)
                throw Error("SensorSuite: E must be d x d");
        }
        if (R_slots < 1 || R_slots > static_cast<int>(sensors.size()))
            throw Error("SensorSuite: 1 <= R_slots <= S required");
    }
};

/// Periodic deterministic schedule (selection matrices, one per phase) plus a
/// loss channel whose alphabet indices are slot bitmasks: bit r set means the
/// r-th scheduled packet arrived.
struct SchedulePlan {
    std::vector<RMatrix> selection;  // M_t, each R_slots x S with 0/1 entries
    ChannelModel loss;               // emission = bitmask in [0, 2^R_slots)

    int period() const { return static_cast<int>(selection.size()); }

    void check(const SensorSuite& suite) const {
        if (selection.empty()) throw Error("SchedulePlan: empty schedule");
        for (const RMatrix& m : selection) {
            if (m.rows() != suite.R_slots ||
                m.cols() != static_cast<Index>(suite.sensors.size()))
                throw Error("SchedulePlan: selection matrices must be R x S");
            for (Index r = 0; r < m.rows(); ++r) {
                double row_sum = m.row(r).sum();
                if (std::abs(row_sum - 1.0) > 1e-12 ||
                    m.row(r).maxCoeff() > 1.0 + 1e-12 || m.row(r).minCoeff() < -1e-12)
                    throw Error("SchedulePlan: selection rows must pick one sensor");
            }
        }
        loss.check_finite_shape();
        const int outcomes = 1 << suite.R_slots;
        for (int e : loss.emission)
            if (e < 0 || e >= outcomes)
                throw Error("SchedulePlan: loss emission is not a valid slot bitmask");
    }

    /// Scalar i.i.d. loss with P(lost) = lambda, single slot.
    static ChannelModel iid_scalar_loss(double lambda) {
        if (lambda < 0.0 || lambda > 1.0)
            throw Error("iid_scalar_loss: lambda in [0,1] required");
        RVector probs(2);
        probs << lambda, 1.0 - lambda;  // bitmask 0 = lost, 1 = received
        return ChannelModel::iid(probs);
    }
};

struct AggregateResult {
    SystemModel system;
    ChannelModel channel;
    CMatrix V;  // similarity x = V p
    std::vector<std::string> warnings;
};

namespace detail {

/// Fingerprint of a (C, R) pair: entries rounded to 12 significant digits.
inline std::string pair_key(const MeasurementPair& pr) {
    std::string key;
    char buf[64];
    auto put = [&](double v) {
        if (std::abs(v) < 1e-300) v = 0.0;  // canonicalize -0
        std::snprintf(buf, sizeof(buf), "%.12g,", v);
        key += buf;
    };
    for (Index i = 0; i < pr.C.rows(); ++i)
        for (Index j = 0; j < pr.C.cols(); ++j) {
            put(pr.C(i, j).real());
            put(pr.C(i, j).imag());
        }
    key += "|";
    for (Index i = 0; i < pr.R.rows(); ++i)
        for (Index j = 0; j < pr.R.cols(); ++j) {
            put(pr.R(i, j).real());
            put(pr.R(i, j).imag());
        }
    return key;
}

}  // namespace detail

/// Aggregate the sensor suite and schedule into (SystemModel, ChannelModel).
/// The emitted hidden state is (schedule phase, loss state); the alphabet
/// holds every distinct (B H V^{-1}, B E B^T) with lost rows kept as zeros.
inline AggregateResult aggregate(const SensorSuite& suite, const SchedulePlan& plan,
                                 const Tolerances& tol = {}) {
    suite.check();
    plan.check(suite);
    AggregateResult out;
    const Index n = suite.n();
    const Index d = suite.sensor_dim();
    const int S = static_cast<int>(suite.sensors.size());
    const int R = suite.R_slots;
    const Index p = static_cast<Index>(R) * d;

    // Similarity to Jordan form. F already in Jordan form passes through with
    // V = I; diagonalizable F is eigendecomposed; anything else must be
    // pre-transformed by the caller.
    CMatrix A, V;
    if (detail::check_jordan_form(suite.F, nullptr)) {
        V = CMatrix::Identity(n, n);
        A = suite.F;
    } else {
        Eigen::ComplexEigenSolver<CMatrix> es(suite.F);
        CMatrix W = es.eigenvectors();
        Eigen::JacobiSVD<CMatrix> svd(W);
        double smin = svd.singularValues().minCoeff();
        double smax = svd.singularValues().maxCoeff();
        if (smin <= tol.tol_rank * smax)
            throw Error("aggregate: F is not diagonalizable and not in Jordan "
                        "form; supply F pre-transformed to Jordan form");
        if (smax / smin > 1e8)
            out.warnings.push_back("aggregate: eigenvector matrix condition "
                                   "number exceeds 1e8; Jordan form is ill-conditioned");
        V = W.inverse();
        A = V * suite.F * V.inverse();
        // clean the numerically-diagonal A
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                if (i != j) A(i, j) = 0.0;
    }

    // Stacked sensor matrices.
    CMatrix H(static_cast<Index>(S) * d, n);
    CMatrix E = CMatrix::Zero(static_cast<Index>(S) * d, static_cast<Index>(S) * d);
    for (int s = 0; s < S; ++s) {
        H.middleRows(static_cast<Index>(s) * d, d) = suite.sensors[static_cast<size_t>(s)].H;
        E.block(static_cast<Index>(s) * d, static_cast<Index>(s) * d, d, d) =
            suite.sensors[static_cast<size_t>(s)].E;
    }
    CMatrix Vinv = V.inverse();
    CMatrix HVinv = H * Vinv;

    const int tau_M = plan.period();
    const int tau_L = plan.loss.period;
    const int tau = static_cast<int>(std::lcm(tau_M, tau_L));

    // Alphabet: distinct (C, R) over phase x loss-outcome.
    MeasurementAlphabet alphabet;
    std::map<std::string, int> seen;
    // (phase, bitmask) -> alphabet index
    std::vector<std::vector<int>> pair_index(
        static_cast<size_t>(tau), std::vector<int>(static_cast<size_t>(1 << R), -1));
    for (int ph = 0; ph < tau; ++ph) {
        const RMatrix& M = plan.selection[static_cast<size_t>(ph % tau_M)];
        for (int mask = 0; mask < (1 << R); ++mask) {
            RMatrix LM = RMatrix::Zero(R, S);
            for (int r = 0; r < R; ++r)
                if (mask & (1 << r)) LM.row(r) = M.row(r);
            CMatrix B = kron(CMatrix(LM.cast<Complex>()),
                             CMatrix(CMatrix::Identity(d, d)));
            MeasurementPair pr;
            pr.C = B * HVinv;
            pr.R = B * E * B.adjoint();
            std::string key = detail::pair_key(pr);
            auto it = seen.find(key);
            int idx;
            if (it == seen.end()) {
                idx = alphabet.size();
                pr.label = "phase" + std::to_string(ph) + "_mask" + std::to_string(mask);
                alphabet.pairs.push_back(std::move(pr));
                seen.emplace(std::move(key), idx);
            } else {
                idx = it->second;
            }
            pair_index[static_cast<size_t>(ph)][static_cast<size_t>(mask)] = idx;
        }
    }

    out.system.n = n;
    out.system.p = p;
    out.system.A = A;
    out.system.Q = V * suite.N_cov * V.adjoint();
    out.system.P0 = CMatrix::Identity(n, n);
    out.system.alphabet = std::move(alphabet);
    out.V = V;

    // Product channel: hidden state (phase ph, loss state e) = ph * |E_loss| + e.
    const int ne = plan.loss.num_states;
    ChannelModel ch;
    ch.variant = ChannelVariant::FiniteMarkov;
    ch.num_states = tau * ne;
    ch.period = tau;
    ch.emission.resize(static_cast<size_t>(ch.num_states));
    for (int ph = 0; ph < tau; ++ph)
        for (int e = 0; e < ne; ++e) {
            int mask = plan.loss.emission[static_cast<size_t>(e)];
            ch.emission[static_cast<size_t>(ph * ne + e)] =
                pair_index[static_cast<size_t>(ph)][static_cast<size_t>(mask)];
        }
    for (int m = 0; m < tau; ++m) {
        RMatrix K = RMatrix::Zero(ch.num_states, ch.num_states);
        const RMatrix& KL = plan.loss.kernel_at(m);
        for (int ph = 0; ph < tau; ++ph) {
            int ph2 = (ph + 1) % tau;
            for (int e = 0; e < ne; ++e)
                for (int e2 = 0; e2 < ne; ++e2)
                    K(ph * ne + e, ph2 * ne + e2) = KL(e, e2);
        }
        ch.kernels.push_back(std::move(K));
    }
    ch.mu0 = RVector::Zero(ch.num_states);
    RVector loss_mu = stationary_phase_distribution(plan.loss, 0);
    for (int e = 0; e < ne; ++e) ch.mu0(e) = loss_mu(e);
    out.channel = std::move(ch);
    return out;
}

/// The worked example: A = diag(J2(alpha1), alpha2), two sensors transmitted
/// alternately over a single lossy slot.
inline AggregateResult example_7_3(double alpha1, double alpha2,
                                   const ChannelModel& loss,
                                   const Tolerances& tol = {}) {
    if (!(alpha1 > alpha2 && alpha2 > 0.0))
        throw Error("example_7_3: alpha1 > alpha2 > 0 required");
    SensorSuite suite;
    suite.F = CMatrix::Zero(3, 3);
    suite.F.block(0, 0, 2, 2) = jordan_block(alpha1, 2);
    suite.F(2, 2) = alpha2;
    suite.N_cov = CMatrix::Identity(3, 3);
    Sensor s1, s2;
    s1.H = CMatrix::Zero(2, 3);
    s1.H << Complex(2), Complex(1), Complex(0), Complex(0), Complex(1), Complex(0);
    s1.E = CMatrix::Identity(2, 2);
    s2.H = CMatrix::Zero(2, 3);
    s2.H << Complex(0), Complex(0), Complex(1), Complex(0), Complex(0), Complex(2);
    s2.E = CMatrix::Identity(2, 2);
    suite.sensors = {s1, s2};
    suite.R_slots = 1;

    SchedulePlan plan;
    RMatrix M_even(1, 2), M_odd(1, 2);
    M_even << 1.0, 0.0;
    M_odd << 0.0, 1.0;
    plan.selection = {M_even, M_odd};
    plan.loss = loss;
    return aggregate(suite, plan, tol);
}

inline AggregateResult example_7_3(double alpha1, double alpha2, double lambda,
                                   const Tolerances& tol = {}) {
    return example_7_3(alpha1, alpha2, SchedulePlan::iid_scalar_loss(lambda), tol);
}

}  // namespace kfstab
