#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kfstab/kalman_sim.hpp"

#include <random>

using namespace kfstab;

namespace {

SystemModel scalar_system(double a, double q = 1.0, double r = 1.0,
                          double loss_r = 0.0) {
    SystemModel sys;
    sys.n = 1;
    sys.p = 1;
    sys.A = CMatrix::Constant(1, 1, a);
    sys.Q = CMatrix::Constant(1, 1, q);
    sys.P0 = CMatrix::Identity(1, 1);
    MeasurementPair lost, got;
    lost.C = CMatrix::Zero(1, 1);
    lost.R = CMatrix::Constant(1, 1, loss_r);
    got.C = CMatrix::Identity(1, 1);
    got.R = CMatrix::Constant(1, 1, r);
    sys.alphabet.pairs = {lost, got};
    return sys;
}

CMatrix random_psd(Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    CMatrix a(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) a(i, j) = Complex(g(rng), g(rng));
    return a * a.adjoint();
}

}  // namespace

TEST_CASE("riccati_step base cases") {
    std::mt19937_64 rng(31);
    CMatrix A(2, 2), Q = random_psd(2, rng), P = random_psd(2, rng);
    A << Complex(1.1), Complex(0.3), Complex(0), Complex(0.9);

    // lost measurement: psi(P) = A P A* + Q
    CMatrix lost = riccati_step(P, CMatrix::Zero(2, 2), CMatrix::Zero(2, 2), A, Q);
    CMatrix expect = A * P * A.adjoint() + Q;
    CHECK((lost - expect).cwiseAbs().maxCoeff() <= 1e-10 * expect.norm());

    // exact observation: C invertible, R = 0 => psi(P) = Q
    CMatrix exact = riccati_step(P, CMatrix::Identity(2, 2), CMatrix::Zero(2, 2), A, Q);
    CHECK((exact - Q).cwiseAbs().maxCoeff() <= 1e-8 * Q.norm());

    // scalar hand evaluation: a=2, q=1, c=1, r=1, P=1 -> 4+1-4/2 = 3
    CMatrix one = CMatrix::Identity(1, 1);
    CMatrix res = riccati_step(one, one, one, CMatrix::Constant(1, 1, 2.0), one);
    CHECK(res(0, 0).real() == doctest::Approx(3.0).epsilon(1e-12));

    CHECK_THROWS_AS(
        riccati_step(P, CMatrix::Zero(1, 2), CMatrix::Zero(1, 1), A,
                     CMatrix::Zero(3, 3)),
        Error);
}

TEST_CASE("riccati_step preserves the PSD cone") {
    std::mt19937_64 rng(32);
    CMatrix A(3, 3);
    A.setZero();
    A(0, 0) = 1.3;
    A(0, 1) = 1.0;
    A(1, 1) = 1.3;
    A(2, 2) = 0.7;
    for (int it = 0; it < 50; ++it) {
        CMatrix P = random_psd(3, rng);
        CMatrix C(1, 3);
        std::normal_distribution<double> g(0.0, 1.0);
        for (Index j = 0; j < 3; ++j) C(0, j) = Complex(g(rng), g(rng));
        CMatrix R = CMatrix::Constant(1, 1, std::abs(g(rng)));
        CMatrix out = riccati_step(P, C, R, A, random_psd(3, rng));
        CHECK(is_hermitian_psd(out, 1e-10));
    }
}

TEST_CASE("monotonicity in P: x >= y => Psi(xI) - Psi(yI) PSD") {
    SystemModel sys = scalar_system(1.3);
    sys.n = 2;
    sys.p = 1;
    sys.A = CMatrix::Zero(2, 2);
    sys.A(0, 0) = 1.3;
    sys.A(0, 1) = 1.0;
    sys.A(1, 1) = 1.3;
    sys.Q = CMatrix::Identity(2, 2);
    sys.P0 = CMatrix::Identity(2, 2);
    sys.alphabet.pairs[0].C = CMatrix::Zero(1, 2);
    sys.alphabet.pairs[0].R = CMatrix::Zero(1, 1);
    sys.alphabet.pairs[1].C = CMatrix::Ones(1, 2);
    sys.alphabet.pairs[1].R = CMatrix::Identity(1, 1);

    RVector probs(2);
    probs << 0.4, 0.6;
    ChannelModel ch = ChannelModel::iid(probs);
    for (int it = 0; it < 20; ++it) {
        ChannelTrace tr = sample_trace(ch, 0, 8, static_cast<std::uint64_t>(it));
        double x = 2.0 + it * 0.3, y = 0.5 + it * 0.1;
        CMatrix Px = compose(CMatrix(x * CMatrix::Identity(2, 2)), tr, sys).P_seq.back();
        CMatrix Py = compose(CMatrix(y * CMatrix::Identity(2, 2)), tr, sys).P_seq.back();
        CHECK(is_hermitian_psd(CMatrix(Px - Py), 1e-8));
    }
}

TEST_CASE("compose: all-lost trace equals the Lyapunov closed form") {
    std::mt19937_64 rng(33);
    SystemModel sys = scalar_system(1.2);
    sys.n = 2;
    sys.p = 1;
    sys.A = jordan_block(1.2, 2);
    sys.Q = random_psd(2, rng);
    sys.P0 = random_psd(2, rng);
    sys.alphabet.pairs[0].C = CMatrix::Zero(1, 2);
    sys.alphabet.pairs[1].C = CMatrix::Ones(1, 2);
    sys.alphabet.pairs[0].R = CMatrix::Zero(1, 1);
    sys.alphabet.pairs[1].R = CMatrix::Identity(1, 1);

    const int T = 7;
    ChannelTrace all_lost;
    all_lost.t0 = 0;
    all_lost.gamma.assign(T, 0);
    CovTrajectory traj = compose(sys.P0, all_lost, sys);
    REQUIRE(traj.P_seq.size() == T + 1);

    // oracle: P_T = A^T P0 A*^T + sum_j A^j Q A*^j
    CMatrix At = CMatrix::Identity(2, 2);
    CMatrix expect = CMatrix::Zero(2, 2);
    for (int j = 0; j < T; ++j) {
        expect += At * sys.Q * At.adjoint();
        At = sys.A * At;
    }
    expect += At * sys.P0 * At.adjoint();
    CHECK((traj.P_seq.back() - expect).cwiseAbs().maxCoeff() <=
          1e-10 * expect.norm());
}

TEST_CASE("compose concatenation equals stepwise composition") {
    SystemModel sys = scalar_system(1.5);
    ChannelTrace g1, g2, concat;
    g1.gamma = {0, 1, 0};
    g2.gamma = {1, 1, 0, 0};
    concat.gamma = {0, 1, 0, 1, 1, 0, 0};
    CMatrix mid = compose(sys.P0, g1, sys).P_seq.back();
    CMatrix two_step = compose(mid, g2, sys).P_seq.back();
    CMatrix one_shot = compose(sys.P0, concat, sys).P_seq.back();
    CHECK((two_step - one_shot).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("estimate_growth: stable system has non-positive slope") {
    SystemModel sys = scalar_system(0.8);
    RVector probs(2);
    probs << 0.5, 0.5;
    ChannelModel ch = ChannelModel::iid(probs);
    GrowthEstimate est = estimate_growth(sys, ch, sys.P0, 0,
                                         {5, 10, 15, 20, 25, 30, 35, 40}, 500, 17);
    CHECK(est.slope <= 3.0 * est.slope_se + 1e-9);
}

TEST_CASE("estimate_growth is deterministic for a fixed seed") {
    SystemModel sys = scalar_system(1.2);
    RVector probs(2);
    probs << 0.3, 0.7;
    ChannelModel ch = ChannelModel::iid(probs);
    GrowthEstimate a = estimate_growth(sys, ch, sys.P0, 0, {5, 10, 15, 20}, 300, 4);
    GrowthEstimate b = estimate_growth(sys, ch, sys.P0, 0, {5, 10, 15, 20}, 300, 4);
    CHECK(a.log_mean_norms == b.log_mean_norms);
    CHECK(a.slope == b.slope);
    // thread count must not change the result (fixed batch partition)
    GrowthEstimate c =
        estimate_growth(sys, ch, sys.P0, 0, {5, 10, 15, 20}, 300, 4, {}, 4);
    for (size_t i = 0; i < a.log_mean_norms.size(); ++i)
        CHECK(a.log_mean_norms[i] ==
              doctest::Approx(c.log_mean_norms[i]).epsilon(1e-12));
}

TEST_CASE("log-domain rescaling survives strongly unstable horizons") {
    // |alpha| = 1.3, all measurements lost: ||P_T|| ~ 1.69^T overflows double
    // near T = 700 without rescaling.
    SystemModel sys = scalar_system(1.3);
    RVector probs(2);
    probs << 1.0, 0.0;  // always lost
    ChannelModel ch = ChannelModel::iid(probs);
    GrowthEstimate est =
        estimate_growth(sys, ch, sys.P0, 0, {200, 400, 600, 800, 1000}, 100, 2);
    for (double v : est.log_mean_norms) CHECK(std::isfinite(v));
    CHECK(est.slope == doctest::Approx(2.0 * std::log(1.3)).epsilon(1e-6));
}

TEST_CASE("exhaustive E(Psi) enumeration matches Monte Carlo (T <= 12)") {
    SystemModel sys = scalar_system(1.1);
    ChannelModel ch = ChannelModel::gilbert_elliott(0.25, 0.45, 1, 0);
    const int T = 12;

    // enumeration oracle
    CMatrix mean_exact = CMatrix::Zero(1, 1);
    for (int code = 0; code < (1 << T); ++code) {
        ChannelTrace tr;
        tr.t0 = 0;
        for (int s = 0; s < T; ++s) tr.gamma.push_back((code >> s) & 1);
        double p = sequence_probability(ch, 0, tr.gamma);
        if (p == 0.0) continue;
        mean_exact += p * compose(sys.P0, tr, sys).P_seq.back();
    }

    // Monte Carlo with batch-based uncertainty
    const long long trials = 20000;
    const int n_batches = 10;
    std::vector<double> batch_means(n_batches, 0.0);
    for (int b = 0; b < n_batches; ++b) {
        CMatrix acc = CMatrix::Zero(1, 1);
        long long lo = trials * b / n_batches, hi = trials * (b + 1) / n_batches;
        for (long long trial = lo; trial < hi; ++trial) {
            ChannelTrace tr =
                sample_trace(ch, 0, T, split_seed(77, static_cast<std::uint64_t>(trial)));
            acc += compose(sys.P0, tr, sys).P_seq.back();
        }
        batch_means[static_cast<size_t>(b)] =
            acc.norm() / static_cast<double>(hi - lo);
    }
    double mc = 0.0;
    for (double v : batch_means) mc += v;
    mc /= n_batches;
    double var = 0.0;
    for (double v : batch_means) var += (v - mc) * (v - mc);
    var /= (n_batches - 1);
    double se = std::sqrt(var / n_batches);
    CHECK(std::abs(mc - mean_exact.norm()) < 3.0 * se);
}

TEST_CASE("simulate_filter: zero noise and perfect observation converge") {
    SystemModel sys = scalar_system(1.5, /*q=*/0.0, /*r=*/0.0);
    RVector probs(2);
    probs << 0.0, 1.0;  // never lost
    ChannelModel ch = ChannelModel::iid(probs);
    FilterRun run = simulate_filter(sys, ch, 10, 3);
    for (size_t t = 2; t < run.states.size(); ++t) {
        double err = (run.states[t] - run.estimates[t]).norm();
        CHECK(err <= 1e-8 * std::max(1.0, run.states[t].norm()));
    }
}

TEST_CASE("simulate_filter MSE matches the Riccati trace (10^4 trials)") {
    SystemModel sys = scalar_system(0.9);
    RVector probs(2);
    probs << 0.3, 0.7;
    ChannelModel ch = ChannelModel::iid(probs);
    const int T = 15;
    const long long trials = 10000;
    double mse = 0.0, riccati = 0.0, sq_sum = 0.0;
    for (long long trial = 0; trial < trials; ++trial) {
        FilterRun run = simulate_filter(sys, ch, T, split_seed(55, trial));
        double err2 = (run.states.back() - run.estimates.back()).squaredNorm();
        mse += err2;
        sq_sum += err2 * err2;
        riccati += run.covariances.P_seq[static_cast<size_t>(T - 1)].real().trace();
    }
    mse /= trials;
    riccati /= trials;
    double var = sq_sum / trials - mse * mse;
    double se = std::sqrt(var / trials);
    CHECK(std::abs(mse - riccati) < 3.0 * se);
}

TEST_CASE("simulate_filter is deterministic given the seed") {
    SystemModel sys = scalar_system(1.2);
    RVector probs(2);
    probs << 0.2, 0.8;
    ChannelModel ch = ChannelModel::iid(probs);
    FilterRun a = simulate_filter(sys, ch, 25, 9);
    FilterRun b = simulate_filter(sys, ch, 25, 9);
    for (size_t t = 0; t < a.states.size(); ++t) {
        CHECK(a.states[t] == b.states[t]);
        CHECK(a.measurements[t] == b.measurements[t]);
        CHECK(a.estimates[t] == b.estimates[t]);
    }
}
