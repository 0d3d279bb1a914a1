#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kfstab/model.hpp"

using namespace kfstab;

namespace {

/// Scalar system with a two-entry alphabet (lost / received).
SystemModel scalar_system(double a) {
    SystemModel sys;
    sys.n = 1;
    sys.p = 1;
    sys.A = CMatrix::Constant(1, 1, a);
    sys.Q = CMatrix::Identity(1, 1);
    sys.P0 = CMatrix::Identity(1, 1);
    MeasurementPair lost, got;
    lost.C = CMatrix::Zero(1, 1);
    lost.R = CMatrix::Zero(1, 1);
    lost.label = "lost";
    got.C = CMatrix::Identity(1, 1);
    got.R = CMatrix::Identity(1, 1);
    got.label = "received";
    sys.alphabet.pairs = {lost, got};
    return sys;
}

}  // namespace

TEST_CASE("iid channel validates as proper and cyclostationary") {
    SystemModel sys = scalar_system(2.0);
    RVector probs(2);
    probs << 0.3, 0.7;
    ChannelModel ch = ChannelModel::iid(probs);
    DiagnosticsReport rep = validate(sys, ch);
    CHECK(rep.valid);
    CHECK(rep.proper);
    CHECK(rep.cyclostationary);
    CHECK(rep.zeta_bound == doctest::Approx(1.0 / 0.3));
}

TEST_CASE("invalid kernels and mu0 are diagnosed") {
    SystemModel sys = scalar_system(2.0);
    RVector probs(2);
    probs << 0.3, 0.7;
    ChannelModel ch = ChannelModel::iid(probs);
    ch.kernels[0](0, 0) = 0.2;  // row sums to 0.9
    DiagnosticsReport rep = validate(sys, ch);
    CHECK_FALSE(rep.valid);
    bool found = false;
    for (const auto& msg : rep.issues)
        if (msg.find("row-stochastic") != std::string::npos) found = true;
    CHECK(found);

    ChannelModel ch2 = ChannelModel::gilbert_elliott(0.2, 0.4, 1, 0);
    ch2.mu0 << 1.0, 0.0;  // not the stationary vector
    DiagnosticsReport rep2 = validate(sys, ch2);
    CHECK_FALSE(rep2.cyclostationary);
}

TEST_CASE("gilbert_elliott stationary distribution") {
    ChannelModel ch = ChannelModel::gilbert_elliott(0.2, 0.4, 1, 0);
    RVector mu = stationary_phase_distribution(ch, 0);
    CHECK(mu(0) == doctest::Approx(0.4 / 0.6));
    CHECK(mu(1) == doctest::Approx(0.2 / 0.6));
}

TEST_CASE("periodic channel stationary distribution is a fixed point") {
    // tau = 2 alternating emission probabilities
    RVector p0(2), p1(2);
    p0 << 0.3, 0.7;
    p1 << 0.8, 0.2;
    ChannelModel ch = ChannelModel::iid(std::vector<RVector>{p0, p1});
    for (int t = 0; t < 2; ++t) {
        RVector mu = stationary_phase_distribution(ch, t);
        RVector pushed = mu;
        for (int m = 0; m < ch.period; ++m)
            pushed = (pushed.transpose() * ch.kernel_at(t + m)).transpose();
        CHECK((pushed - mu).lpNorm<1>() < 1e-12);
    }
}

TEST_CASE("sample_trace determinism and distribution") {
    RVector probs(2);
    probs << 0.3, 0.7;
    ChannelModel ch = ChannelModel::iid(probs);

    ChannelTrace a = sample_trace(ch, 0, 100, 42);
    ChannelTrace b = sample_trace(ch, 0, 100, 42);
    CHECK(a.gamma == b.gamma);
    ChannelTrace c = sample_trace(ch, 0, 100, 43);
    CHECK(a.gamma != c.gamma);

    // empirical frequency of symbol 0 within 3 sigma of 0.3
    const long long N = 100000;
    ChannelTrace longrun = sample_trace(ch, 0, N, 7);
    long long zeros = 0;
    for (int g : longrun.gamma) zeros += (g == 0);
    double p_hat = static_cast<double>(zeros) / static_cast<double>(N);
    double sigma = std::sqrt(0.3 * 0.7 / static_cast<double>(N));
    CHECK(std::abs(p_hat - 0.3) < 3.0 * sigma);
}

TEST_CASE("gilbert_elliott empirical occupancy matches stationary vector") {
    ChannelModel ch = ChannelModel::gilbert_elliott(0.1, 0.3, 1, 0);
    const long long N = 100000;
    ChannelTrace tr = sample_trace(ch, 0, N, 11);
    long long in_good = 0;
    for (int s : tr.hidden) in_good += (s == 0);
    double pi_good = 0.3 / 0.4;
    double p_hat = static_cast<double>(in_good) / static_cast<double>(N);
    // crude 3-sigma band inflated for serial correlation
    double sigma = std::sqrt(pi_good * (1 - pi_good) / static_cast<double>(N));
    CHECK(std::abs(p_hat - pi_good) < 10.0 * sigma);
}

TEST_CASE("sequence_probability") {
    RVector probs(2);
    probs << 0.3, 0.7;
    ChannelModel ch = ChannelModel::iid(probs);
    CHECK(sequence_probability(ch, 0, {0, 0}) == doctest::Approx(0.09));
    CHECK(sequence_probability(ch, 0, {1, 0, 1}) ==
          doctest::Approx(0.7 * 0.3 * 0.7));

    // total probability over all length-3 sequences
    double total = 0.0;
    for (int g0 = 0; g0 < 2; ++g0)
        for (int g1 = 0; g1 < 2; ++g1)
            for (int g2 = 0; g2 < 2; ++g2)
                total += sequence_probability(ch, 0, {g0, g1, g2});
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // impossible emission: channel that never emits symbol 0
    RVector never(2);
    never << 0.0, 1.0;
    ChannelModel ch2 = ChannelModel::iid(never);
    CHECK(sequence_probability(ch2, 0, {0}) == doctest::Approx(0.0));
}

TEST_CASE("empirical sequence frequencies match sequence_probability (chi^2)") {
    ChannelModel ch = ChannelModel::gilbert_elliott(0.2, 0.5, 1, 0);
    const long long N = 100000;
    const int T = 3;
    std::vector<long long> counts(8, 0);
    for (long long trial = 0; trial < N; ++trial) {
        ChannelTrace tr = sample_trace(ch, 0, T, split_seed(99, trial));
        int code = tr.gamma[0] | (tr.gamma[1] << 1) | (tr.gamma[2] << 2);
        ++counts[static_cast<size_t>(code)];
    }
    double chi2 = 0.0;
    int dof = 0;
    for (int code = 0; code < 8; ++code) {
        std::vector<int> gamma = {code & 1, (code >> 1) & 1, (code >> 2) & 1};
        double p = sequence_probability(ch, 0, gamma);
        if (p < 1e-12) {
            CHECK(counts[static_cast<size_t>(code)] == 0);
            continue;
        }
        double expect = p * static_cast<double>(N);
        chi2 += (counts[static_cast<size_t>(code)] - expect) *
                (counts[static_cast<size_t>(code)] - expect) / expect;
        ++dof;
    }
    // chi^2 with 7 dof: p > 0.001 threshold ~ 24.3; allow margin
    CHECK(chi2 < 26.0);
    CHECK(dof == 8);
}

TEST_CASE("order-L lift reproduces the conditional table") {
    // order-2 table over alphabet {0,1}: P(1 | history) varies per history
    std::vector<RVector> table;
    for (int h = 0; h < 4; ++h) {
        RVector row(2);
        double p1 = 0.2 + 0.15 * h;
        row << 1.0 - p1, p1;
        table.push_back(row);
    }
    ChannelModel ch = ChannelModel::from_order_L_table(2, 2, table);
    CHECK(ch.num_states == 4);
    // state = history code (g_{t-2}*2 + g_{t-1}); emission = last symbol
    CHECK(ch.emission[0] == 0);
    CHECK(ch.emission[3] == 1);
    // transition from history (g2=1,g1=0) i.e. state 2: next history must be
    // (g1=0, new) -> states 0 or 1 with probs from row 2
    CHECK(ch.kernels[0](2, 0) == doctest::Approx(1.0 - 0.5));
    CHECK(ch.kernels[0](2, 1) == doctest::Approx(0.5));
    CHECK(ch.kernels[0](2, 2) == doctest::Approx(0.0));
    SystemModel sys = scalar_system(2.0);
    CHECK(validate(sys, ch).valid);
}

TEST_CASE("gaussian hidden channel samples and classifies") {
    ChannelModel ch;
    ch.variant = ChannelVariant::GaussianHidden;
    ch.gaussian.K = CMatrix::Constant(1, 1, 0.5);
    ch.gaussian.Sigma = RMatrix::Identity(1, 1);
    const double inf = std::numeric_limits<double>::infinity();
    RVector lo_neg(1), hi_neg(1), lo_pos(1), hi_pos(1);
    lo_neg << -inf;
    hi_neg << 0.0;
    lo_pos << 0.0;
    hi_pos << inf;
    ch.gaussian.box_lo = {lo_neg, lo_pos};
    ch.gaussian.box_hi = {hi_neg, hi_pos};
    ch.gaussian.region_labels = {0, 1};

    const long long N = 50000;
    ChannelTrace tr = sample_trace(ch, 0, N, 5);
    long long neg = 0;
    for (int g : tr.gamma) neg += (g == 0);
    // stationary symmetric around 0 => P(neg) = 0.5
    double p_hat = static_cast<double>(neg) / static_cast<double>(N);
    CHECK(std::abs(p_hat - 0.5) < 0.02);

    SystemModel sys = scalar_system(2.0);
    DiagnosticsReport rep = validate(sys, ch);
    CHECK(rep.valid);
    CHECK(rep.monte_carlo_only);
}

TEST_CASE("validate flags structural violations") {
    SystemModel sys = scalar_system(2.0);
    sys.Q = -CMatrix::Identity(1, 1);
    RVector probs(2);
    probs << 0.5, 0.5;
    DiagnosticsReport rep = validate(sys, ChannelModel::iid(probs));
    CHECK_FALSE(rep.valid);

    SystemModel sys2 = scalar_system(2.0);
    ChannelModel bad = ChannelModel::iid(probs);
    bad.emission = {0, 5};  // missing alphabet entry
    CHECK_FALSE(validate(sys2, bad).valid);
}

TEST_CASE("non-jordan A is rejected") {
    SystemModel sys = scalar_system(2.0);
    sys.n = 2;
    sys.A = CMatrix::Zero(2, 2);
    sys.A << Complex(1), Complex(0.5), Complex(0), Complex(1);
    sys.Q = CMatrix::Identity(2, 2);
    sys.P0 = CMatrix::Identity(2, 2);
    for (auto& pr : sys.alphabet.pairs) pr.C = CMatrix::Zero(1, 2);
    RVector probs(2);
    probs << 0.5, 0.5;
    DiagnosticsReport rep = validate(sys, ChannelModel::iid(probs));
    CHECK_FALSE(rep.valid);
}
