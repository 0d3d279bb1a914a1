#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kfstab/fmo_partition.hpp"
#include "kfstab/schedule_builder.hpp"

using namespace kfstab;

namespace {

SystemModel system_with_A(const CMatrix& A) {
    SystemModel sys;
    sys.n = A.rows();
    sys.p = 1;
    sys.A = A;
    sys.Q = CMatrix::Identity(sys.n, sys.n);
    sys.P0 = CMatrix::Identity(sys.n, sys.n);
    MeasurementPair pr;
    pr.C = CMatrix::Ones(1, sys.n);
    pr.R = CMatrix::Identity(1, 1);
    sys.alphabet.pairs = {pr};
    return sys;
}

}  // namespace

TEST_CASE("cfmo detects common finite multiplicative order") {
    const Complex i(0.0, 1.0);
    auto r4 = cfmo({Complex(2), 2.0 * i, Complex(-2), -2.0 * i});
    REQUIRE(r4.has_value());
    CHECK(r4->order == 4);
    CHECK(std::abs(std::pow(r4->alpha, 4.0) - Complex(16.0)) < 1e-9);

    auto none = cfmo({Complex(1), std::exp(Complex(0.0, std::sqrt(2.0)))});
    CHECK_FALSE(none.has_value());

    auto single = cfmo({Complex(3)});
    REQUIRE(single.has_value());
    CHECK(single->order == 1);
    CHECK(single->alpha == Complex(3));

    CHECK_THROWS_AS(cfmo({Complex(0)}), Error);
    CHECK_THROWS_AS(cfmo({}), Error);

    // different magnitudes never share an order
    CHECK_FALSE(cfmo({Complex(1), Complex(2)}).has_value());

    // roots of unity of mixed order: lcm is returned
    auto r6 = cfmo({Complex(1), std::exp(Complex(0.0, 2.0 * M_PI / 3.0)),
                    Complex(-1)});
    REQUIRE(r6.has_value());
    CHECK(r6->order == 6);
}

TEST_CASE("partition of the worked example A") {
    CMatrix A = CMatrix::Zero(3, 3);
    A.block(0, 0, 2, 2) = jordan_block(1.3, 2);
    A(2, 2) = 1.1;
    SystemModel sys = system_with_A(A);
    sys.p = 2;
    sys.alphabet.pairs[0].C = CMatrix::Ones(2, 3);
    sys.alphabet.pairs[0].R = CMatrix::Identity(2, 2);

    FmoPartition part = partition(sys);
    REQUIRE(part.blocks.size() == 2);
    CHECK(part.blocks[0].alpha == Complex(1.3));
    CHECK(part.blocks[0].order == 1);
    CHECK(part.blocks[0].jbar == 2);
    CHECK(part.blocks[0].dim() == 2);
    CHECK(part.blocks[1].alpha == Complex(1.1));
    CHECK(part.blocks[1].jbar == 1);
    CHECK(part.jbar_global == 2);
    CHECK(part.N_lcm == 1);
    // C column slices follow the blocks
    CHECK(part.blocks[0].C_parts[0].cols() == 2);
    CHECK(part.blocks[1].C_parts[0].cols() == 1);
}

TEST_CASE("notation-1 ordering: |alpha| descending, jbar tiebreak") {
    // 1.1 and 1.1*e^{i*sqrt(2)} share a modulus but have no common finite
    // multiplicative order, so they stay in separate blocks.
    const Complex rot = std::polar(1.1, std::sqrt(2.0));
    CMatrix A = CMatrix::Zero(4, 4);
    A(0, 0) = 1.1;                              // small jbar first in A
    A.block(1, 1, 2, 2) = jordan_block(rot, 2); // same |alpha|, bigger jbar
    A(3, 3) = 2.0;
    SystemModel sys = system_with_A(A);
    FmoPartition part = partition(sys);
    REQUIRE(part.blocks.size() == 3);
    CHECK(std::abs(part.blocks[0].alpha) == doctest::Approx(2.0));
    CHECK(std::abs(part.blocks[1].alpha) == doctest::Approx(1.1));
    CHECK(part.blocks[1].jbar == 2);  // tie broken toward larger Jordan block
    CHECK(part.blocks[2].jbar == 1);
}

TEST_CASE("rotation family groups into one block") {
    // diag(2, 2i, -2, -2i): one FMO block of order 4
    const Complex i(0.0, 1.0);
    CMatrix A = CMatrix::Zero(4, 4);
    A(0, 0) = 2.0;
    A(1, 1) = 2.0 * i;
    A(2, 2) = -2.0;
    A(3, 3) = -2.0 * i;
    FmoPartition part = partition(system_with_A(A));
    REQUIRE(part.blocks.size() == 1);
    CHECK(part.blocks[0].order == 4);
    CHECK(part.N_lcm == 4);
}

TEST_CASE("zero eigenvalues are grouped separately") {
    CMatrix A = CMatrix::Zero(3, 3);
    A(0, 0) = 1.5;
    // 2x2 nilpotent Jordan block
    A(1, 2) = 1.0;
    FmoPartition part = partition(system_with_A(A));
    REQUIRE(part.blocks.size() == 2);
    CHECK(std::abs(part.blocks[0].alpha) == doctest::Approx(1.5));
    CHECK(part.blocks[1].alpha == Complex(0.0));
    CHECK(part.blocks[1].order == 1);
    CHECK(part.blocks[1].jbar == 2);
}

TEST_CASE("non-contiguous CFMO group is rejected with a permute hint") {
    CMatrix A = CMatrix::Zero(3, 3);
    A(0, 0) = 1.0;
    A(1, 1) = 2.0;
    A(2, 2) = -1.0;  // shares order 2 with entry 0 but is not adjacent
    CHECK_THROWS_WITH_AS(partition(system_with_A(A)),
                         doctest::Contains("permute"), Error);
}

TEST_CASE("block power matches dense powering") {
    CMatrix A = CMatrix::Zero(3, 3);
    A.block(0, 0, 2, 2) = jordan_block(Complex(0.9, 0.2), 2);
    A(2, 2) = Complex(0.9, 0.2);
    FmoPartition part = partition(system_with_A(A));
    REQUIRE(part.blocks.size() == 1);
    const FmoBlock& blk = part.blocks[0];
    CMatrix direct = CMatrix::Identity(3, 3);
    for (long long t = 0; t <= 10; ++t) {
        CHECK((blk.power(t) - direct).cwiseAbs().maxCoeff() <= 1e-9);
        direct = direct * A;
    }
    CMatrix round_trip = blk.power(-4) * blk.power(4);
    CHECK((round_trip - CMatrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("partition rejects non-Jordan input") {
    CMatrix A(2, 2);
    A << Complex(1), Complex(2), Complex(0), Complex(1);
    CHECK_THROWS_AS(partition(system_with_A(A)), Error);
}
