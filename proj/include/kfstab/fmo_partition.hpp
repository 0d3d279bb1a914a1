#pragma once

// Partition of the Jordan-form state matrix into blocks whose eigenvalues
// share a common finite multiplicative order, together with the matching
// column slices of the measurement matrices.

#include "kfstab/matrix_core.hpp"
#include "kfstab/model.hpp"

#include <numeric>
#include <optional>
#include <vector>

namespace kfstab {

struct CfmoResult {
    int order = 1;   // smallest N with x_i^N = alpha^N for all i
    Complex alpha;   // representative (first value)
};

namespace detail {

/// Best rational approximation p/q of x in [0,1) with q <= qmax, by continued
/// fractions. Returns {p, q}.
inline std::pair<long long, long long> rational_approx(double x, long long qmax) {
    long long p_prev = 1, q_prev = 0;
    long long p_cur = static_cast<long long>(std::floor(x)), q_cur = 1;
    double frac = x - std::floor(x);
    for (int it = 0; it < 64; ++it) {
        if (frac < 1e-15) break;
        double inv = 1.0 / frac;
        long long a = static_cast<long long>(std::floor(inv));
        frac = inv - std::floor(inv);
        long long p_next = a * p_cur + p_prev;
        long long q_next = a * q_cur + q_prev;
        if (q_next > qmax) {
            // semiconvergent with the largest admissible coefficient
            long long a_cap = (qmax - q_prev) / q_cur;
            if (a_cap >= 1) {
                long long p_semi = a_cap * p_cur + p_prev;
                long long q_semi = a_cap * q_cur + q_prev;
                if (std::abs(x - double(p_semi) / double(q_semi)) <
                    std::abs(x - double(p_cur) / double(q_cur)))
                    return {p_semi, q_semi};
            }
            break;
        }
        p_prev = p_cur; q_prev = q_cur;
        p_cur = p_next; q_cur = q_next;
    }
    return {p_cur, q_cur};
}

}  // namespace detail

/// Smallest N <= n_max_order and representative alpha such that every value
/// is an N-th root of unity times alpha. Empty when no such order exists.
inline std::optional<CfmoResult> cfmo(const std::vector<Complex>& values,
                                      const Tolerances& tol = {}) {
    if (values.empty()) throw Error("cfmo: empty value set");
    for (const Complex& v : values)
        if (v == Complex(0.0, 0.0)) throw Error("cfmo: zero value present");
    const Complex alpha = values[0];
    long long N = 1;
    const double two_pi = 2.0 * M_PI;
    for (const Complex& v : values) {
        Complex r = v / alpha;
        if (std::abs(std::abs(r) - 1.0) > tol.tol_angle) return std::nullopt;
        double theta = std::arg(r) / two_pi;
        theta -= std::floor(theta);  // into [0, 1)
        auto [p, q] = detail::rational_approx(theta, tol.n_max_order);
        (void)p;
        double best = double(p) / double(q);
        double err = std::min(std::abs(theta - best),
                              1.0 - std::abs(theta - best));
        if (err > tol.tol_angle) return std::nullopt;
        N = std::lcm(N, q);
        if (N > tol.n_max_order) return std::nullopt;
    }
    // Confirm: x_i^N must equal alpha^N within tolerance.
    Complex aN = std::pow(alpha, static_cast<double>(N));
    for (const Complex& v : values) {
        Complex vN = std::pow(v, static_cast<double>(N));
        if (std::abs(vN - aN) > 1e3 * tol.tol_angle * std::abs(aN))
            return std::nullopt;
    }
    return CfmoResult{static_cast<int>(N), alpha};
}

struct FmoBlock {
    int index = 0;              // k, after Notation-1 ordering
    Index col_begin = 0;        // contiguous column range of A_k in A
    Index col_count = 0;
    Complex alpha;              // alpha_k (first diagonal entry; 0 for nilpotent)
    int order = 1;              // N_k
    Index jbar = 1;             // largest Jordan block size inside A_k
    std::vector<Index> jordan_sizes;
    CMatrix A_block;            // the A_k sub-matrix
    std::vector<CMatrix> C_parts;  // per-alphabet-entry column slices

    Index dim() const { return col_count; }

    /// A_k^t via per-Jordan-sub-block closed-form binomial entries. Supports
    /// negative t when alpha != 0.
    CMatrix power(long long t) const {
        CMatrix out = CMatrix::Zero(col_count, col_count);
        Index off = 0;
        for (Index j : jordan_sizes) {
            out.block(off, off, j, j) =
                jordan_block_power(A_block(off, off), j, t);
            off += j;
        }
        return out;
    }
};

struct FmoPartition {
    std::vector<FmoBlock> blocks;  // ordered |alpha_1| >= |alpha_2| >= ...
    Index jbar_global = 1;         // max_k Jbar_k
    long long N_lcm = 1;           // lcm of all N_k
};

/// Split the Jordan matrix A into maximal contiguous CFMO groups and slice
/// each C^(d) to match. Requires equal-CFMO Jordan blocks to arrive adjacent;
/// a required non-contiguous grouping is an error telling the user to permute.
inline FmoPartition partition(const SystemModel& sys, const Tolerances& tol = {}) {
    sys.check_dimensions();
    if (!detail::check_jordan_form(sys.A, nullptr))
        throw Error("partition: A is not in Jordan normal form");
    const CMatrix& A = sys.A;
    const Index n = A.rows();

    // Jordan sub-blocks: maximal superdiagonal-1 chains.
    struct JBlock { Index begin; Index size; Complex eig; };
    std::vector<JBlock> jblocks;
    Index start = 0;
    for (Index i = 0; i < n; ++i) {
        bool chain = (i + 1 < n) && std::abs(A(i, i + 1) - 1.0) <= 1e-12;
        if (!chain) {
            jblocks.push_back({start, i - start + 1, A(start, start)});
            start = i + 1;
        }
    }

    auto is_zero = [&](Complex x) { return std::abs(x) <= tol.tol_angle; };

    // Greedy contiguous grouping.
    struct Group { std::vector<size_t> members; std::vector<Complex> eigs; bool zero; };
    std::vector<Group> groups;
    for (size_t b = 0; b < jblocks.size(); ++b) {
        Complex eig = jblocks[b].eig;
        bool merged = false;
        if (!groups.empty()) {
            Group& g = groups.back();
            if (g.zero && is_zero(eig)) {
                merged = true;
            } else if (!g.zero && !is_zero(eig)) {
                std::vector<Complex> trial = g.eigs;
                trial.push_back(eig);
                if (cfmo(trial, tol).has_value()) merged = true;
            }
            if (merged) {
                g.members.push_back(b);
                if (!g.zero) g.eigs.push_back(eig);
            }
        }
        if (!merged)
            groups.push_back({{b}, is_zero(eig) ? std::vector<Complex>{}
                                                : std::vector<Complex>{eig},
                              is_zero(eig)});
    }

    // Reject groupings that would need a permutation of A.
    for (size_t i = 0; i < groups.size(); ++i) {
        for (size_t j = i + 2; j < groups.size(); ++j) {
            bool mergeable;
            if (groups[i].zero || groups[j].zero) {
                mergeable = groups[i].zero && groups[j].zero;
            } else {
                std::vector<Complex> all = groups[i].eigs;
                all.insert(all.end(), groups[j].eigs.begin(), groups[j].eigs.end());
                mergeable = cfmo(all, tol).has_value();
            }
            if (mergeable)
                throw Error(
                    "partition: diagonal entries with a common finite "
                    "multiplicative order are not adjacent; permute A (and the "
                    "C columns) so equal-order Jordan blocks are contiguous");
        }
    }

    FmoPartition part;
    for (const Group& g : groups) {
        FmoBlock blk;
        blk.col_begin = jblocks[g.members.front()].begin;
        Index end = jblocks[g.members.back()].begin + jblocks[g.members.back()].size;
        blk.col_count = end - blk.col_begin;
        for (size_t m : g.members) {
            blk.jordan_sizes.push_back(jblocks[m].size);
            blk.jbar = std::max(blk.jbar, jblocks[m].size);
        }
        if (g.zero) {
            blk.alpha = 0.0;
            blk.order = 1;
        } else {
            auto res = cfmo(g.eigs, tol);
            blk.alpha = res->alpha;
            blk.order = res->order;
        }
        blk.A_block = A.block(blk.col_begin, blk.col_begin, blk.col_count,
                              blk.col_count);
        for (const auto& pr : sys.alphabet.pairs)
            blk.C_parts.push_back(pr.C.middleCols(blk.col_begin, blk.col_count));
        part.blocks.push_back(std::move(blk));
    }

    std::stable_sort(part.blocks.begin(), part.blocks.end(),
                     [](const FmoBlock& a, const FmoBlock& b) {
                         double ma = std::abs(a.alpha), mb = std::abs(b.alpha);
                         if (ma != mb) return ma > mb;
                         return a.jbar > b.jbar;
                     });
    for (size_t k = 0; k < part.blocks.size(); ++k) {
        part.blocks[k].index = static_cast<int>(k);
        part.jbar_global = std::max(part.jbar_global, part.blocks[k].jbar);
        part.N_lcm = std::lcm(part.N_lcm,
                              static_cast<long long>(part.blocks[k].order));
    }
    return part;
}

}  // namespace kfstab
