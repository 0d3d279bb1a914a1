#pragma once

// Per-block observability matrices O_k(Gamma), full-column-rank tests
// (plain and strength-q), the kernel map psi and the finite kernel lattice.

#include "kfstab/fmo_partition.hpp"

#include <map>
#include <optional>
#include <vector>

namespace kfstab {

struct ObsMatrix {
    std::vector<int> gamma;  // alphabet indices, length T
    CMatrix matrix;          // (T * p) x block_dim stacking C_{t+s} A^s
};

namespace detail {

/// Stack rows C_gamma(s) * Apow(s). `c_of` selects the (block) C for an
/// alphabet index; `a_pow` provides A^s.
template <typename CSel, typename APow>
CMatrix stack_obs(const std::vector<int>& gamma, Index p, Index dim, CSel&& c_of,
                  APow&& a_pow) {
    CMatrix out(static_cast<Index>(gamma.size()) * p, dim);
    for (size_t s = 0; s < gamma.size(); ++s)
        out.middleRows(static_cast<Index>(s) * p, p) =
            c_of(gamma[s]) * a_pow(static_cast<long long>(s));
    return out;
}

}  // namespace detail

/// O_k(Gamma) for one FMO block.
inline ObsMatrix build_obs(const FmoBlock& block, const MeasurementAlphabet& alphabet,
                           const std::vector<int>& gamma) {
    for (int g : gamma)
        if (g < 0 || g >= alphabet.size())
            throw Error("build_obs: gamma index out of range");
    const Index p = alphabet.pairs.front().C.rows();
    ObsMatrix o;
    o.gamma = gamma;
    o.matrix = detail::stack_obs(
        gamma, p, block.dim(),
        [&](int g) { return block.C_parts[static_cast<size_t>(g)]; },
        [&](long long s) { return block.power(s); });
    return o;
}

/// O(Gamma) for the whole system (all blocks side by side).
inline ObsMatrix build_obs(const SystemModel& sys, const FmoPartition& part,
                           const std::vector<int>& gamma) {
    const Index p = sys.p;
    ObsMatrix o;
    o.gamma = gamma;
    o.matrix = CMatrix(static_cast<Index>(gamma.size()) * p, sys.n);
    for (const FmoBlock& blk : part.blocks)
        o.matrix.middleCols(blk.col_begin, blk.col_count) =
            build_obs(blk, sys.alphabet, gamma).matrix;
    return o;
}

inline bool has_fcr(const ObsMatrix& o, const Tolerances& tol = {}) {
    if (o.matrix.rows() == 0 || o.matrix.cols() == 0) return false;
    return numerical_rank(o.matrix, tol) == o.matrix.cols();
}

/// FCR(q): more than q rows, and FCR survives deletion of any q rows.
/// Exhaustive for C(rows, q) <= 1e5; otherwise a sufficient spark-style check
/// with `exact = false` flagged on the result.
struct FcrStrengthResult {
    bool holds = false;
    bool exact = true;
};

inline FcrStrengthResult has_fcr_strength(const ObsMatrix& o, int q,
                                          const Tolerances& tol = {}) {
    if (q < 0) throw Error("has_fcr_strength: q >= 0 required");
    FcrStrengthResult res;
    const Index rows = o.matrix.rows();
    const Index cols = o.matrix.cols();
    if (rows <= q) return res;  // needs more than q rows
    if (q == 0) {
        res.holds = has_fcr(o, tol);
        return res;
    }
    double combos = 1.0;
    for (int i = 0; i < q; ++i)
        combos *= static_cast<double>(rows - i) / static_cast<double>(i + 1);
    if (combos <= 1e5) {
        // enumerate all q-subsets of rows to delete
        std::vector<Index> sel(static_cast<size_t>(q));
        for (int i = 0; i < q; ++i) sel[static_cast<size_t>(i)] = i;
        while (true) {
            CMatrix kept(rows - q, cols);
            Index out_r = 0;
            size_t si = 0;
            for (Index r = 0; r < rows; ++r) {
                if (si < sel.size() && sel[si] == r) { ++si; continue; }
                kept.row(out_r++) = o.matrix.row(r);
            }
            if (numerical_rank(kept, tol) != cols) return res;  // holds=false
            // next combination
            int i = q - 1;
            while (i >= 0 && sel[static_cast<size_t>(i)] == rows - q + i) --i;
            if (i < 0) break;
            ++sel[static_cast<size_t>(i)];
            for (int j = i + 1; j < q; ++j)
                sel[static_cast<size_t>(j)] = sel[static_cast<size_t>(j - 1)] + 1;
        }
        res.holds = true;
        return res;
    }
    // Sufficient check: smallest singular value after deleting the q rows of
    // largest leverage. Conservative; flagged as not exact.
    res.exact = false;
    std::vector<std::pair<double, Index>> lev;
    for (Index r = 0; r < rows; ++r)
        lev.push_back({o.matrix.row(r).norm(), r});
    std::sort(lev.begin(), lev.end(), std::greater<>());
    CMatrix kept(rows - q, cols);
    Index out_r = 0;
    std::vector<bool> drop(static_cast<size_t>(rows), false);
    for (int i = 0; i < q; ++i) drop[static_cast<size_t>(lev[static_cast<size_t>(i)].second)] = true;
    for (Index r = 0; r < rows; ++r)
        if (!drop[static_cast<size_t>(r)]) kept.row(out_r++) = o.matrix.row(r);
    res.holds = numerical_rank(kept, tol) == cols;
    return res;
}

// ---------------------------------------------------------------------------
// Kernel lattice

/// The finite set of possible kernels of the block observability matrix over
/// length-N sequences, closed under intersection, with top C^n (index 0) and
/// bottom {0} (index I). The paper's formal bottom is represented as {0}.
struct KernelLattice {
    const FmoBlock* block = nullptr;
    int seq_length = 1;             // N
    int alphabet_size = 0;
    std::vector<Subspace> elements;             // K_0 .. K_I
    std::vector<std::vector<int>> meet_table;   // index of K_i ∩ K_j
    std::vector<int> psi_table;                 // length-N sequence -> index

    int top() const { return 0; }
    int bottom() const { return static_cast<int>(elements.size()) - 1; }
    int size() const { return static_cast<int>(elements.size()); }

    int locate(const Subspace& s, const Tolerances& tol = {}) const {
        for (size_t i = 0; i < elements.size(); ++i)
            if (subspace_equal(elements[i], s, tol)) return static_cast<int>(i);
        return -1;
    }

    /// Encoding of a length-N index sequence: sum gamma(s) * |A|^s.
    long long encode(const std::vector<int>& gamma) const {
        long long code = 0, mult = 1;
        for (int g : gamma) {
            code += g * mult;
            mult *= alphabet_size;
        }
        return code;
    }

    int psi_index(const std::vector<int>& gamma) const {
        return psi_table[static_cast<size_t>(encode(gamma))];
    }
};

inline KernelLattice build_lattice(const FmoBlock& block,
                                   const MeasurementAlphabet& alphabet,
                                   const Tolerances& tol = {},
                                   long long enumeration_cap = 1000000) {
    KernelLattice lat;
    lat.block = &block;
    lat.seq_length = block.order;
    lat.alphabet_size = alphabet.size();
    const Index dim = block.dim();

    double total = std::pow(static_cast<double>(alphabet.size()),
                            static_cast<double>(block.order));
    if (total > static_cast<double>(enumeration_cap))
        throw Error("build_lattice: |A|^N exceeds enumeration cap; use the "
                    "Monte Carlo strategy");
    const long long count = static_cast<long long>(total + 0.5);

    std::vector<Subspace> elems;
    elems.push_back(Subspace::full(dim));
    auto add_unique = [&](const Subspace& s) {
        for (const auto& e : elems)
            if (subspace_equal(e, s, tol)) return;
        elems.push_back(s);
    };

    lat.psi_table.assign(static_cast<size_t>(count), -1);
    std::vector<Subspace> kernels(static_cast<size_t>(count),
                                  Subspace::trivial(dim));
    std::vector<int> gamma(static_cast<size_t>(block.order));
    for (long long code = 0; code < count; ++code) {
        long long rest = code;
        for (int s = 0; s < block.order; ++s) {
            gamma[static_cast<size_t>(s)] = static_cast<int>(rest % alphabet.size());
            rest /= alphabet.size();
        }
        Subspace ker = nullspace(build_obs(block, alphabet, gamma).matrix, tol);
        kernels[static_cast<size_t>(code)] = ker;
        add_unique(ker);
    }
    add_unique(Subspace::trivial(dim));

    // Close under intersection.
    for (size_t i = 0; i < elems.size(); ++i)
        for (size_t j = i + 1; j < elems.size(); ++j)
            add_unique(intersect(elems[i], elems[j], tol));

    // Notation-2 numbering: strict containment flows toward larger indices;
    // sorting by dimension descending realizes it (top first, bottom last).
    std::stable_sort(elems.begin(), elems.end(),
                     [](const Subspace& a, const Subspace& b) {
                         return a.dim() > b.dim();
                     });
    lat.elements = std::move(elems);

    for (long long code = 0; code < count; ++code) {
        int idx = lat.locate(kernels[static_cast<size_t>(code)], tol);
        if (idx < 0) throw Error("build_lattice: kernel escaped its own lattice");
        lat.psi_table[static_cast<size_t>(code)] = idx;
    }

    const int I1 = lat.size();
    lat.meet_table.assign(static_cast<size_t>(I1), std::vector<int>(static_cast<size_t>(I1), -1));
    for (int i = 0; i < I1; ++i) {
        for (int j = i; j < I1; ++j) {
            Subspace meet = intersect(lat.elements[static_cast<size_t>(i)],
                                      lat.elements[static_cast<size_t>(j)], tol);
            int idx = lat.locate(meet, tol);
            if (idx < 0) throw Error("build_lattice: lattice not closed under meet");
            lat.meet_table[static_cast<size_t>(i)][static_cast<size_t>(j)] = idx;
            lat.meet_table[static_cast<size_t>(j)][static_cast<size_t>(i)] = idx;
        }
    }
    return lat;
}

/// Kernel of O(Gamma · Gamma') from the chunk kernels: ker O(Gamma) ∩
/// A^{-T} ker O(Gamma'). Needs an invertible block.
inline Subspace compose_kernels(const FmoBlock& block, const Subspace& first,
                                const Subspace& second, long long T,
                                const Tolerances& tol = {}) {
    if (second.is_full()) return first;
    Subspace pulled =
        second.is_trivial()
            ? second
            : orthonormalize(block.dim(), CMatrix(block.power(-T) * second.basis()),
                             tol);
    return intersect(first, pulled, tol);
}

}  // namespace kfstab
