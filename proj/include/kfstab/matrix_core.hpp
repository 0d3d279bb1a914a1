#pragma once

// Dense complex linear algebra primitives shared by every other module:
// rank/nullspace with relative tolerances, orthonormal subspace algebra,
// spectral radius, Kronecker products and Jordan-block power utilities.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <complex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kfstab {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;
using Index   = Eigen::Index;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical policy knobs. One instance is threaded through the whole
/// pipeline so that every rank decision uses the same cutoff.
struct Tolerances {
    double tol_rank = 1e-9;    // relative singular-value cutoff
    double tol_orth = 1e-10;   // orthonormality tolerance for Subspace bases
    double tol_angle = 1e-9;   // root-of-unity detection tolerance
    int n_max_order = 64;      // max multiplicative order searched
    double eps_margin = 1e-6;  // half-width of the inconclusive verdict band

    void check() const {
        if (tol_rank <= 0 || tol_orth <= 0 || tol_angle <= 0 || eps_margin <= 0)
            throw Error("Tolerances: all tolerances must be strictly positive");
        if (n_max_order < 1) throw Error("Tolerances: n_max_order >= 1 required");
    }
};

inline void require_finite(const CMatrix& m, const char* what) {
    if (!m.allFinite()) throw Error(std::string(what) + ": non-finite entries");
}

/// A linear subspace of C^ambient_dim held as an orthonormal column basis.
/// Zero columns means the trivial subspace {0}.
class Subspace {
public:
    Subspace() = default;

    Subspace(Index ambient_dim, CMatrix basis, double tol_orth = 1e-10)
        : ambient_(ambient_dim), basis_(std::move(basis)) {
        if (basis_.rows() != ambient_)
            throw Error("Subspace: basis rows != ambient_dim");
        if (basis_.cols() > ambient_)
            throw Error("Subspace: dim > ambient_dim");
        require_finite(basis_, "Subspace basis");
        if (basis_.cols() > 0) {
            CMatrix gram = basis_.adjoint() * basis_;
            gram -= CMatrix::Identity(basis_.cols(), basis_.cols());
            if (gram.cwiseAbs().maxCoeff() > 10 * tol_orth)
                throw Error("Subspace: basis not orthonormal");
        }
    }

    static Subspace full(Index ambient_dim) {
        return Subspace(ambient_dim, CMatrix::Identity(ambient_dim, ambient_dim));
    }
    static Subspace trivial(Index ambient_dim) {
        return Subspace(ambient_dim, CMatrix(ambient_dim, 0));
    }

    Index ambient_dim() const { return ambient_; }
    Index dim() const { return basis_.cols(); }
    const CMatrix& basis() const { return basis_; }
    bool is_trivial() const { return basis_.cols() == 0; }
    bool is_full() const { return basis_.cols() == ambient_; }

    /// Orthogonal projector onto the subspace. Basis-independent, which makes
    /// it usable as a canonical fingerprint.
    CMatrix projector() const {
        if (basis_.cols() == 0) return CMatrix::Zero(ambient_, ambient_);
        return basis_ * basis_.adjoint();
    }

private:
    Index ambient_ = 0;
    CMatrix basis_;
};

/// Orthonormalize the columns of m, dropping directions below the relative
/// rank cutoff. Used to re-canonicalize images of subspaces under maps.
inline Subspace orthonormalize(Index ambient_dim, const CMatrix& m,
                               const Tolerances& tol = {}) {
    if (m.cols() == 0) return Subspace::trivial(ambient_dim);
    Eigen::JacobiSVD<CMatrix> svd(m, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    double cutoff = tol.tol_rank * (sv.size() > 0 ? sv(0) : 0.0);
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++rank;
    return Subspace(ambient_dim, svd.matrixU().leftCols(rank), tol.tol_orth);
}

/// Numerical rank via singular values with relative cutoff.
inline Index numerical_rank(const CMatrix& m, const Tolerances& tol = {}) {
    if (m.rows() == 0 || m.cols() == 0) return 0;
    Eigen::JacobiSVD<CMatrix> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0;
    double cutoff = tol.tol_rank * sv(0);
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++rank;
    return rank;
}

/// Orthonormal basis of {x : m x = 0}. Rows are normalized to unit Euclidean
/// norm first (zero rows dropped); the exact kernel is unchanged but the
/// conditioning is tamed when rows carry |alpha|^T growth factors.
inline Subspace nullspace(const CMatrix& m, const Tolerances& tol = {}) {
    if (m.rows() == 0 || m.cols() == 0)
        throw Error("nullspace: empty matrix");
    std::vector<Index> keep;
    keep.reserve(m.rows());
    for (Index r = 0; r < m.rows(); ++r)
        if (m.row(r).norm() > 0) keep.push_back(r);
    if (keep.empty()) return Subspace::full(m.cols());

    CMatrix scaled(static_cast<Index>(keep.size()), m.cols());
    for (Index r = 0; r < scaled.rows(); ++r)
        scaled.row(r) = m.row(keep[static_cast<size_t>(r)]) /
                        m.row(keep[static_cast<size_t>(r)]).norm();

    Eigen::JacobiSVD<CMatrix> svd(scaled, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    double cutoff = tol.tol_rank * (sv.size() > 0 ? sv(0) : 0.0);
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++rank;
    Index kdim = m.cols() - rank;
    return Subspace(m.cols(), svd.matrixV().rightCols(kdim), tol.tol_orth);
}

/// Intersection a ∩ b as the nullspace of the stacked orthogonal-complement
/// projectors.
inline Subspace intersect(const Subspace& a, const Subspace& b,
                          const Tolerances& tol = {}) {
    if (a.ambient_dim() != b.ambient_dim())
        throw Error("intersect: ambient dimension mismatch");
    const Index n = a.ambient_dim();
    if (a.is_trivial() || b.is_trivial()) return Subspace::trivial(n);
    if (a.is_full()) return b;
    if (b.is_full()) return a;
    CMatrix stacked(2 * n, n);
    stacked.topRows(n) = CMatrix::Identity(n, n) - a.projector();
    stacked.bottomRows(n) = CMatrix::Identity(n, n) - b.projector();
    return nullspace(stacked, tol);
}

/// Equality up to principal angles below a tolerance derived from tol_orth.
/// Bases are non-unique, so comparing them directly would be wrong.
inline bool subspace_equal(const Subspace& a, const Subspace& b,
                           const Tolerances& tol = {}) {
    if (a.ambient_dim() != b.ambient_dim())
        throw Error("subspace_equal: ambient dimension mismatch");
    if (a.dim() != b.dim()) return false;
    if (a.dim() == 0) return true;
    // Principal-angle cosines are the singular values of A* B.
    Eigen::JacobiSVD<CMatrix> svd(CMatrix(a.basis().adjoint() * b.basis()));
    double angular_tol = 1e4 * tol.tol_orth;  // derived: well above basis noise
    return svd.singularValues().minCoeff() >= 1.0 - angular_tol;
}

inline bool subspace_contains(const Subspace& outer, const Subspace& inner,
                              const Tolerances& tol = {}) {
    if (inner.dim() > outer.dim()) return false;
    if (inner.dim() == 0) return true;
    if (outer.is_full()) return true;
    // ||(I - P_outer) B_inner|| small per column.
    CMatrix residual = inner.basis() - outer.projector() * inner.basis();
    return residual.colwise().norm().maxCoeff() <= 1e4 * tol.tol_orth;
}

/// Largest eigenvalue modulus. Dense solver up to 512, power iteration with a
/// crude deflation fallback beyond that.
inline double spectral_radius(const CMatrix& m) {
    if (m.rows() != m.cols()) throw Error("spectral_radius: non-square matrix");
    if (m.rows() == 0) return 0.0;
    require_finite(m, "spectral_radius");
    if (m.rows() <= 512) {
        Eigen::ComplexEigenSolver<CMatrix> es(m, /*computeEigenvectors=*/false);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    }
    // Power iteration; deterministic start.
    CVector v = CVector::Ones(m.rows()).normalized();
    double lambda = 0.0;
    for (int it = 0; it < 10000; ++it) {
        CVector w = m * v;
        double nw = w.norm();
        if (nw == 0.0) return 0.0;
        w /= nw;
        double next = std::abs(Complex(w.adjoint() * (m * w)));
        if (std::abs(next - lambda) <= 1e-12 * std::max(1.0, next) && it > 10)
            return next;
        lambda = next;
        v = w;
    }
    return lambda;
}

inline double spectral_radius(const RMatrix& m) {
    return spectral_radius(CMatrix(m.cast<Complex>()));
}

/// Single Jordan block J_J(alpha).
inline CMatrix jordan_block(Complex alpha, Index J) {
    CMatrix m = CMatrix::Zero(J, J);
    for (Index i = 0; i < J; ++i) m(i, i) = alpha;
    for (Index i = 0; i + 1 < J; ++i) m(i, i + 1) = 1.0;
    return m;
}

/// J_J(alpha)^t by the closed-form binomial entries. Supports negative t for
/// invertible blocks (generalized binomial coefficients).
inline CMatrix jordan_block_power(Complex alpha, Index J, long long t) {
    if (t < 0 && alpha == Complex(0.0, 0.0))
        throw Error("jordan_block_power: negative power of nilpotent block");
    CMatrix m = CMatrix::Zero(J, J);
    for (Index j = 0; j < J; ++j) {
        // binom(t, j), valid for any integer t.
        double binom = 1.0;
        for (Index i = 0; i < j; ++i)
            binom *= static_cast<double>(t - i) / static_cast<double>(i + 1);
        Complex coeff;
        if (alpha == Complex(0.0, 0.0)) {
            // 0^(t-j): only the t == j superdiagonal survives.
            coeff = (t == j) ? Complex(1.0, 0.0) : Complex(0.0, 0.0);
            binom = 1.0;
        } else {
            coeff = std::pow(alpha, static_cast<double>(t - j));
        }
        if (t >= 0 && j > t) coeff = 0.0;  // binom(t, j) = 0 for 0 <= t < j
        for (Index i = 0; i + j < J; ++i) m(i, i + j) = binom * coeff;
    }
    return m;
}

/// ||A^t|| for the Jordan block A = J_J(alpha), with the polynomial-envelope
/// bounds |alpha|^t c1 t^(J-1) (upper) and |alpha|^t c2 t^(1-J) (lower on
/// ||A^-t||^-1). The constants are fitted by sweeping t <= t_max.
struct PowerNormBounds {
    double norm;
    double upper;
    double lower;
    double c1;
    double c2;
};

inline PowerNormBounds matrix_power_norm(Complex alpha, Index J, long long t,
                                         long long t_max = 100) {
    if (alpha == Complex(0.0, 0.0)) throw Error("matrix_power_norm: alpha = 0");
    if (J < 1 || t < 1) throw Error("matrix_power_norm: J >= 1 and t >= 1 required");
    t_max = std::max(t_max, t);
    double c1 = 0.0, c2 = std::numeric_limits<double>::infinity();
    auto op_norm = [](const CMatrix& m) {
        Eigen::JacobiSVD<CMatrix> svd(m);
        return svd.singularValues()(0);
    };
    for (long long s = 1; s <= t_max; ++s) {
        double abs_as = std::pow(std::abs(alpha), static_cast<double>(s));
        double fwd = op_norm(jordan_block_power(alpha, J, s));
        double inv = 1.0 / op_norm(jordan_block_power(alpha, J, -s));
        c1 = std::max(c1, fwd / (abs_as * std::pow(static_cast<double>(s), J - 1)));
        c2 = std::min(c2, inv / (abs_as * std::pow(static_cast<double>(s), 1 - J)));
    }
    double abs_at = std::pow(std::abs(alpha), static_cast<double>(t));
    PowerNormBounds out;
    out.norm = op_norm(jordan_block_power(alpha, J, t));
    out.upper = abs_at * c1 * std::pow(static_cast<double>(t), J - 1);
    out.lower = abs_at * c2 * std::pow(static_cast<double>(t), 1 - J);
    out.c1 = c1;
    out.c2 = c2;
    return out;
}

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline RMatrix kron(const RMatrix& a, const RMatrix& b) {
    RMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline bool is_hermitian_psd(const CMatrix& m, double tol = 1e-10) {
    if (m.rows() != m.cols()) return false;
    if (m.rows() == 0) return true;
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.adjoint()).cwiseAbs().maxCoeff() > tol * scale) return false;
    Eigen::SelfAdjointEigenSolver<CMatrix> es(CMatrix((m + m.adjoint()) / 2.0),
                                              Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol * scale;
}

}  // namespace kfstab
