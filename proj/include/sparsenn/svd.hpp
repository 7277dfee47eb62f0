#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparsenn/matrix.hpp"

namespace sparsenn {

// Rank-r factorization of W as U * V where U (m x r) holds the leading left
// singular vectors scaled by their singular values and V (r x n) holds the
// leading right singular vectors as rows. UV is the Frobenius-optimal rank-r
// approximation of W.
struct TruncatedSvd {
    Matrix U; // m x r, columns u_k * sigma_k
    Matrix V; // r x n, rows v_k^T
    Vector singular_values; // all min(m,n) values, descending
};

namespace detail {

// One-sided Jacobi on the columns of A (m x n, m >= n is not required but
// convergence is fastest on the tall orientation). Rotations are accumulated
// into R (n x n) so that A_final = A_initial * R; the final columns of A are
// u_k * sigma_k and the columns of R are the right singular vectors.
inline void jacobi_orthogonalize(Matrix& a, Matrix& r, double tol, int max_sweeps) {
    const std::size_t n = a.cols;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < a.rows; ++i) {
                    double x = a(i, p), y = a(i, q);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if (std::fabs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                double zeta = (aqq - app) / (2.0 * apq);
                double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                           (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (std::size_t i = 0; i < a.rows; ++i) {
                    double x = a(i, p), y = a(i, q);
                    a(i, p) = c * x - s * y;
                    a(i, q) = s * x + c * y;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double x = r(i, p), y = r(i, q);
                    r(i, p) = c * x - s * y;
                    r(i, q) = s * x + c * y;
                }
            }
        }
        if (!rotated) return;
    }
    throw Error("truncated_svd: Jacobi iteration did not converge");
}

} // namespace detail

inline TruncatedSvd truncated_svd(const Matrix& w, std::size_t rank, double tol = 1e-12,
                                  int max_sweeps = 60) {
    const std::size_t m = w.rows, n = w.cols;
    if (m == 0 || n == 0) throw ShapeError("truncated_svd: empty matrix");
    if (rank < 1 || rank >= std::min(m, n)) {
        throw ShapeError("truncated_svd: rank " + std::to_string(rank) +
                         " must be in [1, min(m,n)) for " + std::to_string(m) + "x" +
                         std::to_string(n));
    }

    // Work on the orientation with fewer columns.
    const bool transposed = m < n;
    Matrix a = w;
    if (transposed) {
        a = Matrix(n, m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) a(j, i) = w(i, j);
    }
    const std::size_t k = a.cols; // == min(m,n)

    Matrix rot(k, k);
    for (std::size_t i = 0; i < k; ++i) rot(i, i) = 1.0;
    detail::jacobi_orthogonalize(a, rot, tol, max_sweeps);

    Vector sigma(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) s += a(i, j) * a(i, j);
        sigma[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    // Left factor of the (possibly transposed) problem: columns u_j * sigma_j
    // are exactly the post-rotation columns of a. Right factor: columns of rot.
    TruncatedSvd out;
    out.singular_values.resize(k);
    for (std::size_t j = 0; j < k; ++j) out.singular_values[j] = sigma[order[j]];

    if (!transposed) {
        out.U = Matrix(m, rank);
        out.V = Matrix(rank, n);
        for (std::size_t j = 0; j < rank; ++j) {
            std::size_t c = order[j];
            for (std::size_t i = 0; i < m; ++i) out.U(i, j) = a(i, c);
            for (std::size_t i = 0; i < n; ++i) out.V(j, i) = rot(i, c);
        }
    } else {
        // w^T = a_cols * rot^T, so w = rot_scaled * a_normalized^T. Keep the
        // sigma scale on U to preserve z = U (V x) magnitudes.
        out.U = Matrix(m, rank);
        out.V = Matrix(rank, n);
        for (std::size_t j = 0; j < rank; ++j) {
            std::size_t c = order[j];
            double s = sigma[c];
            double inv = s > 0.0 ? 1.0 / s : 0.0;
            for (std::size_t i = 0; i < m; ++i) out.U(i, j) = rot(i, c) * s;
            for (std::size_t i = 0; i < n; ++i) out.V(j, i) = a(i, c) * inv;
        }
    }
    return out;
}

} // namespace sparsenn
