#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sparsenn/rng.hpp"
#include "sparsenn/svd.hpp"

using namespace sparsenn;

namespace {

Matrix random_matrix(std::size_t m, std::size_t n, Rng& rng, double scale = 1.0) {
    Matrix a(m, n);
    for (double& v : a.data) v = rng.uniform(-scale, scale);
    return a;
}

double reconstruction_error(const Matrix& w, const Matrix& u, const Matrix& v) {
    Matrix approx = matmul(u, v);
    double s = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        double d = w.data[i] - approx.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Eigenvalues of a symmetric 3x3 via the trigonometric solution of the
// characteristic cubic; used to cross-check singular values independently.
std::array<double, 3> sym3_eigenvalues(const Matrix& a) {
    double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    double q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
    double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
                (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
    double p = std::sqrt(p2 / 6.0);
    Matrix b(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) b(i, j) = (a(i, j) - (i == j ? q : 0.0)) / p;
    double detb = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
                  b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
                  b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    double r = std::clamp(detb / 2.0, -1.0, 1.0);
    double phi = std::acos(r) / 3.0;
    double e1 = q + 2.0 * p * std::cos(phi);
    double e3 = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
    double e2 = 3.0 * q - e1 - e3;
    return {e1, e2, e3};
}

} // namespace

TEST_CASE("rank-1 matrix is reconstructed exactly at r=1") {
    Rng rng(21);
    Vector u(6), v(9);
    for (double& x : u) x = rng.uniform(-1.0, 1.0);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    Matrix w(6, 9);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 9; ++j) w(i, j) = u[i] * v[j];
    TruncatedSvd f = truncated_svd(w, 1);
    CHECK(reconstruction_error(w, f.U, f.V) < 1e-8);
}

TEST_CASE("residual at r = min(m,n)-1 equals the smallest singular value") {
    Rng rng(22);
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{7, 5}, {5, 7}, {6, 6}}) {
        Matrix w = random_matrix(m, n, rng);
        std::size_t r = std::min(m, n) - 1;
        TruncatedSvd f = truncated_svd(w, r);
        double err = reconstruction_error(w, f.U, f.V);
        CHECK(std::fabs(err - f.singular_values.back()) < 1e-8);
    }
}

TEST_CASE("factor orthogonality: U^T U diagonal, V V^T identity") {
    Rng rng(23);
    Matrix w = random_matrix(8, 6, rng);
    TruncatedSvd f = truncated_svd(w, 3);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            double uu = 0.0, vv = 0.0;
            for (std::size_t i = 0; i < 8; ++i) uu += f.U(i, a) * f.U(i, b);
            for (std::size_t j = 0; j < 6; ++j) vv += f.V(a, j) * f.V(b, j);
            if (a == b) {
                CHECK(std::fabs(uu - f.singular_values[a] * f.singular_values[a]) < 1e-8);
                CHECK(std::fabs(vv - 1.0) < 1e-8);
            } else {
                CHECK(std::fabs(uu) < 1e-8);
                CHECK(std::fabs(vv) < 1e-8);
            }
        }
    }
}

TEST_CASE("reconstruction error is non-increasing in the rank") {
    Rng rng(24);
    Matrix w = random_matrix(10, 8, rng);
    double prev = 1e300;
    for (std::size_t r = 1; r < 8; ++r) {
        TruncatedSvd f = truncated_svd(w, r);
        double err = reconstruction_error(w, f.U, f.V);
        CHECK(err <= prev + 1e-12);
        prev = err;
    }
}

TEST_CASE("singular values match characteristic-polynomial roots on 3x3") {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix w = random_matrix(3, 3, rng);
        Matrix wtw(3, 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 3; ++k) s += w(k, i) * w(k, j);
                wtw(i, j) = s;
            }
        auto eig = sym3_eigenvalues(wtw);
        TruncatedSvd f = truncated_svd(w, 2);
        for (int k = 0; k < 3; ++k) {
            CHECK(std::fabs(f.singular_values[static_cast<std::size_t>(k)] -
                            std::sqrt(std::max(0.0, eig[static_cast<std::size_t>(k)]))) < 1e-8);
        }
    }
}

TEST_CASE("rank bounds are enforced") {
    Rng rng(26);
    Matrix w = random_matrix(5, 4, rng);
    CHECK_THROWS_AS(truncated_svd(w, 0), ShapeError);
    CHECK_THROWS_AS(truncated_svd(w, 4), ShapeError);
}
