#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sparsenn/errors.hpp"

namespace sparsenn {

using Vector = std::vector<double>;

// Dense row-major real matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double* row(std::size_t i) { return data.data() + i * cols; }

    bool empty() const { return data.empty(); }
};

inline void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
    if (m.rows != rows || m.cols != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                         std::to_string(m.cols));
    }
}

inline void check_finite(const Vector& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(std::string(what) + ": non-finite value");
    }
}

// y = M x
inline Vector matvec(const Matrix& m, const Vector& x) {
    if (x.size() != m.cols) {
        throw ShapeError("matvec: vector length " + std::to_string(x.size()) +
                         " does not match matrix cols " + std::to_string(m.cols));
    }
    Vector y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) acc += r[j] * x[j];
        y[i] = acc;
    }
    return y;
}

// y = M^T x
inline Vector matvec_t(const Matrix& m, const Vector& x) {
    if (x.size() != m.rows) {
        throw ShapeError("matvec_t: vector length " + std::to_string(x.size()) +
                         " does not match matrix rows " + std::to_string(m.rows));
    }
    Vector y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += r[j] * xi;
    }
    return y;
}

// M += scale * a b^T
inline void add_outer(Matrix& m, const Vector& a, const Vector& b, double scale = 1.0) {
    if (a.size() != m.rows || b.size() != m.cols) {
        throw ShapeError("add_outer: shape mismatch");
    }
    for (std::size_t i = 0; i < m.rows; ++i) {
        double ai = a[i] * scale;
        if (ai == 0.0) continue;
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) r[j] += ai * b[j];
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

} // namespace sparsenn
