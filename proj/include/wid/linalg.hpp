#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "wid/common.hpp"

namespace wid {

// Row-major dense matrix of doubles.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {
        if (r < 1 || c < 1) throw DimensionError("Mat: dimensions must be >= 1");
    }

    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }
    double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
};

inline Mat matmul(const Mat& A, const Mat& B) {
    if (A.cols != B.rows) throw DimensionError("matmul: inner dimensions differ");
    Mat C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const double v = arow[k];
            if (v == 0.0) continue;
            const double* brow = B.row(k);
            for (int j = 0; j < B.cols; ++j) crow[j] += v * brow[j];
        }
    }
    return C;
}

inline Mat transpose(const Mat& A) {
    Mat T(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) T.at(j, i) = A.at(i, j);
    return T;
}

inline double frobenius_norm(const Mat& A) {
    double acc = 0.0;
    for (double v : A.a) acc += v * v;
    return std::sqrt(acc);
}

inline std::vector<double> column_means(const Mat& A) {
    std::vector<double> m(static_cast<std::size_t>(A.cols), 0.0);
    for (int i = 0; i < A.rows; ++i) {
        const double* row = A.row(i);
        for (int j = 0; j < A.cols; ++j) m[static_cast<std::size_t>(j)] += row[j];
    }
    for (double& v : m) v /= static_cast<double>(A.rows);
    return m;
}

inline void subtract_row_vector(Mat& A, const std::vector<double>& m) {
    if (m.size() != static_cast<std::size_t>(A.cols))
        throw DimensionError("subtract_row_vector: length mismatch");
    for (int i = 0; i < A.rows; ++i) {
        double* row = A.row(i);
        for (int j = 0; j < A.cols; ++j) row[j] -= m[static_cast<std::size_t>(j)];
    }
}

// Thin SVD A = U diag(sigma) V^T via one-sided (Hestenes) Jacobi rotations on
// the columns of A. Returns singular values in descending order; columns of U
// belonging to zero singular values are left as zeros.
struct SvdResult {
    Mat u;                     // rows x min-dim usable columns (full cols of A)
    std::vector<double> sigma; // length = cols of A
    Mat v;                     // cols x cols, right singular vectors as columns
};

inline SvdResult jacobi_svd(Mat a, int max_sweeps = 64, double tol = 1e-15) {
    const int n = a.rows, m = a.cols;
    Mat v(m, m);
    for (int j = 0; j < m; ++j) v.at(j, j) = 1.0;

    // column-major copy for contiguous column access
    std::vector<double> col(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) col[static_cast<std::size_t>(j) * n + i] = a.at(i, j);

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < m - 1; ++p) {
            for (int q = p + 1; q < m; ++q) {
                double* cp = col.data() + static_cast<std::size_t>(p) * n;
                double* cq = col.data() + static_cast<std::size_t>(q) * n;
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < n; ++i) {
                    app += cp[i] * cp[i];
                    aqq += cq[i] * cq[i];
                    apq += cp[i] * cq[i];
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < n; ++i) {
                    const double xp = cp[i], xq = cq[i];
                    cp[i] = c * xp - s * xq;
                    cq[i] = s * xp + c * xq;
                }
                for (int i = 0; i < m; ++i) {
                    const double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = c * vp - s * vq;
                    v.at(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sigma(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        double norm = 0.0;
        const double* cj = col.data() + static_cast<std::size_t>(j) * n;
        for (int i = 0; i < n; ++i) norm += cj[i] * cj[i];
        sigma[static_cast<std::size_t>(j)] = std::sqrt(norm);
    }

    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)];
    });

    SvdResult out;
    out.u = Mat(n, m);
    out.v = Mat(m, m);
    out.sigma.resize(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        const int src = order[static_cast<std::size_t>(j)];
        const double s = sigma[static_cast<std::size_t>(src)];
        out.sigma[static_cast<std::size_t>(j)] = s;
        const double* cj = col.data() + static_cast<std::size_t>(src) * n;
        if (s > 0.0)
            for (int i = 0; i < n; ++i) out.u.at(i, j) = cj[i] / s;
        for (int i = 0; i < m; ++i) out.v.at(i, j) = v.at(i, src);
    }
    return out;
}

} // namespace wid
