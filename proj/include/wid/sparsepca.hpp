#pragma once

#include <cassert>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wid/common.hpp"
#include "wid/linalg.hpp"

namespace wid {

// Fragment embeddings stacked row-wise.
struct DataMatrix {
    Mat values;
    bool centered = false;

    void validate() const {
        if (values.rows < 2) throw DimensionError("DataMatrix: need at least 2 rows");
        for (double v : values.a)
            if (!std::isfinite(v)) throw ParameterError("DataMatrix: non-finite entry");
    }
};

// Sparse loading matrix with the fit metadata needed at projection time.
struct SparseBasis {
    Mat loadings;                    // D x L, unit-norm columns
    double lambda = 0.0;             // ridge penalty
    double lambda1 = 0.0;            // l1 penalty
    std::vector<double> means;       // training column means, applied before projection
    std::vector<double> sparsity;    // per-column fraction of exact zeros
    std::vector<int> dropped;        // degenerate component indices that were removed
    std::vector<double> singular_values;

    int components() const { return loadings.cols; }
};

struct CoefficientMatrix {
    Mat alpha;                   // N x L
    std::vector<int> writer_ids; // per-row labels, filled by the caller
};

struct PrincipalTargets {
    Mat z;                        // N x L, Z = X V
    Mat v;                        // D x L
    std::vector<double> singular; // length L
};

// SVD targets for the regression formulation: X = U D V^T, Z = XV.
inline PrincipalTargets svd_principal_targets(const Mat& x_centered, int L) {
    if (L < 1 || L > std::min(x_centered.rows, x_centered.cols))
        throw ParameterError("svd_principal_targets: L out of range");
    const SvdResult svd = jacobi_svd(x_centered);
    PrincipalTargets out;
    out.v = Mat(x_centered.cols, L);
    out.singular.assign(svd.sigma.begin(), svd.sigma.begin() + L);
    for (int i = 0; i < x_centered.cols; ++i)
        for (int j = 0; j < L; ++j) out.v.at(i, j) = svd.v.at(i, j);
    out.z = matmul(x_centered, out.v);
    return out;
}

struct ElasticNetOptions {
    double tol = 1e-8;
    int max_sweeps = 10000;
    bool track_objective = false;
};

struct ElasticNetFit {
    std::vector<double> beta;
    int sweeps = 0;
    std::vector<double> objective; // per sweep when tracked
};

// Gram-form cyclic coordinate descent with soft thresholding. Maintains
// q = X^T (z - X b), so every coordinate update costs O(D) instead of O(N);
// the Gram matrix can be shared across targets and penalty candidates.
inline ElasticNetFit fit_sparse_loading_gram(const Mat& gram, const std::vector<double>& xtz,
                                             double znorm2, double lambda, double lambda1,
                                             const ElasticNetOptions& opt = {}) {
    if (lambda < 0.0 || lambda1 < 0.0)
        throw ParameterError("fit_sparse_loading: penalties must be >= 0");
    const int d = gram.rows;
    if (gram.cols != d || xtz.size() != static_cast<std::size_t>(d))
        throw DimensionError("fit_sparse_loading: Gram system shape mismatch");

    std::vector<double> beta(static_cast<std::size_t>(d), 0.0);
    std::vector<double> q(xtz); // q_j = x_j^T (z - X b)
    const double thresh = lambda1 / 2.0;

    ElasticNetFit fit;
    auto objective = [&]() {
        // ||z - X b||^2 = znorm2 - 2 b.xtz + b^T G b, assembled on demand
        double lin = 0.0, quad = 0.0, l2 = 0.0, l1 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double bj = beta[static_cast<std::size_t>(j)];
            if (bj == 0.0) continue;
            lin += bj * xtz[static_cast<std::size_t>(j)];
            const double* grow = gram.row(j);
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += grow[k] * beta[static_cast<std::size_t>(k)];
            quad += bj * acc;
            l2 += bj * bj;
            l1 += std::abs(bj);
        }
        return znorm2 - 2.0 * lin + quad + lambda * l2 + lambda1 * l1;
    };

    double prev_obj = opt.track_objective ? objective() : 0.0;
    for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (int j = 0; j < d; ++j) {
            const double diag = gram.at(j, j);
            const double denom = diag + lambda;
            if (denom <= 0.0) continue;
            const double rho = q[static_cast<std::size_t>(j)] + diag * beta[static_cast<std::size_t>(j)];
            double next = 0.0;
            if (rho > thresh)
                next = (rho - thresh) / denom;
            else if (rho < -thresh)
                next = (rho + thresh) / denom;
            const double delta = next - beta[static_cast<std::size_t>(j)];
            if (delta != 0.0) {
                const double* grow = gram.row(j);
                for (int k = 0; k < d; ++k) q[static_cast<std::size_t>(k)] -= delta * grow[k];
                beta[static_cast<std::size_t>(j)] = next;
            }
            max_change = std::max(max_change, std::abs(delta));
        }
        fit.sweeps = sweep + 1;
        if (opt.track_objective) {
            const double obj = objective();
            assert(obj <= prev_obj + 1e-9 * std::max(1.0, std::abs(prev_obj)));
            fit.objective.push_back(obj);
            prev_obj = obj;
        }
        if (max_change < opt.tol) {
            fit.beta = std::move(beta);
            return fit;
        }
    }

    double lin = 0.0, quad = 0.0;
    for (int j = 0; j < d; ++j) {
        const double bj = beta[static_cast<std::size_t>(j)];
        if (bj == 0.0) continue;
        lin += bj * xtz[static_cast<std::size_t>(j)];
        const double* grow = gram.row(j);
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += grow[k] * beta[static_cast<std::size_t>(k)];
        quad += bj * acc;
    }
    const double resid2 = std::max(0.0, znorm2 - 2.0 * lin + quad);
    throw ConvergenceError("fit_sparse_loading: sweep cap reached", beta, std::sqrt(resid2));
}

// min_b ||z - X b||^2 + lambda ||b||^2 + lambda1 ||b||_1. Throws
// ConvergenceError (carrying the last iterate and residual norm) when the
// sweep cap is hit.
inline ElasticNetFit fit_sparse_loading(const Mat& x, const std::vector<double>& z, double lambda,
                                        double lambda1, const ElasticNetOptions& opt = {}) {
    if (z.size() != static_cast<std::size_t>(x.rows))
        throw DimensionError("fit_sparse_loading: target length mismatch");
    const Mat gram = matmul(transpose(x), x);
    std::vector<double> xtz(static_cast<std::size_t>(x.cols), 0.0);
    double znorm2 = 0.0;
    for (int i = 0; i < x.rows; ++i) {
        const double zi = z[static_cast<std::size_t>(i)];
        znorm2 += zi * zi;
        const double* row = x.row(i);
        for (int j = 0; j < x.cols; ++j) xtz[static_cast<std::size_t>(j)] += row[j] * zi;
    }
    return fit_sparse_loading_gram(gram, xtz, znorm2, lambda, lambda1, opt);
}

// V_i = beta / ||beta||; the zero pattern survives the scaling.
inline std::vector<double> normalize_loading(const std::vector<double>& beta) {
    double norm = 0.0;
    for (double b : beta) norm += b * b;
    norm = std::sqrt(norm);
    if (norm == 0.0)
        throw DegenerateComponentError("normalize_loading: all-zero loading");
    std::vector<double> out(beta);
    for (double& v : out) v /= norm;
    return out;
}

namespace spca_detail {

inline void gram_system(const Mat& x, const Mat& z_targets, int component,
                        std::vector<double>& xtz, double& znorm2) {
    xtz.assign(static_cast<std::size_t>(x.cols), 0.0);
    znorm2 = 0.0;
    for (int i = 0; i < x.rows; ++i) {
        const double zi = z_targets.at(i, component);
        znorm2 += zi * zi;
        const double* row = x.row(i);
        for (int j = 0; j < x.cols; ++j) xtz[static_cast<std::size_t>(j)] += row[j] * zi;
    }
}

} // namespace spca_detail

// Fit all L components against fixed SVD targets. Components that degenerate
// to zero or fail to converge are dropped and recorded; more than L/2 of them
// is a fit error. Columns are sign-canonicalized (first nonzero entry
// positive) and unit norm.
inline SparseBasis fit_basis(const DataMatrix& data, int L, double lambda, double lambda1,
                             const ElasticNetOptions& opt = {}, unsigned workers = 1) {
    data.validate();
    Mat x = data.values;
    SparseBasis basis;
    basis.lambda = lambda;
    basis.lambda1 = lambda1;
    if (data.centered) {
        basis.means.assign(static_cast<std::size_t>(x.cols), 0.0);
    } else {
        basis.means = column_means(x);
        subtract_row_vector(x, basis.means);
    }

    const PrincipalTargets targets = svd_principal_targets(x, L);
    basis.singular_values = targets.singular;
    const Mat gram = matmul(transpose(x), x);

    std::vector<std::optional<std::vector<double>>> columns(static_cast<std::size_t>(L));
    parallel_for(static_cast<std::size_t>(L), workers, [&](std::size_t i) {
        std::vector<double> xtz;
        double znorm2 = 0.0;
        spca_detail::gram_system(x, targets.z, static_cast<int>(i), xtz, znorm2);
        try {
            const ElasticNetFit fit =
                fit_sparse_loading_gram(gram, xtz, znorm2, lambda, lambda1, opt);
            columns[i] = normalize_loading(fit.beta);
        } catch (const DegenerateComponentError&) {
            columns[i] = std::nullopt;
        } catch (const ConvergenceError&) {
            columns[i] = std::nullopt;
        }
    });

    std::vector<std::vector<double>> kept;
    for (int i = 0; i < L; ++i) {
        if (!columns[static_cast<std::size_t>(i)]) {
            basis.dropped.push_back(i);
            continue;
        }
        std::vector<double> v = std::move(*columns[static_cast<std::size_t>(i)]);
        // sign convention: first non-negligible entry positive (entries below
        // 1e-12 of the peak are treated as zero so FP dust cannot flip signs)
        double peak = 0.0;
        for (double e : v) peak = std::max(peak, std::abs(e));
        for (double e : v) {
            if (std::abs(e) > 1e-12 * peak) {
                if (e < 0.0)
                    for (double& q : v) q = -q;
                break;
            }
        }
        int zeros = 0;
        for (double e : v) zeros += e == 0.0 ? 1 : 0;
        basis.sparsity.push_back(static_cast<double>(zeros) / static_cast<double>(v.size()));
        kept.push_back(std::move(v));
    }
    if (static_cast<int>(basis.dropped.size()) * 2 > L)
        throw FitError("fit_basis: more than half of the components degenerated");
    if (kept.empty()) throw FitError("fit_basis: no usable components");

    basis.loadings = Mat(x.cols, static_cast<int>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j)
        for (int i = 0; i < x.cols; ++i) basis.loadings.at(i, static_cast<int>(j)) = kept[j][static_cast<std::size_t>(i)];
    return basis;
}

// alpha = (X - means) V
inline Mat project(const Mat& x, const SparseBasis& basis) {
    if (x.cols != basis.loadings.rows)
        throw DimensionError("project: feature dimension does not match basis");
    Mat centered = x;
    subtract_row_vector(centered, basis.means);
    return matmul(centered, basis.loadings);
}

// 5-point grid on lambda1, scored on a held-out reconstruction criterion.
// Prefers candidates whose mean column sparsity lands in [0.5, 0.9]; among
// those the smallest held-out error wins, otherwise closest to the band.
struct Lambda1Choice {
    double lambda1 = 0.0;
    double sparsity = 0.0;
    double holdout_error = 0.0;
    std::vector<double> grid;
};

inline Lambda1Choice choose_lambda1(const DataMatrix& data, int L, double lambda,
                                    unsigned workers = 1) {
    data.validate();
    Mat x = data.values;
    std::vector<double> means;
    if (!data.centered) {
        means = column_means(x);
        subtract_row_vector(x, means);
    }

    // deterministic 4:1 split by row index
    std::vector<int> fit_rows, hold_rows;
    for (int i = 0; i < x.rows; ++i) (i % 5 == 4 ? hold_rows : fit_rows).push_back(i);
    if (fit_rows.size() < 2 || hold_rows.empty())
        throw ParameterError("choose_lambda1: not enough rows to split");
    Mat xf(static_cast<int>(fit_rows.size()), x.cols);
    Mat xh(static_cast<int>(hold_rows.size()), x.cols);
    for (std::size_t i = 0; i < fit_rows.size(); ++i)
        std::copy_n(x.row(fit_rows[i]), x.cols, xf.row(static_cast<int>(i)));
    for (std::size_t i = 0; i < hold_rows.size(); ++i)
        std::copy_n(x.row(hold_rows[i]), x.cols, xh.row(static_cast<int>(i)));

    // Anchor the grid at the median component's zeroing level rather than the
    // top one: the spectrum usually decays fast and a single lambda1 sized
    // against component 0 would wipe out most of the tail.
    const int Lf = std::min(L, std::min(xf.rows, xf.cols));
    const PrincipalTargets targets = svd_principal_targets(xf, Lf);
    std::vector<double> lmax_per_component(static_cast<std::size_t>(Lf), 0.0);
    for (int k = 0; k < Lf; ++k) {
        double lmax = 0.0;
        for (int j = 0; j < xf.cols; ++j) {
            double dot = 0.0;
            for (int i = 0; i < xf.rows; ++i) dot += xf.at(i, j) * targets.z.at(i, k);
            lmax = std::max(lmax, std::abs(dot));
        }
        lmax_per_component[static_cast<std::size_t>(k)] = 2.0 * lmax;
    }
    std::vector<double> sorted_lmax = lmax_per_component;
    std::sort(sorted_lmax.begin(), sorted_lmax.end());
    const double anchor = sorted_lmax[sorted_lmax.size() / 2];

    Lambda1Choice choice;
    choice.grid = {anchor, 0.3 * anchor, 0.1 * anchor, 0.03 * anchor, 0.01 * anchor};
    const double hnorm = frobenius_norm(xh);
    const Mat gram = matmul(transpose(xf), xf);
    double best_key = 1e300;
    bool found = false;
    for (double cand : choice.grid) {
        // the SVD targets and the Gram matrix are fixed for the whole grid,
        // so each candidate only pays for the coordinate descent itself
        std::vector<std::optional<std::vector<double>>> cols(static_cast<std::size_t>(Lf));
        parallel_for(static_cast<std::size_t>(Lf), workers, [&](std::size_t i) {
            std::vector<double> xtz;
            double znorm2 = 0.0;
            spca_detail::gram_system(xf, targets.z, static_cast<int>(i), xtz, znorm2);
            try {
                cols[i] = normalize_loading(
                    fit_sparse_loading_gram(gram, xtz, znorm2, lambda, cand).beta);
            } catch (const Error&) {
                cols[i] = std::nullopt;
            }
        });
        int kept = 0;
        double mean_sparsity = 0.0;
        for (const auto& c : cols) {
            if (!c) continue;
            ++kept;
            int zeros = 0;
            for (double e : *c) zeros += e == 0.0 ? 1 : 0;
            mean_sparsity += static_cast<double>(zeros) / static_cast<double>(c->size());
        }
        if (kept * 2 <= Lf) continue;
        mean_sparsity /= kept;

        Mat loadings(xf.cols, kept);
        int j = 0;
        for (const auto& c : cols) {
            if (!c) continue;
            for (int r = 0; r < xf.cols; ++r) loadings.at(r, j) = (*c)[static_cast<std::size_t>(r)];
            ++j;
        }
        const Mat coeff = matmul(xh, loadings);
        const Mat recon = matmul(coeff, transpose(loadings));
        double err = 0.0;
        for (std::size_t i = 0; i < recon.a.size(); ++i) {
            const double dr = xh.a[i] - recon.a[i];
            err += dr * dr;
        }
        err = hnorm > 0.0 ? std::sqrt(err) / hnorm : 0.0;

        const bool in_band = mean_sparsity >= 0.5 && mean_sparsity <= 0.9;
        const double band_dist =
            in_band ? 0.0 : std::min(std::abs(mean_sparsity - 0.5), std::abs(mean_sparsity - 0.9));
        const double key = band_dist * 1e6 + err; // band membership dominates
        if (!found || key < best_key) {
            found = true;
            best_key = key;
            choice.lambda1 = cand;
            choice.sparsity = mean_sparsity;
            choice.holdout_error = err;
        }
    }
    if (!found) throw FitError("choose_lambda1: every candidate failed to fit");
    return choice;
}

// --- bundle serialization ---------------------------------------------

inline void save_basis(const SparseBasis& basis, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["components"] = basis.components();
    j["feature_dim"] = basis.loadings.rows;
    j["lambda"] = basis.lambda;
    j["lambda1"] = basis.lambda1;
    j["column_means"] = basis.means;
    j["sparsity"] = basis.sparsity;
    j["dropped"] = basis.dropped;
    j["singular_values"] = basis.singular_values;
    const auto jpath = dir / "sparse_basis.json";
    std::FILE* jf = std::fopen(jpath.string().c_str(), "wb");
    if (!jf) throw IoError("cannot write " + jpath.string());
    const std::string text = j.dump(2);
    std::fwrite(text.data(), 1, text.size(), jf);
    std::fclose(jf);

    const auto fpath = dir / "sparse_basis.f64";
    std::FILE* ff = std::fopen(fpath.string().c_str(), "wb");
    if (!ff) throw IoError("cannot write " + fpath.string());
    std::fwrite(basis.loadings.a.data(), sizeof(double), basis.loadings.a.size(), ff);
    std::fclose(ff);
}

inline SparseBasis load_basis(const std::filesystem::path& dir) {
    std::ifstream jf(dir / "sparse_basis.json");
    if (!jf) throw IoError("missing sparse_basis.json in " + dir.string());
    nlohmann::json j = nlohmann::json::parse(jf);
    SparseBasis basis;
    const int L = j.at("components").get<int>();
    const int D = j.at("feature_dim").get<int>();
    basis.lambda = j.at("lambda").get<double>();
    basis.lambda1 = j.at("lambda1").get<double>();
    basis.means = j.at("column_means").get<std::vector<double>>();
    basis.sparsity = j.at("sparsity").get<std::vector<double>>();
    basis.dropped = j.at("dropped").get<std::vector<int>>();
    basis.singular_values = j.at("singular_values").get<std::vector<double>>();
    basis.loadings = Mat(D, L);
    std::FILE* ff = std::fopen((dir / "sparse_basis.f64").string().c_str(), "rb");
    if (!ff) throw IoError("missing sparse_basis.f64 in " + dir.string());
    const std::size_t n = std::fread(basis.loadings.a.data(), sizeof(double),
                                     basis.loadings.a.size(), ff);
    std::fclose(ff);
    if (n != basis.loadings.a.size()) throw IntegrityError("sparse_basis.f64 truncated");
    return basis;
}

} // namespace wid
