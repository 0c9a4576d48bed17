#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wid/common.hpp"
#include "wid/linalg.hpp"
#include "wid/rng.hpp"

namespace wid {

struct SvmGrid {
    std::vector<double> c_list = {0.1, 1.0, 10.0, 100.0};
    // gamma <= 0 stands for the data-driven 1/(n_features * var) value
    std::vector<double> gamma_list = {-1.0, 0.01, 0.1, 1.0};
    int folds = 3;
    double kkt_tol = 1e-3;
    long max_iter = 200000;
};

// One-vs-all binary SVM for a single enrolled writer.
struct WriterModel {
    std::string writer_id;
    int writer_index = 0;
    Mat support_vectors;            // nSV x d
    std::vector<double> dual_coef;  // alpha_i * y_i
    double bias = 0.0;
    double c = 1.0;
    double gamma = 0.1;
    int positives = 0;
    double cv_accuracy = 0.0;

    double decision(const double* x, int d) const {
        if (d != support_vectors.cols) throw DimensionError("decision: feature length mismatch");
        double acc = 0.0;
        for (int s = 0; s < support_vectors.rows; ++s) {
            const double* sv = support_vectors.row(s);
            double d2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double e = sv[j] - x[j];
                d2 += e * e;
            }
            acc += dual_coef[static_cast<std::size_t>(s)] * std::exp(-gamma * d2);
        }
        return acc + bias;
    }

    double decision(const std::vector<double>& x) const {
        return decision(x.data(), static_cast<int>(x.size()));
    }
};

// sigmoid normalization of the decision value into [0,1]
inline double score_fragment(const WriterModel& model, const std::vector<double>& descriptor) {
    return 1.0 / (1.0 + std::exp(-model.decision(descriptor)));
}

namespace svm_detail {

struct SmoResult {
    std::vector<double> alpha;
    double bias = 0.0;
    long iters = 0;
};

// Keerthi-style SMO on a precomputed kernel: maximal violating pair selection,
// per-sample box constraints, gradient maintained incrementally. A warm start
// (e.g. the solution for the previous C on the grid path) must satisfy the
// box and equality constraints; the gradient is rebuilt from it.
inline SmoResult smo_solve(const std::vector<const double*>& krows, const std::vector<int>& y,
                           const std::vector<double>& c, double tol, long max_iter,
                           const std::vector<double>* warm_start = nullptr) {
    const int n = static_cast<int>(y.size());
    SmoResult res;
    res.alpha.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<double> grad(static_cast<std::size_t>(n), -1.0); // G_i = (Q a)_i - 1
    if (warm_start && warm_start->size() == static_cast<std::size_t>(n)) {
        res.alpha = *warm_start;
        for (int i = 0; i < n; ++i) {
            const double ai = res.alpha[static_cast<std::size_t>(i)];
            if (ai == 0.0) continue;
            const double ay = ai * y[static_cast<std::size_t>(i)];
            const double* ki = krows[static_cast<std::size_t>(i)];
            for (int t = 0; t < n; ++t)
                grad[static_cast<std::size_t>(t)] += y[static_cast<std::size_t>(t)] * ki[t] * ay;
        }
    }

    auto in_up = [&](int t) {
        return y[static_cast<std::size_t>(t)] > 0 ? res.alpha[static_cast<std::size_t>(t)] < c[static_cast<std::size_t>(t)]
                                                  : res.alpha[static_cast<std::size_t>(t)] > 0.0;
    };
    auto in_low = [&](int t) {
        return y[static_cast<std::size_t>(t)] > 0 ? res.alpha[static_cast<std::size_t>(t)] > 0.0
                                                  : res.alpha[static_cast<std::size_t>(t)] < c[static_cast<std::size_t>(t)];
    };

    for (long iter = 0; iter < max_iter; ++iter) {
        int i = -1, j = -1;
        double gmax = -1e300, gmin = 1e300;
        for (int t = 0; t < n; ++t) {
            const double v = -y[static_cast<std::size_t>(t)] * grad[static_cast<std::size_t>(t)];
            if (in_up(t) && v > gmax) {
                gmax = v;
                i = t;
            }
            if (in_low(t) && v < gmin) {
                gmin = v;
                j = t;
            }
        }
        if (i < 0 || j < 0 || gmax - gmin <= tol) {
            res.iters = iter;
            break;
        }

        const double* ki = krows[static_cast<std::size_t>(i)];
        const double* kj = krows[static_cast<std::size_t>(j)];
        const int yi = y[static_cast<std::size_t>(i)], yj = y[static_cast<std::size_t>(j)];
        double& ai = res.alpha[static_cast<std::size_t>(i)];
        double& aj = res.alpha[static_cast<std::size_t>(j)];
        const double ci = c[static_cast<std::size_t>(i)], cj = c[static_cast<std::size_t>(j)];
        const double old_ai = ai, old_aj = aj;

        if (yi != yj) {
            const double quad = std::max(ki[i] + kj[j] + 2.0 * ki[j], 1e-12);
            const double delta = (-grad[static_cast<std::size_t>(i)] - grad[static_cast<std::size_t>(j)]) / quad;
            const double diff = ai - aj;
            ai += delta;
            aj += delta;
            if (diff > 0.0 && aj < 0.0) {
                aj = 0.0;
                ai = diff;
            } else if (diff <= 0.0 && ai < 0.0) {
                ai = 0.0;
                aj = -diff;
            }
            if (diff > ci - cj && ai > ci) {
                ai = ci;
                aj = ci - diff;
            } else if (diff <= ci - cj && aj > cj) {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            const double quad = std::max(ki[i] + kj[j] - 2.0 * ki[j], 1e-12);
            const double delta = (grad[static_cast<std::size_t>(i)] - grad[static_cast<std::size_t>(j)]) / quad;
            const double sum = ai + aj;
            ai -= delta;
            aj += delta;
            if (sum > ci && ai > ci) {
                ai = ci;
                aj = sum - ci;
            } else if (sum <= ci && aj < 0.0) {
                aj = 0.0;
                ai = sum;
            }
            if (sum > cj && aj > cj) {
                aj = cj;
                ai = sum - cj;
            } else if (sum <= cj && ai < 0.0) {
                ai = 0.0;
                aj = sum;
            }
        }

        const double dai = (ai - old_ai) * yi;
        const double daj = (aj - old_aj) * yj;
        for (int t = 0; t < n; ++t)
            grad[static_cast<std::size_t>(t)] +=
                y[static_cast<std::size_t>(t)] * (ki[t] * dai + kj[t] * daj);
        if (iter + 1 == max_iter) res.iters = max_iter;
    }

    // rho from the free support vectors, fallback to the violating-pair gap
    double sum = 0.0;
    int nfree = 0;
    double ub = 1e300, lb = -1e300;
    for (int t = 0; t < n; ++t) {
        const double yg = y[static_cast<std::size_t>(t)] * grad[static_cast<std::size_t>(t)];
        const double a = res.alpha[static_cast<std::size_t>(t)];
        if (a > 0.0 && a < c[static_cast<std::size_t>(t)]) {
            sum += yg;
            ++nfree;
        } else if ((y[static_cast<std::size_t>(t)] > 0 && a == 0.0) ||
                   (y[static_cast<std::size_t>(t)] < 0 && a >= c[static_cast<std::size_t>(t)])) {
            ub = std::min(ub, yg);
        } else {
            lb = std::max(lb, yg);
        }
    }
    const double rho = nfree > 0 ? sum / nfree : (ub + lb) / 2.0;
    res.bias = -rho;
    return res;
}

inline Mat squared_distances(const Mat& x) {
    const int n = x.rows;
    std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* row = x.row(i);
        double acc = 0.0;
        for (int j = 0; j < x.cols; ++j) acc += row[j] * row[j];
        norms[static_cast<std::size_t>(i)] = acc;
    }
    Mat g = matmul(x, transpose(x));
    Mat d2(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            d2.at(i, j) = std::max(0.0, norms[static_cast<std::size_t>(i)] +
                                            norms[static_cast<std::size_t>(j)] - 2.0 * g.at(i, j));
    return d2;
}

} // namespace svm_detail

inline double scale_gamma(const Mat& x) {
    double mean = 0.0;
    for (double v : x.a) mean += v;
    mean /= static_cast<double>(x.a.size());
    double var = 0.0;
    for (double v : x.a) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.a.size());
    if (var <= 0.0) var = 1.0;
    return 1.0 / (static_cast<double>(x.cols) * var);
}

struct OvrTrainResult {
    std::vector<WriterModel> models;
    std::vector<std::string> warnings;
};

// One-vs-all RBF SVMs with per-writer grid search by stratified k-fold CV.
// Ties prefer smaller C, then smaller gamma. Class imbalance is handled with
// per-sample C proportional to inverse class frequency.
inline OvrTrainResult train_ovr_svm(const Mat& x, const std::vector<int>& labels,
                                    const std::vector<std::string>& writer_ids,
                                    const SvmGrid& grid = {}, std::uint64_t seed = 0,
                                    unsigned workers = 1) {
    const int n = x.rows;
    if (labels.size() != static_cast<std::size_t>(n))
        throw DimensionError("train_ovr_svm: label count mismatch");
    const int W = static_cast<int>(writer_ids.size());
    if (W < 2) throw ParameterError("train_ovr_svm: need at least 2 writers");
    std::vector<int> class_count(static_cast<std::size_t>(W), 0);
    for (int l : labels) {
        if (l < 0 || l >= W) throw ParameterError("train_ovr_svm: label out of range");
        class_count[static_cast<std::size_t>(l)]++;
    }
    for (int w = 0; w < W; ++w)
        if (class_count[static_cast<std::size_t>(w)] < 2)
            throw ParameterError("train_ovr_svm: every writer needs at least 2 fragments");

    OvrTrainResult result;

    // resolve the gamma grid (ascending, deduplicated)
    const double gscale = scale_gamma(x);
    std::vector<double> gammas;
    for (double g : grid.gamma_list) gammas.push_back(g <= 0.0 ? gscale : g);
    std::sort(gammas.begin(), gammas.end());
    gammas.erase(std::unique(gammas.begin(), gammas.end()), gammas.end());
    std::vector<double> cs = grid.c_list;
    std::sort(cs.begin(), cs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());

    // stratified fold assignment: seeded shuffle within each class, then
    // round-robin, so every fold sees every writer where possible
    std::vector<int> fold_of(static_cast<std::size_t>(n), 0);
    {
        Rng rng(seed ^ 0x5f375a86ULL);
        for (int w = 0; w < W; ++w) {
            std::vector<int> members;
            for (int i = 0; i < n; ++i)
                if (labels[static_cast<std::size_t>(i)] == w) members.push_back(i);
            rng.shuffle(members);
            for (std::size_t k = 0; k < members.size(); ++k)
                fold_of[static_cast<std::size_t>(members[k])] = static_cast<int>(k) % grid.folds;
        }
    }

    const Mat d2 = svm_detail::squared_distances(x);

    struct Combo {
        double acc = -1.0, c = 0.0, gamma = 0.0;
    };
    std::vector<Combo> best(static_cast<std::size_t>(W));
    std::vector<int> writer_folds(static_cast<std::size_t>(W));
    for (int w = 0; w < W; ++w) {
        writer_folds[static_cast<std::size_t>(w)] =
            std::min(grid.folds, class_count[static_cast<std::size_t>(w)]);
        if (writer_folds[static_cast<std::size_t>(w)] < grid.folds)
            result.warnings.push_back("writer " + writer_ids[static_cast<std::size_t>(w)] +
                                      ": folds reduced to " +
                                      std::to_string(writer_folds[static_cast<std::size_t>(w)]));
    }

    // accuracy accumulators: correct and total per (writer, c, gamma)
    std::vector<std::vector<std::vector<long>>> hits(
        static_cast<std::size_t>(W),
        std::vector<std::vector<long>>(cs.size(), std::vector<long>(gammas.size(), 0)));
    auto totals = hits;

    std::vector<double> kernel(d2.a.size());
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
        const double gamma = gammas[gi];
        for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = std::exp(-gamma * d2.a[i]);

        for (int fold = 0; fold < grid.folds; ++fold) {
            std::vector<int> train_rows, val_rows;
            for (int i = 0; i < n; ++i)
                (fold_of[static_cast<std::size_t>(i)] == fold ? val_rows : train_rows).push_back(i);
            if (train_rows.empty() || val_rows.empty()) continue;
            const int tn = static_cast<int>(train_rows.size());

            // gather the train-train kernel block once per fold
            Mat ktrain(tn, tn);
            for (int a = 0; a < tn; ++a) {
                const double* src = kernel.data() +
                                    static_cast<std::size_t>(train_rows[static_cast<std::size_t>(a)]) * n;
                double* dst = ktrain.row(a);
                for (int b = 0; b < tn; ++b) dst[b] = src[train_rows[static_cast<std::size_t>(b)]];
            }
            std::vector<const double*> krows(static_cast<std::size_t>(tn));
            for (int a = 0; a < tn; ++a) krows[static_cast<std::size_t>(a)] = ktrain.row(a);

            parallel_for(static_cast<std::size_t>(W), workers, [&](std::size_t wi) {
                const int w = static_cast<int>(wi);
                if (fold >= writer_folds[wi]) return;
                std::vector<int> y(static_cast<std::size_t>(tn));
                int npos = 0;
                for (int a = 0; a < tn; ++a) {
                    const bool pos =
                        labels[static_cast<std::size_t>(train_rows[static_cast<std::size_t>(a)])] == w;
                    y[static_cast<std::size_t>(a)] = pos ? 1 : -1;
                    npos += pos ? 1 : 0;
                }
                if (npos == 0 || npos == tn) return;
                std::vector<double> warm; // C path ascends, boxes only grow
                for (std::size_t ci = 0; ci < cs.size(); ++ci) {
                    std::vector<double> cvec(static_cast<std::size_t>(tn));
                    for (int a = 0; a < tn; ++a) {
                        const bool pos = y[static_cast<std::size_t>(a)] > 0;
                        const double share = pos ? npos : tn - npos;
                        cvec[static_cast<std::size_t>(a)] =
                            cs[ci] * static_cast<double>(tn) / (2.0 * share);
                    }
                    const auto smo = svm_detail::smo_solve(krows, y, cvec, grid.kkt_tol,
                                                           grid.max_iter, warm.empty() ? nullptr : &warm);
                    warm = smo.alpha;
                    for (int v : val_rows) {
                        const double* krow = kernel.data() + static_cast<std::size_t>(v) * n;
                        double f = smo.bias;
                        for (int a = 0; a < tn; ++a) {
                            const double alpha = smo.alpha[static_cast<std::size_t>(a)];
                            if (alpha == 0.0) continue;
                            f += alpha * y[static_cast<std::size_t>(a)] *
                                 krow[train_rows[static_cast<std::size_t>(a)]];
                        }
                        const bool truth = labels[static_cast<std::size_t>(v)] == w;
                        if ((f > 0.0) == truth) hits[wi][ci][gi]++;
                        totals[wi][ci][gi]++;
                    }
                }
            });
        }
    }

    for (int w = 0; w < W; ++w) {
        Combo b;
        for (std::size_t ci = 0; ci < cs.size(); ++ci)
            for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
                const long tot = totals[static_cast<std::size_t>(w)][ci][gi];
                const double acc =
                    tot > 0 ? static_cast<double>(hits[static_cast<std::size_t>(w)][ci][gi]) / tot : -1.0;
                // strict improvement only: earlier (smaller) C and gamma win ties
                if (acc > b.acc + 1e-12) {
                    b.acc = acc;
                    b.c = cs[ci];
                    b.gamma = gammas[gi];
                }
            }
        if (b.acc < 0.0) { // no usable CV signal; take the smallest grid point
            b.c = cs.front();
            b.gamma = gammas.front();
            b.acc = 0.0;
            result.warnings.push_back("writer " + writer_ids[static_cast<std::size_t>(w)] +
                                      ": no cross-validation signal, using smallest grid point");
        }
        best[static_cast<std::size_t>(w)] = b;
    }

    // final solve on all rows per writer, kernels cached per distinct gamma
    result.models.resize(static_cast<std::size_t>(W));
    std::map<double, std::vector<double>> kernel_cache;
    for (int w = 0; w < W; ++w) {
        const double gamma = best[static_cast<std::size_t>(w)].gamma;
        if (!kernel_cache.count(gamma)) {
            std::vector<double> k(d2.a.size());
            for (std::size_t i = 0; i < k.size(); ++i) k[i] = std::exp(-gamma * d2.a[i]);
            kernel_cache[gamma] = std::move(k);
        }
    }
    parallel_for(static_cast<std::size_t>(W), workers, [&](std::size_t wi) {
        const int w = static_cast<int>(wi);
        const Combo& b = best[wi];
        const std::vector<double>& kfull = kernel_cache.at(b.gamma);
        std::vector<const double*> krows(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) krows[static_cast<std::size_t>(i)] = kfull.data() + static_cast<std::size_t>(i) * n;

        std::vector<int> y(static_cast<std::size_t>(n));
        int npos = 0;
        for (int i = 0; i < n; ++i) {
            const bool pos = labels[static_cast<std::size_t>(i)] == w;
            y[static_cast<std::size_t>(i)] = pos ? 1 : -1;
            npos += pos ? 1 : 0;
        }
        std::vector<double> cvec(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const bool pos = y[static_cast<std::size_t>(i)] > 0;
            const double share = pos ? npos : n - npos;
            cvec[static_cast<std::size_t>(i)] = b.c * static_cast<double>(n) / (2.0 * share);
        }
        const auto smo = svm_detail::smo_solve(krows, y, cvec, grid.kkt_tol, grid.max_iter);

        WriterModel m;
        m.writer_id = writer_ids[wi];
        m.writer_index = w;
        m.c = b.c;
        m.gamma = b.gamma;
        m.positives = npos;
        m.cv_accuracy = b.acc;
        m.bias = smo.bias;
        std::vector<int> sv_rows;
        for (int i = 0; i < n; ++i)
            if (smo.alpha[static_cast<std::size_t>(i)] > 0.0) sv_rows.push_back(i);
        m.support_vectors = Mat(std::max<int>(1, static_cast<int>(sv_rows.size())), x.cols);
        m.dual_coef.assign(static_cast<std::size_t>(std::max<int>(1, static_cast<int>(sv_rows.size()))), 0.0);
        for (std::size_t s = 0; s < sv_rows.size(); ++s) {
            std::copy_n(x.row(sv_rows[s]), x.cols, m.support_vectors.row(static_cast<int>(s)));
            m.dual_coef[s] = smo.alpha[static_cast<std::size_t>(sv_rows[s])] *
                             y[static_cast<std::size_t>(sv_rows[s])];
        }
        result.models[wi] = std::move(m);
    });
    return result;
}

// --- binary model files ---------------------------------------------------

inline void save_writer_model(const WriterModel& m, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot write " + path.string());
    auto put = [&](const void* p, std::size_t bytes) {
        if (std::fwrite(p, 1, bytes, f) != bytes) {
            std::fclose(f);
            throw IoError("short write: " + path.string());
        }
    };
    const char magic[4] = {'W', 'S', 'V', 'M'};
    put(magic, 4);
    const std::uint32_t version = 1;
    put(&version, 4);
    const std::uint32_t idlen = static_cast<std::uint32_t>(m.writer_id.size());
    put(&idlen, 4);
    put(m.writer_id.data(), idlen);
    const std::int32_t vals[3] = {m.writer_index, m.support_vectors.rows, m.support_vectors.cols};
    put(vals, sizeof(vals));
    const double scalars[4] = {m.bias, m.c, m.gamma, m.cv_accuracy};
    put(scalars, sizeof(scalars));
    const std::int32_t pos = m.positives;
    put(&pos, 4);
    put(m.dual_coef.data(), m.dual_coef.size() * sizeof(double));
    put(m.support_vectors.a.data(), m.support_vectors.a.size() * sizeof(double));
    std::fclose(f);
}

inline WriterModel load_writer_model(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("missing " + path.string());
    auto get = [&](void* p, std::size_t bytes) {
        if (std::fread(p, 1, bytes, f) != bytes) {
            std::fclose(f);
            throw IntegrityError("truncated model file: " + path.string());
        }
    };
    char magic[4];
    get(magic, 4);
    if (std::memcmp(magic, "WSVM", 4) != 0) {
        std::fclose(f);
        throw IntegrityError("bad magic in " + path.string());
    }
    std::uint32_t version = 0;
    get(&version, 4);
    if (version != 1) {
        std::fclose(f);
        throw IntegrityError("unsupported model version in " + path.string());
    }
    std::uint32_t idlen = 0;
    get(&idlen, 4);
    std::string id(idlen, '\0');
    get(id.data(), idlen);
    std::int32_t vals[3];
    get(vals, sizeof(vals));
    double scalars[4];
    get(scalars, sizeof(scalars));
    std::int32_t pos = 0;
    get(&pos, 4);

    WriterModel m;
    m.writer_id = id;
    m.writer_index = vals[0];
    m.support_vectors = Mat(vals[1], vals[2]);
    m.dual_coef.assign(static_cast<std::size_t>(vals[1]), 0.0);
    m.bias = scalars[0];
    m.c = scalars[1];
    m.gamma = scalars[2];
    m.cv_accuracy = scalars[3];
    m.positives = pos;
    get(m.dual_coef.data(), m.dual_coef.size() * sizeof(double));
    get(m.support_vectors.a.data(), m.support_vectors.a.size() * sizeof(double));
    std::fclose(f);
    return m;
}

} // namespace wid
