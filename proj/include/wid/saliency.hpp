#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <vector>

#include <json.hpp>

#include "wid/common.hpp"
#include "wid/linalg.hpp"

namespace wid {

enum class WeightMode { kInverse, kDirect };

// Shared bin edges plus per-writer counts and probabilities for one
// component of the coefficient matrix.
struct ComponentHistogramSet {
    int component = 0;
    std::vector<double> edges;            // B+1, strictly increasing
    std::vector<int> writers;             // writer ids, row order of the matrices below
    std::vector<std::vector<int>> counts; // W x B
    std::vector<std::vector<double>> probs;
    bool constant_component = false;
};

struct DivergenceMatrix {
    int component = 0;
    Mat d; // W x W, zero diagonal
};

struct SaliencyWeights {
    std::vector<double> phi;  // average divergence per component
    std::vector<double> w;    // significance weight per component
    std::vector<int> bins;    // bin count used per component
    std::vector<bool> constant_flags;
    std::vector<std::vector<double>> edges; // per component, for test-time reference
    double epsilon = 1e-6;
    WeightMode mode = WeightMode::kInverse;
};

// Freedman-Diaconis edges over [min, max]; IQR via linear-interpolation
// quantiles. Zero IQR falls back to Sturges; a constant sample degenerates to
// a single flagged bin.
inline std::vector<double> fd_bin_edges(std::vector<double> values, bool* constant_flag = nullptr) {
    if (values.size() < 2) throw ParameterError("fd_bin_edges: need at least 2 values");
    std::sort(values.begin(), values.end());
    const double lo = values.front(), hi = values.back();
    if (constant_flag) *constant_flag = false;
    if (lo == hi) {
        if (constant_flag) *constant_flag = true;
        // degenerate support: one nominal bin around the constant
        return {lo, lo + 1.0};
    }
    const double n = static_cast<double>(values.size());
    auto quantile = [&](double p) {
        const double pos = p * (n - 1.0);
        const std::size_t i = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i);
        if (i + 1 >= values.size()) return values.back();
        return values[i] * (1.0 - frac) + values[i + 1] * frac;
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    int bins;
    if (iqr > 0.0) {
        const double width = 2.0 * iqr * std::pow(n, -1.0 / 3.0);
        bins = static_cast<int>(std::ceil((hi - lo) / width));
    } else {
        bins = static_cast<int>(std::ceil(std::log2(n))) + 1; // Sturges
    }
    bins = std::max(bins, 1);
    std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * static_cast<double>(b) / bins;
    edges.front() = lo;
    edges.back() = hi;
    return edges;
}

// Half-open assignment h_b <= a < h_{b+1}, top bin closed; out-of-range
// values clamp into the boundary bins.
inline int bin_index(double v, const std::vector<double>& edges) {
    const int bins = static_cast<int>(edges.size()) - 1;
    if (v <= edges.front()) return 0;
    if (v >= edges.back()) return bins - 1;
    int lo = 0, hi = bins;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (v >= edges[static_cast<std::size_t>(mid)])
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

// Histograms of coefficient column k per writer, on edges pooled over all
// writers. Writers with zero fragments are excluded.
inline ComponentHistogramSet build_histograms(const Mat& alpha, const std::vector<int>& writer_ids,
                                              int k) {
    if (writer_ids.size() != static_cast<std::size_t>(alpha.rows))
        throw DimensionError("build_histograms: every row needs a writer label");
    if (k < 0 || k >= alpha.cols) throw ParameterError("build_histograms: component out of range");

    std::vector<double> pooled(static_cast<std::size_t>(alpha.rows));
    for (int i = 0; i < alpha.rows; ++i) pooled[static_cast<std::size_t>(i)] = alpha.at(i, k);

    ComponentHistogramSet set;
    set.component = k;
    set.edges = fd_bin_edges(pooled, &set.constant_component);
    const int bins = static_cast<int>(set.edges.size()) - 1;

    std::map<int, std::vector<int>> per_writer;
    for (int i = 0; i < alpha.rows; ++i)
        per_writer[writer_ids[static_cast<std::size_t>(i)]].push_back(i);

    for (const auto& [writer, rows] : per_writer) {
        if (rows.empty()) continue;
        std::vector<int> counts(static_cast<std::size_t>(bins), 0);
        for (int r : rows) counts[static_cast<std::size_t>(bin_index(alpha.at(r, k), set.edges))]++;
        std::vector<double> probs(static_cast<std::size_t>(bins));
        const double total = static_cast<double>(rows.size());
        for (int b = 0; b < bins; ++b)
            probs[static_cast<std::size_t>(b)] = counts[static_cast<std::size_t>(b)] / total;
        set.writers.push_back(writer);
        set.counts.push_back(std::move(counts));
        set.probs.push_back(std::move(probs));
    }
    return set;
}

// Base-2 KL divergence with epsilon smoothing and renormalization of both
// distributions; epsilon = 0 keeps the 0*log0 = 0 convention and returns
// infinity when q vanishes where p does not.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q,
                            double epsilon) {
    if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
    if (epsilon < 0.0) throw ParameterError("kl_divergence: epsilon must be >= 0");
    double ps = 0.0, qs = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        ps += p[i] + epsilon;
        qs += q[i] + epsilon;
    }
    if (ps <= 0.0 || qs <= 0.0) throw ParameterError("kl_divergence: empty distributions");
    double out = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = (p[i] + epsilon) / ps;
        const double qi = (q[i] + epsilon) / qs;
        if (pi == 0.0) continue;
        if (qi == 0.0) return std::numeric_limits<double>::infinity();
        out += pi * std::log2(pi / qi);
    }
    return out;
}

inline DivergenceMatrix divergence_matrix(const ComponentHistogramSet& hists, double epsilon) {
    const int w = static_cast<int>(hists.writers.size());
    if (w < 2) throw ParameterError("divergence_matrix: need at least 2 writers");
    DivergenceMatrix dm;
    dm.component = hists.component;
    dm.d = Mat(w, w);
    for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j)
            dm.d.at(i, j) = i == j ? 0.0
                                   : kl_divergence(hists.probs[static_cast<std::size_t>(i)],
                                                   hists.probs[static_cast<std::size_t>(j)], epsilon);
    return dm;
}

// phi_k = sum of off-diagonal divergences / (W (W-1))
inline double average_divergence(const DivergenceMatrix& dm) {
    const int w = dm.d.rows;
    if (w < 2) throw ParameterError("average_divergence: need at least 2 writers");
    double acc = 0.0;
    for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j)
            if (i != j) acc += dm.d.at(i, j);
    return acc / (static_cast<double>(w) * (w - 1));
}

// w_k = 1/(1+phi_k); the direct mode inverts the emphasis for the ablation.
inline std::vector<double> significance_weights(const std::vector<double>& phi,
                                                WeightMode mode = WeightMode::kInverse) {
    std::vector<double> w(phi.size());
    for (std::size_t k = 0; k < phi.size(); ++k) {
        if (!(phi[k] >= 0.0)) throw ParameterError("significance_weights: phi must be >= 0");
        w[k] = mode == WeightMode::kInverse ? 1.0 / (1.0 + phi[k]) : phi[k] / (1.0 + phi[k]);
    }
    return w;
}

// Full fit over every component of the coefficient matrix.
inline SaliencyWeights fit_saliency(const Mat& alpha, const std::vector<int>& writer_ids,
                                    double epsilon = 1e-6, WeightMode mode = WeightMode::kInverse) {
    SaliencyWeights out;
    out.epsilon = epsilon;
    out.mode = mode;
    for (int k = 0; k < alpha.cols; ++k) {
        const ComponentHistogramSet hists = build_histograms(alpha, writer_ids, k);
        const DivergenceMatrix dm = divergence_matrix(hists, epsilon);
        out.phi.push_back(average_divergence(dm));
        out.bins.push_back(static_cast<int>(hists.edges.size()) - 1);
        out.constant_flags.push_back(hists.constant_component);
        out.edges.push_back(hists.edges);
    }
    out.w = significance_weights(out.phi, mode);
    return out;
}

inline void save_saliency(const SaliencyWeights& s, const std::filesystem::path& path) {
    nlohmann::json j;
    j["epsilon"] = s.epsilon;
    j["mode"] = s.mode == WeightMode::kInverse ? "inverse" : "direct";
    j["phi"] = s.phi;
    j["w"] = s.w;
    j["bins"] = s.bins;
    j["constant"] = std::vector<int>(s.constant_flags.begin(), s.constant_flags.end());
    j["edges"] = s.edges;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2);
}

inline SaliencyWeights load_saliency(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("missing " + path.string());
    nlohmann::json j = nlohmann::json::parse(f);
    SaliencyWeights s;
    s.epsilon = j.at("epsilon").get<double>();
    s.mode = j.at("mode").get<std::string>() == "direct" ? WeightMode::kDirect : WeightMode::kInverse;
    s.phi = j.at("phi").get<std::vector<double>>();
    s.w = j.at("w").get<std::vector<double>>();
    s.bins = j.at("bins").get<std::vector<int>>();
    for (int c : j.at("constant").get<std::vector<int>>()) s.constant_flags.push_back(c != 0);
    s.edges = j.at("edges").get<std::vector<std::vector<double>>>();
    return s;
}

} // namespace wid
