#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "wid/common.hpp"
#include "wid/linalg.hpp"
#include "wid/svm.hpp"

namespace wid {

// Z-hat = Z with every column k scaled by w_k.
inline Mat weight_descriptors(const Mat& z, const std::vector<double>& w) {
    if (w.size() != static_cast<std::size_t>(z.cols))
        throw DimensionError("weight_descriptors: weight count does not match columns");
    Mat out = z;
    for (int i = 0; i < out.rows; ++i) {
        double* row = out.row(i);
        for (int j = 0; j < out.cols; ++j) row[j] *= w[static_cast<std::size_t>(j)];
    }
    return out;
}

// Per-writer scores in [0,1] for one word (or page), plus the evidence count.
struct ScoreVector {
    std::vector<double> scores;
    std::string context;
    int fragments = 0;
};

struct Prediction {
    std::vector<int> ranking; // writer indices, best first
    int top = 0;
};

// P_l = mean over fragments of the per-fragment sigmoid scores.
inline ScoreVector fuse_word(const std::vector<std::vector<double>>& fragment_scores,
                             const std::string& context = "") {
    if (fragment_scores.empty())
        throw NoEvidenceError("fuse_word: no fragments for " + context);
    const std::size_t w = fragment_scores.front().size();
    ScoreVector out;
    out.context = context;
    out.fragments = static_cast<int>(fragment_scores.size());
    out.scores.assign(w, 0.0);
    for (const auto& frag : fragment_scores) {
        if (frag.size() != w) throw DimensionError("fuse_word: ragged score lists");
        for (std::size_t l = 0; l < w; ++l) out.scores[l] += frag[l];
    }
    for (double& s : out.scores) s /= static_cast<double>(out.fragments);
    return out;
}

// P_page,l = mean over the page's word scores.
inline ScoreVector fuse_page(const std::vector<ScoreVector>& word_scores,
                             const std::string& context = "") {
    if (word_scores.empty()) throw NoEvidenceError("fuse_page: no scored words for " + context);
    const std::size_t w = word_scores.front().scores.size();
    ScoreVector out;
    out.context = context;
    out.fragments = static_cast<int>(word_scores.size());
    out.scores.assign(w, 0.0);
    for (const ScoreVector& sv : word_scores) {
        if (sv.scores.size() != w) throw DimensionError("fuse_page: ragged score lists");
        for (std::size_t l = 0; l < w; ++l) out.scores[l] += sv.scores[l];
    }
    for (double& s : out.scores) s /= static_cast<double>(out.fragments);
    return out;
}

// Full descending ranking; exact ties go to the smaller writer index.
inline Prediction predict(const ScoreVector& scores) {
    if (scores.scores.empty()) throw ParameterError("predict: empty score vector");
    Prediction p;
    p.ranking.resize(scores.scores.size());
    std::iota(p.ranking.begin(), p.ranking.end(), 0);
    std::stable_sort(p.ranking.begin(), p.ranking.end(), [&](int a, int b) {
        return scores.scores[static_cast<std::size_t>(a)] > scores.scores[static_cast<std::size_t>(b)];
    });
    p.top = p.ranking.front();
    return p;
}

// Fraction of cases whose truth appears among the first k ranked writers.
inline double evaluate_topk(const std::vector<Prediction>& predictions,
                            const std::vector<int>& truths, int k) {
    if (predictions.size() != truths.size()) throw DimensionError("evaluate_topk: length mismatch");
    if (k < 1) throw ParameterError("evaluate_topk: k must be >= 1");
    if (predictions.empty()) return 0.0;
    int hit = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& r = predictions[i].ranking;
        const int upto = std::min<int>(k, static_cast<int>(r.size()));
        for (int j = 0; j < upto; ++j)
            if (r[static_cast<std::size_t>(j)] == truths[i]) {
                ++hit;
                break;
            }
    }
    return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

// Scores one descriptor against every writer model.
inline std::vector<double> score_against_models(const std::vector<WriterModel>& models,
                                                const std::vector<double>& descriptor) {
    std::vector<double> out(models.size());
    for (std::size_t l = 0; l < models.size(); ++l) out[l] = score_fragment(models[l], descriptor);
    return out;
}

} // namespace wid
