#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "wid/bundle.hpp"
#include "wid/classifier.hpp"
#include "wid/corpus.hpp"
#include "wid/imaging.hpp"
#include "wid/keypoints.hpp"

namespace wid {

struct WordPatchSet {
    std::string word_id;
    std::string path;
    int writer = -1; // enrolled index, -1 when unknown
    std::vector<Keypoint> keypoints;
    std::vector<NormalizedPatch> patches;
};

inline std::string word_id_for(const CorpusItem& item) {
    const fs::path p(item.path);
    return item.writer_id + "/" + p.stem().string();
}

// SIFT patch extraction for a list of corpus items, parallel across words.
inline std::vector<WordPatchSet> extract_patch_sets(const std::vector<CorpusItem>& items,
                                                    const Corpus& corpus,
                                                    const PipelineConfig& cfg) {
    std::vector<WordPatchSet> out(items.size());
    parallel_for(items.size(), cfg.threads, [&](std::size_t i) {
        const CorpusItem& item = items[i];
        WordPatchSet set;
        set.word_id = word_id_for(item);
        set.path = item.path;
        set.writer = corpus.writer_index(item.writer_id);
        const GrayImage img = read_gray(item.path);
        for (auto& [kp, patch] : extract_word_patches(img, cfg.sift, set.word_id)) {
            set.keypoints.push_back(kp);
            set.patches.push_back(std::move(patch));
        }
        out[i] = std::move(set);
    });
    return out;
}

// Everything the three fusion modes share: the trained embedder, raw train
// embeddings, the sparse basis and the saliency weights.
struct PipelineArtifacts {
    EmbedNet net;
    std::vector<double> loss_history;
    Mat train_embeddings; // N x D
    std::vector<int> train_labels;
    std::vector<std::string> writer_ids;
    SparseBasis basis;
    SaliencyWeights saliency;
    double chosen_lambda1 = 0.0;
};

inline Mat embed_all(EmbedNet& net, const std::vector<const NormalizedPatch*>& patches,
                     unsigned workers) {
    if (patches.empty()) throw CorpusError("embed_all: no patches");
    Mat out(static_cast<int>(patches.size()), net.embed_dim);
    parallel_for(patches.size(), workers, [&](std::size_t i) {
        const EmbeddingVector e = embed(net, *patches[i]);
        std::copy(e.begin(), e.end(), out.row(static_cast<int>(i)));
    });
    return out;
}

inline PipelineArtifacts fit_artifacts(const Corpus& corpus, const PipelineConfig& cfg,
                                       std::ostream* log = nullptr) {
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };
    auto note = [&](const std::string& msg) {
        if (!log) return;
        char head[48];
        std::snprintf(head, sizeof(head), "[train %.1fs] ", elapsed());
        *log << head << msg << "\n";
    };

    PipelineArtifacts art;
    art.writer_ids = corpus.writer_ids;

    note("extracting patches from " + std::to_string(corpus.train.size()) + " training words");
    const std::vector<WordPatchSet> sets = extract_patch_sets(corpus.train, corpus, cfg);

    PatchDataset dataset;
    std::vector<const NormalizedPatch*> patch_ptrs;
    for (const WordPatchSet& set : sets)
        for (const NormalizedPatch& p : set.patches) {
            dataset.add(p, set.writer);
            patch_ptrs.push_back(&p);
        }
    if (dataset.size() == 0) throw CorpusError("training corpus produced no patches");
    note("collected " + std::to_string(dataset.size()) + " patches");

    art.net = EmbedNet::make(cfg.embed_dim, cfg.seed);
    if (cfg.epochs > 0) {
        TrainConfig tc;
        tc.batch_size = cfg.batch_size;
        tc.learning_rate = cfg.learning_rate;
        tc.epochs = cfg.epochs;
        tc.seed = cfg.seed;
        tc.margin = cfg.margin;
        tc.triplets_per_epoch = cfg.triplets_per_epoch;
        tc.loss = cfg.loss;
        const TrainResult tr = train_siamese(dataset, art.net, tc);
        art.loss_history = tr.epoch_loss;
        note("trained embedder, final epoch loss " +
             std::to_string(tr.epoch_loss.empty() ? 0.0 : tr.epoch_loss.back()));
    }

    art.train_embeddings = embed_all(art.net, patch_ptrs, cfg.threads);
    art.train_labels.reserve(dataset.size());
    for (int l : dataset.labels) art.train_labels.push_back(l);
    note("embedded training patches");

    // sparse basis, optionally on a seeded row subsample
    DataMatrix dm;
    if (cfg.spca_sample > 0 && cfg.spca_sample < art.train_embeddings.rows) {
        std::vector<int> rows(static_cast<std::size_t>(art.train_embeddings.rows));
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
        Rng rng = Rng(cfg.seed).fork(0x53504341ULL);
        rng.shuffle(rows);
        rows.resize(static_cast<std::size_t>(cfg.spca_sample));
        std::sort(rows.begin(), rows.end());
        dm.values = Mat(cfg.spca_sample, art.train_embeddings.cols);
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy_n(art.train_embeddings.row(rows[i]), art.train_embeddings.cols,
                        dm.values.row(static_cast<int>(i)));
    } else {
        dm.values = art.train_embeddings;
    }

    const int L = std::min({cfg.effective_components(), dm.values.rows, dm.values.cols});
    double lambda1 = cfg.spca_lambda1;
    if (lambda1 < 0.0) {
        const Lambda1Choice choice = choose_lambda1(dm, L, cfg.spca_lambda, cfg.threads);
        lambda1 = choice.lambda1;
        note("lambda1 grid chose " + std::to_string(lambda1) + " (sparsity " +
             std::to_string(choice.sparsity) + ")");
    }
    art.chosen_lambda1 = lambda1;
    art.basis = fit_basis(dm, L, cfg.spca_lambda, lambda1, {}, cfg.threads);
    note("fitted sparse basis with " + std::to_string(art.basis.components()) + " components");

    const Mat alpha = project(art.train_embeddings, art.basis);
    art.saliency = fit_saliency(alpha, art.train_labels, cfg.saliency_epsilon, cfg.weight_mode);
    note("fitted saliency weights");
    return art;
}

// Mode-specific feature matrix from raw embeddings.
inline Mat mode_features(const PipelineArtifacts& art, const Mat& raw, FusionMode mode) {
    switch (mode) {
        case FusionMode::kBaseline: return raw;
        case FusionMode::kSparse: return project(raw, art.basis);
        default: return weight_descriptors(project(raw, art.basis), art.saliency.w);
    }
}

inline std::vector<WriterModel> fit_svms(const PipelineArtifacts& art, FusionMode mode,
                                         const PipelineConfig& cfg,
                                         std::vector<std::string>* warnings = nullptr) {
    const Mat features = mode_features(art, art.train_embeddings, mode);
    OvrTrainResult res =
        train_ovr_svm(features, art.train_labels, art.writer_ids, cfg.svm, cfg.seed, cfg.threads);
    if (warnings)
        warnings->insert(warnings->end(), res.warnings.begin(), res.warnings.end());
    return std::move(res.models);
}

inline ModelBundle assemble_bundle(PipelineArtifacts&& art, std::vector<WriterModel> svms,
                                   const PipelineConfig& cfg) {
    ModelBundle bundle;
    bundle.config = cfg;
    bundle.net = std::move(art.net);
    bundle.basis = std::move(art.basis);
    bundle.saliency = std::move(art.saliency);
    bundle.svms = std::move(svms);
    bundle.writer_ids = std::move(art.writer_ids);
    bundle.loss_history = std::move(art.loss_history);
    return bundle;
}

// --- inference --------------------------------------------------------------

struct WordResult {
    std::string word_id;
    std::string path;
    int truth = -1;
    bool no_evidence = false;
    int fragments = 0;
    ScoreVector scores;
    Prediction pred;
};

inline std::vector<double> bundle_descriptor(const ModelBundle& bundle, const EmbeddingVector& emb) {
    if (bundle.config.fusion == FusionMode::kBaseline) return emb;
    Mat row(1, static_cast<int>(emb.size()));
    std::copy(emb.begin(), emb.end(), row.row(0));
    const Mat alpha = project(row, bundle.basis);
    std::vector<double> out(alpha.a);
    if (bundle.config.fusion == FusionMode::kWeighted) {
        for (std::size_t k = 0; k < out.size(); ++k) out[k] *= bundle.saliency.w[k];
    }
    return out;
}

// Scores one word image against every enrolled writer.
inline WordResult identify_word(ModelBundle& bundle, const GrayImage& image,
                                const std::string& word_id, const std::string& path = "") {
    WordResult res;
    res.word_id = word_id;
    res.path = path;
    std::vector<std::vector<double>> fragment_scores;
    if (image.width >= 16 && image.height >= 16) {
        for (const auto& [kp, patch] : extract_word_patches(image, bundle.config.sift, word_id)) {
            const EmbeddingVector emb = embed(bundle.net, patch);
            fragment_scores.push_back(
                score_against_models(bundle.svms, bundle_descriptor(bundle, emb)));
        }
    }
    res.fragments = static_cast<int>(fragment_scores.size());
    if (fragment_scores.empty()) {
        res.no_evidence = true;
        res.scores.scores.assign(bundle.writer_ids.size(), 0.0);
        res.scores.context = word_id;
        return res;
    }
    res.scores = fuse_word(fragment_scores, word_id);
    res.pred = predict(res.scores);
    return res;
}

struct EvalSummary {
    int words = 0;
    int skipped = 0;
    double top1 = 0.0;
    double top5 = 0.0;
    std::map<std::string, std::map<std::string, int>> confusion; // truth -> top-1 -> count
    std::vector<double> curve; // accuracy at 1..8 words per writer, 5 resamples
    double dbi = -1.0;         // embedding-space Davies-Bouldin on test fragments
    std::string fusion_mode;
};

// Test-split patches and raw embeddings; shared by every fusion mode.
struct TestEmbeddings {
    std::vector<WordPatchSet> sets;
    Mat embeddings;                // one row per patch
    std::vector<int> patch_labels; // writer per patch
    std::vector<std::pair<std::size_t, std::size_t>> word_span; // [begin, end) per word
};

inline TestEmbeddings embed_test_corpus(EmbedNet& net, const Corpus& corpus,
                                        const PipelineConfig& cfg, std::ostream* log = nullptr) {
    TestEmbeddings out;
    out.sets = extract_patch_sets(corpus.test, corpus, cfg);
    std::vector<const NormalizedPatch*> patch_ptrs;
    out.word_span.resize(out.sets.size());
    for (std::size_t i = 0; i < out.sets.size(); ++i) {
        out.word_span[i].first = patch_ptrs.size();
        for (const NormalizedPatch& p : out.sets[i].patches) {
            patch_ptrs.push_back(&p);
            out.patch_labels.push_back(out.sets[i].writer);
        }
        out.word_span[i].second = patch_ptrs.size();
    }
    if (patch_ptrs.empty()) throw CorpusError("evaluate: test corpus produced no patches");
    out.embeddings = embed_all(net, patch_ptrs, cfg.threads);
    if (log) *log << "[eval] embedded " << out.embeddings.rows << " test patches\n";
    return out;
}

// Scoring and summary over precomputed test embeddings.
inline EvalSummary summarize_test(const ModelBundle& bundle, const TestEmbeddings& test,
                                  std::vector<WordResult>* word_results = nullptr) {
    const PipelineConfig& cfg = bundle.config;
    const auto& sets = test.sets;
    const auto& word_span = test.word_span;
    const Mat& embeddings = test.embeddings;

    const PipelineArtifacts view = [&] {
        PipelineArtifacts a;
        a.basis = bundle.basis;
        a.saliency = bundle.saliency;
        return a;
    }();
    const Mat features = mode_features(view, embeddings, cfg.fusion);

    // per-fragment scores against every model, then per-word fusion
    Mat frag_scores(features.rows, static_cast<int>(bundle.svms.size()));
    parallel_for(static_cast<std::size_t>(features.rows), cfg.threads, [&](std::size_t i) {
        std::vector<double> x(features.row(static_cast<int>(i)),
                              features.row(static_cast<int>(i)) + features.cols);
        for (std::size_t l = 0; l < bundle.svms.size(); ++l)
            frag_scores.at(static_cast<int>(i), static_cast<int>(l)) =
                score_fragment(bundle.svms[l], x);
    });

    EvalSummary summary;
    summary.fusion_mode = to_string(cfg.fusion);
    std::vector<WordResult> results;
    std::vector<Prediction> preds;
    std::vector<int> truths;
    std::map<int, std::vector<std::size_t>> writer_words; // writer -> indices into results
    for (std::size_t i = 0; i < sets.size(); ++i) {
        WordResult r;
        r.word_id = sets[i].word_id;
        r.path = sets[i].path;
        r.truth = sets[i].writer;
        const auto [b, e] = word_span[i];
        r.fragments = static_cast<int>(e - b);
        if (b == e) {
            r.no_evidence = true;
            summary.skipped++;
            results.push_back(std::move(r));
            continue;
        }
        std::vector<std::vector<double>> frags;
        for (std::size_t p = b; p < e; ++p) {
            frags.emplace_back(frag_scores.row(static_cast<int>(p)),
                               frag_scores.row(static_cast<int>(p)) + frag_scores.cols);
        }
        r.scores = fuse_word(frags, r.word_id);
        r.pred = predict(r.scores);
        preds.push_back(r.pred);
        truths.push_back(r.truth);
        writer_words[r.truth].push_back(results.size());
        summary.confusion[bundle.writer_ids[static_cast<std::size_t>(r.truth)]]
                         [bundle.writer_ids[static_cast<std::size_t>(r.pred.top)]]++;
        results.push_back(std::move(r));
    }
    summary.words = static_cast<int>(preds.size());
    if (!preds.empty()) {
        summary.top1 = evaluate_topk(preds, truths, 1);
        summary.top5 = evaluate_topk(preds, truths, 5);
    }

    // words-available curve: mean page-fusion accuracy at m = 1..8 words,
    // five seeded resamples each
    constexpr int kResamples = 5;
    for (int m = 1; m <= 8; ++m) {
        double acc_sum = 0.0;
        for (int r = 0; r < kResamples; ++r) {
            Rng rng = Rng(cfg.seed).fork(0x43555256ULL + static_cast<std::uint64_t>(m) * 64 +
                                         static_cast<std::uint64_t>(r));
            int correct = 0, total = 0;
            for (const auto& [writer, indices] : writer_words) {
                std::vector<ScoreVector> chosen;
                if (indices.size() >= static_cast<std::size_t>(m)) {
                    std::vector<std::size_t> pool = indices;
                    rng.shuffle(pool);
                    for (int t = 0; t < m; ++t) chosen.push_back(results[pool[static_cast<std::size_t>(t)]].scores);
                } else {
                    for (int t = 0; t < m; ++t)
                        chosen.push_back(results[indices[rng.next_below(indices.size())]].scores);
                }
                const Prediction p = predict(fuse_page(chosen));
                correct += p.top == writer ? 1 : 0;
                ++total;
            }
            acc_sum += total > 0 ? static_cast<double>(correct) / total : 0.0;
        }
        summary.curve.push_back(acc_sum / kResamples);
    }

    // embedding-space clustering quality, informational
    try {
        std::vector<EmbeddingVector> embs;
        for (int i = 0; i < embeddings.rows; ++i)
            embs.emplace_back(embeddings.row(i), embeddings.row(i) + embeddings.cols);
        summary.dbi = davies_bouldin(embs, test.patch_labels);
    } catch (const Error&) {
        summary.dbi = -1.0;
    }

    if (word_results) *word_results = std::move(results);
    return summary;
}

// Full test-split evaluation: per-word results, top-k summary, per-writer
// confusion counts and the words-available sensitivity curve.
inline EvalSummary evaluate_bundle(ModelBundle& bundle, const Corpus& corpus,
                                   std::vector<WordResult>* word_results = nullptr,
                                   std::ostream* log = nullptr) {
    const TestEmbeddings test = embed_test_corpus(bundle.net, corpus, bundle.config, log);
    return summarize_test(bundle, test, word_results);
}

struct AblationRow {
    std::string mode;
    double top1 = 0.0;
    double top5 = 0.0;
};

// Table-style three-mode comparison; artifacts and test embeddings are
// computed once and shared across the rows.
inline std::vector<AblationRow> run_ablation(PipelineArtifacts& art, const Corpus& corpus,
                                             const PipelineConfig& cfg,
                                             std::ostream* log = nullptr) {
    const TestEmbeddings test = embed_test_corpus(art.net, corpus, cfg, log);
    std::vector<AblationRow> rows;
    for (FusionMode mode : {FusionMode::kBaseline, FusionMode::kSparse, FusionMode::kWeighted}) {
        PipelineConfig mode_cfg = cfg;
        mode_cfg.fusion = mode;
        ModelBundle bundle;
        bundle.config = mode_cfg;
        bundle.basis = art.basis;
        bundle.saliency = art.saliency;
        bundle.writer_ids = art.writer_ids;
        bundle.svms = fit_svms(art, mode, mode_cfg);
        const EvalSummary summary = summarize_test(bundle, test);
        rows.push_back({to_string(mode), summary.top1, summary.top5});
        if (log) {
            char line[128];
            std::snprintf(line, sizeof(line), "[ablation] %s top1 %.4f top5 %.4f\n",
                          to_string(mode).c_str(), summary.top1, summary.top5);
            *log << line;
        }
    }
    return rows;
}

} // namespace wid
