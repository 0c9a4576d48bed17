// wid — offline writer identification from word images.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 corpus/ingestion
// error, 4 segmentation failure, 5 patch extraction failure, 6 training
// failure, 7 bundle integrity failure, 8 identification failure,
// 9 evaluation failure, 10 I/O failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "wid/pipeline.hpp"
#include "wid/reports.hpp"

namespace {

namespace fs = std::filesystem;
using namespace wid;

constexpr int kExitUsage = 2;
constexpr int kExitIngestion = 3;
constexpr int kExitSegment = 4;
constexpr int kExitPatches = 5;
constexpr int kExitTrain = 6;
constexpr int kExitIntegrity = 7;
constexpr int kExitIdentify = 8;
constexpr int kExitEval = 9;
constexpr int kExitIo = 10;

int map_exit(const std::exception& e, int stage_code) {
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ParameterError*>(&e))
        return kExitUsage;
    if (dynamic_cast<const IngestionError*>(&e) || dynamic_cast<const CorpusError*>(&e))
        return kExitIngestion;
    if (dynamic_cast<const IntegrityError*>(&e)) return kExitIntegrity;
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    return stage_code;
}

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    int threads = -1;
    long long seed = -1;

    PipelineConfig build() const {
        PipelineConfig cfg;
        if (!config_file.empty()) cfg = PipelineConfig::from_file(config_file);
        for (const std::string& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (threads >= 0) cfg.threads = static_cast<unsigned>(threads);
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.validate();
        return cfg;
    }
};

std::vector<std::string> collect_images(const fs::path& input) {
    std::vector<std::string> files;
    if (fs::is_regular_file(input)) {
        files.push_back(input.generic_string());
    } else if (fs::is_directory(input)) {
        for (const auto& e : fs::recursive_directory_iterator(input)) {
            if (!e.is_regular_file()) continue;
            const std::string ext = e.path().extension().string();
            if (ext == ".png" || ext == ".PNG" || ext == ".pgm" || ext == ".PGM")
                files.push_back(e.path().generic_string());
        }
        std::sort(files.begin(), files.end());
    } else {
        throw IoError("input not found: " + input.string());
    }
    if (files.empty()) throw IoError("no images under " + input.string());
    return files;
}

Corpus load_corpus(const std::string& layout, const fs::path& root, const PipelineConfig& cfg) {
    if (layout == "synthetic") return load_synthetic_manifest(root);
    if (layout == "iam") return load_iam_layout(root, cfg.seed);
    if (layout == "cvl") return load_cvl_layout(root);
    throw UsageError("unknown layout '" + layout + "' (expected synthetic, iam or cvl)");
}

fs::path resolve_bundle_dir(const std::string& given) {
    fs::path p(given);
    if (fs::is_directory(p)) return p;
    if (p.is_relative()) {
        if (const char* cache = std::getenv("WID_BUNDLE_DIR")) {
            const fs::path alt = fs::path(cache) / p;
            if (fs::is_directory(alt)) return alt;
        }
    }
    throw IntegrityError("bundle directory not found: " + given);
}

int cmd_synth(const CommonOpts& common, const std::string& out, int writers, int words) {
    const PipelineConfig cfg = common.build();
    try {
        const Corpus corpus = generate_synthetic(cfg.seed, writers, words, out);
        std::printf("synth: %zu writers, %zu train + %zu test words under %s\n",
                    corpus.writer_ids.size(), corpus.train.size(), corpus.test.size(),
                    out.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "synth failed: %s\n", e.what());
        return map_exit(dynamic_cast<const std::exception&>(e), kExitIngestion);
    }
}

int cmd_segment(const CommonOpts& common, const std::string& input, const std::string& out) {
    const PipelineConfig cfg = common.build();
    try {
        fs::create_directories(out);
        const GrayImage gray = read_gray(input);
        const BinaryImage mask = denoise(gray, cfg.imaging_sigma, cfg.imaging_threshold);
        const auto regions = segment_words(mask, cfg.imaging_log_sigma, cfg.imaging_min_area, &gray);
        for (std::size_t i = 0; i < regions.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "region_%03zu.png", i);
            write_png((fs::path(out) / name).string(), regions[i].image);
        }
        write_regions_jsonl(fs::path(out) / "regions.jsonl", input, regions);
        if (regions.empty()) std::fprintf(stderr, "segment: no word regions found in %s\n", input.c_str());
        std::printf("segment: %zu regions -> %s\n", regions.size(), out.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "segment failed: %s\n", e.what());
        return map_exit(e, kExitSegment);
    }
}

int cmd_patches(const CommonOpts& common, const std::string& input, const std::string& out) {
    const PipelineConfig cfg = common.build();
    try {
        fs::create_directories(out);
        std::ofstream manifest(fs::path(out) / "manifest.jsonl", std::ios::binary);
        if (!manifest) throw IoError("cannot write patch manifest");
        int total = 0;
        for (const std::string& file : collect_images(input)) {
            const std::string word_id = fs::path(file).stem().string();
            const GrayImage img = read_gray(file);
            std::vector<std::pair<Keypoint, NormalizedPatch>> patches;
            if (img.width >= 16 && img.height >= 16)
                patches = extract_word_patches(img, cfg.sift, word_id);
            if (patches.empty())
                std::fprintf(stderr, "patches: no keypoints in %s\n", file.c_str());
            for (std::size_t k = 0; k < patches.size(); ++k) {
                char name[256];
                std::snprintf(name, sizeof(name), "%s_%zu.png", word_id.c_str(), k);
                write_png((fs::path(out) / name).string(), patches[k].second.image);
                write_patch_manifest_line(manifest, word_id, static_cast<int>(k),
                                          patches[k].first, name);
                ++total;
            }
        }
        std::printf("patches: %d patches -> %s\n", total, out.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "patches failed: %s\n", e.what());
        return map_exit(e, kExitPatches);
    }
}

int cmd_train(const CommonOpts& common, const std::string& corpus_dir, const std::string& layout,
              const std::string& bundle_dir, bool ablation) {
    PipelineConfig cfg;
    try {
        cfg = common.build();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "train failed: %s\n", e.what());
        return kExitUsage;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const Corpus corpus = load_corpus(layout, corpus_dir, cfg);
        for (const std::string& w : corpus.warnings) std::fprintf(stderr, "train: %s\n", w.c_str());

        PipelineArtifacts art = fit_artifacts(corpus, cfg, &std::cerr);
        std::vector<std::string> warnings;
        std::vector<WriterModel> svms = fit_svms(art, cfg.fusion, cfg, &warnings);
        for (const std::string& w : warnings) std::fprintf(stderr, "train: %s\n", w.c_str());

        if (ablation) {
            const std::vector<AblationRow> rows = run_ablation(art, corpus, cfg, &std::cerr);
            fs::create_directories(bundle_dir);
            write_ablation_reports(bundle_dir, rows);
        }

        ModelBundle bundle = assemble_bundle(std::move(art), std::move(svms), cfg);
        save_bundle(bundle, bundle_dir);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "train: total %.1f s\n", secs);
        std::printf("train: bundle written to %s (%zu writers, D=%d, L=%d, mode=%s)\n",
                    bundle_dir.c_str(), bundle.writer_ids.size(), bundle.net.embed_dim,
                    bundle.basis.components(), to_string(cfg.fusion).c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "train failed: %s\n", e.what());
        // partial-bundle cleanup: a bundle without a manifest is unusable
        std::error_code ec;
        if (!fs::exists(fs::path(bundle_dir) / "manifest.json"))
            fs::remove_all(bundle_dir, ec);
        return map_exit(e, kExitTrain);
    }
}

int cmd_identify(const CommonOpts& common, const std::string& bundle_dir, const std::string& input,
                 const std::string& out, int topk, bool page) {
    try {
        ModelBundle bundle = load_bundle(resolve_bundle_dir(bundle_dir));
        if (common.threads >= 0) bundle.config.threads = static_cast<unsigned>(common.threads);
        fs::create_directories(out);

        std::vector<WordResult> results;
        std::vector<ScoreVector> scored;
        for (const std::string& file : collect_images(input)) {
            const std::string word_id = fs::path(file).stem().string();
            WordResult r;
            try {
                const GrayImage img = read_gray(file);
                r = identify_word(bundle, img, word_id, file);
            } catch (const IoError& e) {
                std::fprintf(stderr, "identify: skipping %s: %s\n", file.c_str(), e.what());
                r.word_id = word_id;
                r.path = file;
                r.no_evidence = true;
            }
            if (r.no_evidence)
                std::fprintf(stderr, "identify: no evidence for %s\n", r.word_id.c_str());
            else
                scored.push_back(r.scores);
            results.push_back(std::move(r));
        }

        WordResult page_result;
        if (page && !scored.empty()) {
            page_result.scores = fuse_page(scored, "page");
            page_result.pred = predict(page_result.scores);
            page_result.word_id = "page";
        } else {
            page_result.no_evidence = true;
        }

        write_word_csv(fs::path(out) / "identify.csv", results, bundle.writer_ids);
        write_identify_summary(fs::path(out) / "identify.json", results, bundle.writer_ids,
                               topk > 0 ? topk : 5, page ? &page_result : nullptr);
        std::printf("identify: %zu items -> %s\n", results.size(), out.c_str());
        if (page && !page_result.no_evidence)
            std::printf("identify: page top-1 = %s\n",
                        bundle.writer_ids[static_cast<std::size_t>(page_result.pred.top)].c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "identify failed: %s\n", e.what());
        return map_exit(e, kExitIdentify);
    }
}

int cmd_eval(const CommonOpts& common, const std::string& bundle_dir, const std::string& corpus_dir,
             const std::string& layout, const std::string& out) {
    try {
        ModelBundle bundle = load_bundle(resolve_bundle_dir(bundle_dir));
        if (common.threads >= 0) bundle.config.threads = static_cast<unsigned>(common.threads);
        const Corpus corpus = load_corpus(layout, corpus_dir, bundle.config);
        if (corpus.test.empty()) throw CorpusError("eval: empty test split");

        std::vector<WordResult> results;
        const EvalSummary summary = evaluate_bundle(bundle, corpus, &results, &std::cerr);
        fs::create_directories(out);
        write_word_csv(fs::path(out) / "eval_words.csv", results, bundle.writer_ids);
        write_eval_summary(fs::path(out) / "eval_summary.json", summary);
        std::printf("eval: %d words, top1 %.4f, top5 %.4f -> %s\n", summary.words, summary.top1,
                    summary.top5, out.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "eval failed: %s\n", e.what());
        return map_exit(e, kExitEval);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"wid — offline writer identification from handwritten word images"};
    app.require_subcommand(1);
    app.fallthrough(); // global options may appear after the subcommand

    CommonOpts common;
    app.add_option("--config", common.config_file, "flat key=value configuration file");
    app.add_option("--set", common.sets, "override a config key, e.g. --set net.epochs=3");
    app.add_option("--threads", common.threads, "worker thread cap (0 = hardware)");
    app.add_option("--seed", common.seed, "override the run seed");

    auto* synth = app.add_subcommand("synth", "generate a synthetic handwriting corpus");
    std::string synth_out;
    int synth_writers = 10, synth_words = 40;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--writers", synth_writers, "number of writers");
    synth->add_option("--words", synth_words, "words per writer");

    auto* segment = app.add_subcommand("segment", "split a page image into word regions");
    std::string seg_input, seg_out;
    segment->add_option("--input", seg_input, "page image (PNG or PGM)")->required();
    segment->add_option("--out", seg_out, "output directory")->required();

    auto* patches = app.add_subcommand("patches", "extract normalized SIFT patches");
    std::string patch_input, patch_out;
    patches->add_option("--input", patch_input, "word image or directory")->required();
    patches->add_option("--out", patch_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a writer identification bundle");
    std::string train_corpus, train_layout = "synthetic", train_bundle;
    bool train_ablation = false;
    train->add_option("--corpus", train_corpus, "corpus root directory")->required();
    train->add_option("--layout", train_layout, "corpus layout: synthetic, iam or cvl");
    train->add_option("--bundle", train_bundle, "output bundle directory")->required();
    train->add_flag("--ablation", train_ablation, "also evaluate baseline/sparse/weighted modes");

    auto* identify = app.add_subcommand("identify", "rank writers for word images");
    std::string id_bundle, id_input, id_out;
    int id_topk = 5;
    bool id_page = false;
    identify->add_option("--bundle", id_bundle, "model bundle directory")->required();
    identify->add_option("--input", id_input, "word image or directory")->required();
    identify->add_option("--out", id_out, "report directory")->required();
    identify->add_option("--topk", id_topk, "ranking depth in the report");
    identify->add_flag("--page", id_page, "treat all inputs as one page and fuse the scores");

    auto* eval = app.add_subcommand("eval", "evaluate a bundle on a labeled test split");
    std::string eval_bundle, eval_corpus, eval_layout = "synthetic", eval_out;
    eval->add_option("--bundle", eval_bundle, "model bundle directory")->required();
    eval->add_option("--corpus", eval_corpus, "corpus root directory")->required();
    eval->add_option("--layout", eval_layout, "corpus layout: synthetic, iam or cvl");
    eval->add_option("--out", eval_out, "report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(common, synth_out, synth_writers, synth_words);
        if (segment->parsed()) return cmd_segment(common, seg_input, seg_out);
        if (patches->parsed()) return cmd_patches(common, patch_input, patch_out);
        if (train->parsed())
            return cmd_train(common, train_corpus, train_layout, train_bundle, train_ablation);
        if (identify->parsed())
            return cmd_identify(common, id_bundle, id_input, id_out, id_topk, id_page);
        if (eval->parsed())
            return cmd_eval(common, eval_bundle, eval_corpus, eval_layout, eval_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return map_exit(e, kExitUsage);
    }
    return kExitUsage;
}
