#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "wid/common.hpp"
#include "wid/image.hpp"
#include "wid/image_io.hpp"
#include "wid/rng.hpp"

namespace wid {

namespace fs = std::filesystem;

struct CorpusItem {
    std::string writer_id;
    std::string path;
};

struct Corpus {
    std::vector<std::string> writer_ids; // sorted, enrollment order
    std::vector<CorpusItem> train;
    std::vector<CorpusItem> test;
    std::uint64_t seed = 0;
    std::string layout;
    std::vector<std::string> warnings;

    int writer_index(const std::string& id) const {
        const auto it = std::lower_bound(writer_ids.begin(), writer_ids.end(), id);
        if (it == writer_ids.end() || *it != id) throw CorpusError("unknown writer id: " + id);
        return static_cast<int>(it - writer_ids.begin());
    }

    void validate() const {
        std::map<std::string, std::pair<int, int>> counts;
        for (const auto& it : train) counts[it.writer_id].first++;
        for (const auto& it : test) counts[it.writer_id].second++;
        for (const auto& id : writer_ids) {
            const auto [tr, te] = counts[id];
            if (tr < 1 || te < 1)
                throw CorpusError("writer " + id + " lacks a train or test item after splitting");
        }
        for (const auto& it : train)
            for (const auto& other : test)
                if (it.path == other.path)
                    throw CorpusError("split leak: " + it.path + " appears in both splits");
    }
};

// Deterministic per-writer style; the glyph seed gives each writer a private
// letterform alphabet.
struct StyleParams {
    double slant = 0.0;        // radians
    double stroke_width = 2.0; // pixels
    double jitter = 1.0;       // control-point noise, pixels
    std::uint64_t glyph_seed = 0;
    double wobble = 1.0;       // baseline wobble amplitude, pixels

    // Styles sit on a coarse grid of slant/width/wobble levels (plus a tiny
    // in-cell offset), which keeps writer pairs well separated in style space
    // far more reliably than independent continuous draws.
    static StyleParams derive(std::uint64_t corpus_seed, int writer_index) {
        Rng rng = Rng(corpus_seed).fork(0x57415249ULL + static_cast<std::uint64_t>(writer_index));
        static constexpr double kSlants[] = {-0.30, -0.20, -0.10, 0.0, 0.10, 0.20, 0.30};
        static constexpr double kWidths[] = {1.6, 2.4, 3.2, 4.0, 4.8};
        static constexpr double kWobbles[] = {0.0, 1.0, 2.0};
        StyleParams s;
        s.slant = kSlants[rng.next_below(7)] + rng.next_uniform(-0.02, 0.02);
        s.stroke_width = kWidths[rng.next_below(5)] + rng.next_uniform(-0.15, 0.15);
        s.jitter = rng.next_uniform(0.5, 1.4);
        s.glyph_seed = rng.next_u64();
        s.wobble = kWobbles[rng.next_below(3)] + rng.next_uniform(0.0, 0.4);
        return s;
    }
};

namespace synth_detail {

struct Stroke {
    std::vector<std::pair<double, double>> points; // in glyph-local [0,1]^2
};

struct Glyph {
    std::vector<Stroke> strokes;
};

// 2-3 smooth strokes through random control points, Catmull-Rom sampled
inline Glyph make_glyph(Rng& rng) {
    Glyph g;
    const int n_strokes = rng.next_int(1, 2);
    for (int s = 0; s < n_strokes; ++s) {
        const int n_ctrl = rng.next_int(3, 5);
        std::vector<std::pair<double, double>> ctrl(static_cast<std::size_t>(n_ctrl));
        for (auto& [x, y] : ctrl) {
            x = rng.next_double();
            y = rng.next_double();
        }
        Stroke stroke;
        // Catmull-Rom through the control points, 12 samples per segment
        for (int i = 0; i + 1 < n_ctrl; ++i) {
            const auto p0 = ctrl[static_cast<std::size_t>(std::max(i - 1, 0))];
            const auto p1 = ctrl[static_cast<std::size_t>(i)];
            const auto p2 = ctrl[static_cast<std::size_t>(i + 1)];
            const auto p3 = ctrl[static_cast<std::size_t>(std::min(i + 2, n_ctrl - 1))];
            for (int t = 0; t < 12; ++t) {
                const double u = t / 12.0;
                const double u2 = u * u, u3 = u2 * u;
                const double cx = 0.5 * ((2.0 * p1.first) + (-p0.first + p2.first) * u +
                                         (2.0 * p0.first - 5.0 * p1.first + 4.0 * p2.first - p3.first) * u2 +
                                         (-p0.first + 3.0 * p1.first - 3.0 * p2.first + p3.first) * u3);
                const double cy = 0.5 * ((2.0 * p1.second) + (-p0.second + p2.second) * u +
                                         (2.0 * p0.second - 5.0 * p1.second + 4.0 * p2.second - p3.second) * u2 +
                                         (-p0.second + 3.0 * p1.second - 3.0 * p2.second + p3.second) * u3);
                stroke.points.emplace_back(cx, cy);
            }
        }
        stroke.points.push_back(ctrl.back());
        g.strokes.push_back(std::move(stroke));
    }
    return g;
}

inline std::vector<Glyph> writer_alphabet(std::uint64_t glyph_seed, int count = 14) {
    Rng rng(glyph_seed);
    std::vector<Glyph> glyphs;
    glyphs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) glyphs.push_back(make_glyph(rng));
    return glyphs;
}

// stamp a filled disk on the supersampled canvas
inline void stamp(std::vector<double>& canvas, int w, int h, double cx, double cy, double r) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r)));
    const double r2 = r * r;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r2) canvas[static_cast<std::size_t>(y) * w + x] = 1.0;
        }
}

} // namespace synth_detail

// Renders a pseudo-word of n_glyphs letterforms in the writer's style. Ink is
// dark on white; the 2x supersampled strokes give soft anti-aliased edges.
inline GrayImage render_word(const StyleParams& style, Rng& word_rng, int n_glyphs) {
    using namespace synth_detail;
    const auto alphabet = writer_alphabet(style.glyph_seed);

    const int glyph_h = 44, glyph_w = 28, spacing = 5, margin = 14;
    const int width = margin * 2 + n_glyphs * (glyph_w + spacing) - spacing;
    const int height = margin * 2 + glyph_h;
    const int ss = 2; // supersampling factor
    const int sw = width * ss, sh = height * ss;
    std::vector<double> canvas(static_cast<std::size_t>(sw) * sh, 0.0);

    const double phase = word_rng.next_uniform(0.0, 6.283185307179586);
    const double radius = 0.5 * style.stroke_width * ss;
    const double tan_slant = std::tan(style.slant);
    const double baseline = margin + glyph_h;

    for (int gi = 0; gi < n_glyphs; ++gi) {
        const Glyph& glyph = alphabet[word_rng.next_below(alphabet.size())];
        const double gx0 = margin + gi * (glyph_w + spacing);
        for (const Stroke& stroke : glyph.strokes) {
            // per-instance jitter on the whole stroke plus light per-point noise
            const double ox = word_rng.next_gaussian() * style.jitter;
            const double oy = word_rng.next_gaussian() * style.jitter;
            std::pair<double, double> prev{-1.0, -1.0};
            for (const auto& [ux, uy] : stroke.points) {
                double x = gx0 + ux * glyph_w + ox;
                double y = margin + uy * glyph_h + oy;
                x += tan_slant * (baseline - y);                     // shear
                y += style.wobble * std::sin(x * 0.05 + phase);      // baseline wobble
                x *= ss;
                y *= ss;
                if (prev.first >= 0.0) {
                    const double dist = std::hypot(x - prev.first, y - prev.second);
                    const int steps = std::max(1, static_cast<int>(dist / (0.5 * ss)));
                    for (int s = 1; s <= steps; ++s) {
                        const double t = static_cast<double>(s) / steps;
                        stamp(canvas, sw, sh, prev.first + (x - prev.first) * t,
                              prev.second + (y - prev.second) * t, radius);
                    }
                } else {
                    stamp(canvas, sw, sh, x, y, radius);
                }
                prev = {x, y};
            }
        }
    }

    GrayImage out(width, height, 255);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double ink = 0.0;
            for (int dy = 0; dy < ss; ++dy)
                for (int dx = 0; dx < ss; ++dx)
                    ink += canvas[static_cast<std::size_t>(y * ss + dy) * sw + (x * ss + dx)];
            ink /= ss * ss;
            out.at(x, y) = clamp_u8(255.0 - ink * 235.0);
        }
    return out;
}

// Writes PNG word images plus labels.jsonl and corpus.json under out; the
// split takes the first half of each writer's words for training. Fully
// deterministic in (seed, writers, words_per_writer).
inline Corpus generate_synthetic(std::uint64_t seed, int writers, int words_per_writer,
                                 const fs::path& out) {
    if (writers < 2) throw ParameterError("generate_synthetic: need at least 2 writers");
    if (words_per_writer < 4) throw ParameterError("generate_synthetic: need at least 4 words per writer");
    fs::create_directories(out);

    Corpus corpus;
    corpus.seed = seed;
    corpus.layout = "synthetic";

    std::ofstream labels(out / "labels.jsonl");
    if (!labels) throw IoError("cannot write labels.jsonl");

    for (int w = 0; w < writers; ++w) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "w%03d", w);
        const std::string writer_id = buf;
        corpus.writer_ids.push_back(writer_id);
        fs::create_directories(out / writer_id);
        const StyleParams style = StyleParams::derive(seed, w);

        for (int i = 0; i < words_per_writer; ++i) {
            Rng word_rng = Rng(seed).fork(0x574f5244ULL + static_cast<std::uint64_t>(w) * 100000ULL +
                                          static_cast<std::uint64_t>(i));
            const int n_glyphs = word_rng.next_int(3, 7);
            const GrayImage img = render_word(style, word_rng, n_glyphs);
            std::snprintf(buf, sizeof(buf), "word_%03d.png", i);
            const fs::path rel = fs::path(writer_id) / buf;
            write_png((out / rel).string(), img);

            nlohmann::json line;
            line["path"] = rel.generic_string();
            line["writer"] = writer_id;
            line["word"] = i;
            labels << line.dump() << "\n";

            CorpusItem item{writer_id, (out / rel).generic_string()};
            (i < words_per_writer / 2 ? corpus.train : corpus.test).push_back(item);
        }
    }
    labels.close();
    corpus.validate();

    nlohmann::json manifest;
    manifest["layout"] = corpus.layout;
    manifest["seed"] = corpus.seed;
    manifest["writers"] = corpus.writer_ids;
    auto dump_items = [&](const std::vector<CorpusItem>& items) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& it : items) {
            nlohmann::json rec;
            rec["writer"] = it.writer_id;
            rec["path"] = fs::relative(it.path, out).generic_string();
            arr.push_back(rec);
        }
        return arr;
    };
    manifest["train"] = dump_items(corpus.train);
    manifest["test"] = dump_items(corpus.test);
    std::ofstream mf(out / "corpus.json");
    mf << manifest.dump(2) << "\n";
    return corpus;
}

// Reads back a synthetic corpus manifest written by generate_synthetic.
inline Corpus load_synthetic_manifest(const fs::path& root) {
    std::ifstream f(root / "corpus.json");
    if (!f) throw IngestionError("missing corpus.json under " + root.string(), {root.string()});
    nlohmann::json j = nlohmann::json::parse(f);
    Corpus corpus;
    corpus.layout = j.at("layout").get<std::string>();
    corpus.seed = j.at("seed").get<std::uint64_t>();
    corpus.writer_ids = j.at("writers").get<std::vector<std::string>>();
    auto read_items = [&](const nlohmann::json& arr, std::vector<CorpusItem>& out_items) {
        for (const auto& rec : arr)
            out_items.push_back({rec.at("writer").get<std::string>(),
                                 (root / rec.at("path").get<std::string>()).generic_string()});
    };
    read_items(j.at("train"), corpus.train);
    read_items(j.at("test"), corpus.test);
    corpus.validate();
    return corpus;
}

namespace corpus_detail {

inline bool is_image(const fs::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".png" || ext == ".PNG" || ext == ".pgm" || ext == ".PGM";
}

inline std::vector<std::string> sorted_image_files(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path().generic_string());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace corpus_detail

// IAM-style tree: root/<writer>/<form>/<word images>. Writers holding two or
// more forms contribute one random form to each split (seeded); single-form
// writers have their word list halved, first half to training.
inline Corpus load_iam_layout(const fs::path& root, std::uint64_t seed) {
    using namespace corpus_detail;
    if (!fs::is_directory(root))
        throw IngestionError("IAM root is not a directory: " + root.string(), {root.string()});
    Corpus corpus;
    corpus.layout = "iam";
    corpus.seed = seed;

    std::vector<std::string> offending;
    for (const fs::path& writer_dir : sorted_subdirs(root)) {
        const std::string writer_id = writer_dir.filename().string();
        std::vector<std::vector<std::string>> docs;
        for (const fs::path& doc : sorted_subdirs(writer_dir)) {
            auto words = sorted_image_files(doc);
            if (!words.empty()) docs.push_back(std::move(words));
        }
        if (docs.empty()) {
            offending.push_back(writer_dir.generic_string());
            continue;
        }
        if (docs.size() >= 2) {
            std::vector<std::size_t> order(docs.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng rng = Rng(seed).fork(std::hash<std::string>{}(writer_id));
            rng.shuffle(order);
            corpus.writer_ids.push_back(writer_id);
            for (const std::string& p : docs[order[0]]) corpus.train.push_back({writer_id, p});
            for (const std::string& p : docs[order[1]]) corpus.test.push_back({writer_id, p});
        } else {
            const auto& words = docs[0];
            if (words.size() < 2) {
                corpus.warnings.push_back("writer " + writer_id + " skipped: single word");
                continue;
            }
            corpus.writer_ids.push_back(writer_id);
            const std::size_t half = (words.size() + 1) / 2;
            for (std::size_t i = 0; i < words.size(); ++i)
                (i < half ? corpus.train : corpus.test).push_back({writer_id, words[i]});
        }
    }
    if (!offending.empty())
        throw IngestionError("IAM layout: writers without readable documents", offending);
    if (corpus.writer_ids.empty())
        throw IngestionError("IAM layout: no writers found under " + root.string(), {root.string()});
    std::sort(corpus.writer_ids.begin(), corpus.writer_ids.end());
    corpus.validate();
    return corpus;
}

// CVL-style tree: root/<writer>/<doc>_<lang>/<word images>; only English
// documents are used, three for training and one for testing. Writers with
// fewer English documents fall back to a proportional 3:1 split.
inline Corpus load_cvl_layout(const fs::path& root) {
    using namespace corpus_detail;
    if (!fs::is_directory(root))
        throw IngestionError("CVL root is not a directory: " + root.string(), {root.string()});
    Corpus corpus;
    corpus.layout = "cvl";

    std::vector<std::string> offending;
    for (const fs::path& writer_dir : sorted_subdirs(root)) {
        const std::string writer_id = writer_dir.filename().string();
        std::vector<std::vector<std::string>> english;
        for (const fs::path& doc : sorted_subdirs(writer_dir)) {
            const std::string name = doc.filename().string();
            if (name.size() >= 3 && name.compare(name.size() - 3, 3, "_en") == 0) {
                auto words = sorted_image_files(doc);
                if (!words.empty()) english.push_back(std::move(words));
            }
        }
        if (english.empty()) {
            offending.push_back(writer_dir.generic_string());
            continue;
        }
        if (english.size() >= 4) {
            corpus.writer_ids.push_back(writer_id);
            for (int d = 0; d < 3; ++d)
                for (const std::string& p : english[static_cast<std::size_t>(d)])
                    corpus.train.push_back({writer_id, p});
            for (const std::string& p : english[3]) corpus.test.push_back({writer_id, p});
        } else if (english.size() >= 2) {
            corpus.warnings.push_back("writer " + writer_id + ": only " +
                                      std::to_string(english.size()) +
                                      " English documents, proportional 3:1 fallback");
            corpus.writer_ids.push_back(writer_id);
            for (std::size_t d = 0; d + 1 < english.size(); ++d)
                for (const std::string& p : english[d]) corpus.train.push_back({writer_id, p});
            for (const std::string& p : english.back()) corpus.test.push_back({writer_id, p});
        } else {
            const auto& words = english[0];
            if (words.size() < 2) {
                corpus.warnings.push_back("writer " + writer_id + " skipped: single word");
                continue;
            }
            corpus.warnings.push_back("writer " + writer_id +
                                      ": one English document, word-level 3:1 fallback");
            corpus.writer_ids.push_back(writer_id);
            const std::size_t cut = std::max<std::size_t>(1, (words.size() * 3 + 3) / 4);
            for (std::size_t i = 0; i < words.size(); ++i)
                (i < std::min(cut, words.size() - 1) ? corpus.train : corpus.test)
                    .push_back({writer_id, words[i]});
        }
    }
    if (!offending.empty())
        throw IngestionError("CVL layout: writers without English documents", offending);
    if (corpus.writer_ids.empty())
        throw IngestionError("CVL layout: no writers found under " + root.string(), {root.string()});
    std::sort(corpus.writer_ids.begin(), corpus.writer_ids.end());
    corpus.validate();
    return corpus;
}

// Omniglot-style tree: root/<alphabet>/<character>/<images>; each character
// directory is one class for writer-independent training.
struct LabeledImageSet {
    std::vector<std::string> paths;
    std::vector<int> labels;
    std::vector<std::string> class_names;
};

inline LabeledImageSet load_omniglot_layout(const fs::path& root) {
    using namespace corpus_detail;
    if (!fs::is_directory(root))
        throw IngestionError("Omniglot root is not a directory: " + root.string(), {root.string()});
    LabeledImageSet set;
    for (const fs::path& alphabet : sorted_subdirs(root)) {
        for (const fs::path& character : sorted_subdirs(alphabet)) {
            const auto files = sorted_image_files(character);
            if (files.empty()) continue;
            const int cls = static_cast<int>(set.class_names.size());
            set.class_names.push_back(alphabet.filename().string() + "/" +
                                      character.filename().string());
            for (const std::string& p : files) {
                set.paths.push_back(p);
                set.labels.push_back(cls);
            }
        }
    }
    if (set.class_names.empty())
        throw IngestionError("Omniglot layout: no classes under " + root.string(), {root.string()});
    return set;
}

} // namespace wid
