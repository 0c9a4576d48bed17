#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "wid/corpus.hpp"
#include "wid/imaging.hpp"

using namespace wid;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_dummy_word(const fs::path& p, std::uint8_t shade = 0) {
    GrayImage img(24, 16, 255);
    for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 20; ++x) img.at(x, y) = shade;
    write_png(p.string(), img);
}

// perimeter-based mean stroke width: 2 * area / perimeter for ribbon shapes
double measure_stroke_width(const GrayImage& img) {
    const BinaryImage mask = denoise(img, 0.8, 180);
    long area = 0, perimeter = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            ++area;
            const bool edge = x == 0 || y == 0 || x == mask.width - 1 || y == mask.height - 1 ||
                              !mask.at(x - 1, y) || !mask.at(x + 1, y) || !mask.at(x, y - 1) ||
                              !mask.at(x, y + 1);
            if (edge) ++perimeter;
        }
    if (perimeter == 0) return 0.0;
    return 2.0 * static_cast<double>(area) / static_cast<double>(perimeter);
}

} // namespace

TEST_CASE("synthetic generation is byte-identical per seed") {
    const fs::path a = fresh_dir("wid_synth_a");
    const fs::path b = fresh_dir("wid_synth_b");
    const Corpus ca = generate_synthetic(7, 3, 6, a);
    const Corpus cb = generate_synthetic(7, 3, 6, b);

    CHECK(ca.writer_ids == cb.writer_ids);
    REQUIRE(ca.train.size() == cb.train.size());
    for (const auto& item : ca.train) {
        const fs::path rel = fs::relative(item.path, a);
        CHECK(file_bytes(a / rel) == file_bytes(b / rel));
    }
    for (const auto& item : ca.test) {
        const fs::path rel = fs::relative(item.path, a);
        CHECK(file_bytes(a / rel) == file_bytes(b / rel));
    }
    CHECK(file_bytes(a / "labels.jsonl") == file_bytes(b / "labels.jsonl"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("synthetic generation emits the requested counts") {
    const fs::path dir = fresh_dir("wid_synth_counts");
    const Corpus c = generate_synthetic(3, 4, 8, dir);
    CHECK(c.writer_ids.size() == 4);
    CHECK(c.train.size() == 4 * 4);
    CHECK(c.test.size() == 4 * 4);
    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") ++files;
    CHECK(files == 32);

    // labels.jsonl matches the emitted words and their writers
    std::ifstream labels(dir / "labels.jsonl");
    int lines = 0;
    std::string line;
    while (std::getline(labels, line)) {
        const auto j = nlohmann::json::parse(line);
        const std::string writer = j.at("writer").get<std::string>();
        const fs::path p = dir / j.at("path").get<std::string>();
        CHECK(fs::exists(p));
        CHECK(p.parent_path().filename().string() == writer);
        ++lines;
    }
    CHECK(lines == 32);
    CHECK_THROWS_AS(generate_synthetic(1, 1, 8, dir), ParameterError);
    CHECK_THROWS_AS(generate_synthetic(1, 4, 2, dir), ParameterError);
    fs::remove_all(dir);
}

TEST_CASE("synthetic manifest round-trips and splits are disjoint") {
    const fs::path dir = fresh_dir("wid_synth_manifest");
    const Corpus c = generate_synthetic(11, 3, 6, dir);
    const Corpus loaded = load_synthetic_manifest(dir);
    CHECK(loaded.writer_ids == c.writer_ids);
    CHECK(loaded.train.size() == c.train.size());
    CHECK(loaded.test.size() == c.test.size());

    std::set<std::string> train_paths;
    for (const auto& it : loaded.train) train_paths.insert(it.path);
    for (const auto& it : loaded.test) CHECK_FALSE(train_paths.count(it.path));
    fs::remove_all(dir);
}

TEST_CASE("stroke width responds to the style parameter") {
    StyleParams thin = StyleParams::derive(1, 0);
    thin.stroke_width = 2.0;
    thin.wobble = 0.5;
    StyleParams thick = thin;
    thick.stroke_width = 5.0;

    double thin_width = 0.0, thick_width = 0.0;
    for (int i = 0; i < 6; ++i) {
        Rng r1 = Rng(5).fork(static_cast<std::uint64_t>(i));
        Rng r2 = Rng(5).fork(static_cast<std::uint64_t>(i));
        thin_width += measure_stroke_width(render_word(thin, r1, 5));
        thick_width += measure_stroke_width(render_word(thick, r2, 5));
    }
    thin_width /= 6.0;
    thick_width /= 6.0;
    CHECK(thick_width - thin_width >= 2.0);
}

TEST_CASE("styles are deterministic per writer and differ across writers") {
    const StyleParams a0 = StyleParams::derive(42, 0);
    const StyleParams a1 = StyleParams::derive(42, 0);
    CHECK(a0.slant == a1.slant);
    CHECK(a0.glyph_seed == a1.glyph_seed);

    const StyleParams b = StyleParams::derive(42, 1);
    CHECK(a0.glyph_seed != b.glyph_seed);
}

TEST_CASE("iam layout splitting rules") {
    const fs::path root = fresh_dir("wid_iam");
    // writer A: 3 documents -> two random ones, one per split
    for (int d = 0; d < 3; ++d) {
        fs::create_directories(root / "writerA" / ("form" + std::to_string(d)));
        for (int w = 0; w < 4; ++w)
            write_dummy_word(root / "writerA" / ("form" + std::to_string(d)) /
                             ("w" + std::to_string(w) + ".png"));
    }
    // writer B: one document of 40 words -> 20/20
    fs::create_directories(root / "writerB" / "form0");
    for (int w = 0; w < 40; ++w) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "w%02d.png", w);
        write_dummy_word(root / "writerB" / "form0" / buf);
    }

    const Corpus c = load_iam_layout(root, 123);
    CHECK(c.writer_ids == std::vector<std::string>{"writerA", "writerB"});

    int a_train = 0, a_test = 0, b_train = 0, b_test = 0;
    std::set<std::string> a_train_docs, a_test_docs;
    for (const auto& it : c.train) {
        if (it.writer_id == "writerA") {
            ++a_train;
            a_train_docs.insert(fs::path(it.path).parent_path().filename().string());
        } else {
            ++b_train;
        }
    }
    for (const auto& it : c.test) {
        if (it.writer_id == "writerA") {
            ++a_test;
            a_test_docs.insert(fs::path(it.path).parent_path().filename().string());
        } else {
            ++b_test;
        }
    }
    CHECK(a_train == 4); // exactly one document per split
    CHECK(a_test == 4);
    CHECK(a_train_docs.size() == 1);
    CHECK(a_test_docs.size() == 1);
    CHECK(*a_train_docs.begin() != *a_test_docs.begin());
    CHECK(b_train == 20);
    CHECK(b_test == 20);

    // same seed gives the identical split
    const Corpus c2 = load_iam_layout(root, 123);
    CHECK(c2.train.size() == c.train.size());
    for (std::size_t i = 0; i < c.train.size(); ++i) CHECK(c2.train[i].path == c.train[i].path);

    CHECK_THROWS_AS(load_iam_layout(root / "no_such_dir", 1), IngestionError);
    fs::remove_all(root);
}

TEST_CASE("cvl layout uses english documents three-to-one") {
    const fs::path root = fresh_dir("wid_cvl");
    // writer with 4 English and 1 German documents
    for (int d = 0; d < 4; ++d) {
        const fs::path doc = root / "w1" / (std::to_string(d) + "_en");
        fs::create_directories(doc);
        for (int w = 0; w < 3; ++w) write_dummy_word(doc / ("x" + std::to_string(w) + ".png"));
    }
    fs::create_directories(root / "w1" / "9_de");
    write_dummy_word(root / "w1" / "9_de" / "german.png");
    // writer with only 2 English documents -> fallback with warning
    for (int d = 0; d < 2; ++d) {
        const fs::path doc = root / "w2" / (std::to_string(d) + "_en");
        fs::create_directories(doc);
        for (int w = 0; w < 3; ++w) write_dummy_word(doc / ("x" + std::to_string(w) + ".png"));
    }

    const Corpus c = load_cvl_layout(root);
    CHECK(c.writer_ids == std::vector<std::string>{"w1", "w2"});
    int w1_train = 0, w1_test = 0;
    for (const auto& it : c.train) {
        CHECK(it.path.find("_de") == std::string::npos); // German excluded
        if (it.writer_id == "w1") ++w1_train;
    }
    for (const auto& it : c.test)
        if (it.writer_id == "w1") ++w1_test;
    CHECK(w1_train == 9); // 3 documents of 3 words
    CHECK(w1_test == 3);
    CHECK_FALSE(c.warnings.empty());

    // malformed tree: writer without any English document
    fs::create_directories(root / "w3" / "0_de");
    write_dummy_word(root / "w3" / "0_de" / "only.png");
    CHECK_THROWS_AS(load_cvl_layout(root), IngestionError);
    fs::remove_all(root);
}

TEST_CASE("omniglot layout groups by character") {
    const fs::path root = fresh_dir("wid_omniglot");
    for (const std::string alphabet : {"Alpha", "Beta"})
        for (int ch = 0; ch < 2; ++ch) {
            const fs::path dir = root / alphabet / ("char" + std::to_string(ch));
            fs::create_directories(dir);
            for (int i = 0; i < 3; ++i) write_dummy_word(dir / (std::to_string(i) + ".png"));
        }
    const LabeledImageSet set = load_omniglot_layout(root);
    CHECK(set.class_names.size() == 4);
    CHECK(set.paths.size() == 12);
    for (int label : set.labels) {
        CHECK(label >= 0);
        CHECK(label < 4);
    }
    fs::remove_all(root);
}
