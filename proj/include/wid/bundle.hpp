#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wid/common.hpp"
#include "wid/embednet.hpp"
#include "wid/saliency.hpp"
#include "wid/sparsepca.hpp"
#include "wid/svm.hpp"

namespace wid {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kBundleFormatVersion = "1.0";

enum class FusionMode { kBaseline, kSparse, kWeighted };

inline std::string to_string(FusionMode m) {
    switch (m) {
        case FusionMode::kBaseline: return "baseline";
        case FusionMode::kSparse: return "sparse";
        default: return "weighted";
    }
}

inline FusionMode fusion_mode_from(const std::string& s) {
    if (s == "baseline") return FusionMode::kBaseline;
    if (s == "sparse") return FusionMode::kSparse;
    if (s == "weighted") return FusionMode::kWeighted;
    throw ParameterError("unknown fusion mode: " + s);
}

// Every tunable of the pipeline, parsed from flat key=value text. The
// rendered form is embedded verbatim in each bundle.
struct PipelineConfig {
    std::uint64_t seed = 7;
    unsigned threads = 0; // 0: hardware concurrency

    double imaging_sigma = 1.0;
    int imaging_threshold = 180;
    double imaging_log_sigma = 6.0;
    int imaging_min_area = 30;

    SiftParams sift; // octaves 4, scales 3, sigma 1.6, contrast 0.03, edge 10, size_factor 12

    int embed_dim = 256;
    double margin = 0.2;
    int epochs = 2;
    int batch_size = 16;
    double learning_rate = 0.001;
    int triplets_per_epoch = 0; // 0: one per training patch
    LossKind loss = LossKind::kTriplet;

    int spca_components = 0;  // 0: min(64, embed_dim / 4)
    double spca_lambda = 1e-4;
    double spca_lambda1 = -1.0; // < 0: grid selection
    int spca_sample = 0;        // 0: all training fragments

    double saliency_epsilon = 1e-6;
    WeightMode weight_mode = WeightMode::kInverse;

    SvmGrid svm;
    FusionMode fusion = FusionMode::kWeighted;

    int effective_components() const {
        return spca_components > 0 ? spca_components : std::min(64, embed_dim / 4);
    }

    void set(const std::string& key, const std::string& value);
    std::string to_text() const;
    void validate() const;

    static PipelineConfig from_text(const std::string& text);
    static PipelineConfig from_file(const std::filesystem::path& path);
};

namespace config_detail {

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw UsageError("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

inline long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long i = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw UsageError("config: bad integer value for " + key + ": '" + v + "'");
    }
}

inline std::vector<double> parse_grid(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "scale")
            out.push_back(-1.0);
        else
            out.push_back(parse_double(key, tok));
    }
    if (out.empty()) throw UsageError("config: empty list for " + key);
    return out;
}

inline std::string grid_text(const std::vector<double>& grid) {
    std::string out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i) out += ",";
        if (grid[i] <= 0.0) {
            out += "scale";
        } else {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%g", grid[i]);
            out += buf;
        }
    }
    return out;
}

} // namespace config_detail

inline void PipelineConfig::set(const std::string& key, const std::string& value) {
    using namespace config_detail;
    if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "threads") threads = static_cast<unsigned>(parse_int(key, value));
    else if (key == "imaging.sigma") imaging_sigma = parse_double(key, value);
    else if (key == "imaging.threshold") imaging_threshold = static_cast<int>(parse_int(key, value));
    else if (key == "imaging.log_sigma") imaging_log_sigma = parse_double(key, value);
    else if (key == "imaging.min_area") imaging_min_area = static_cast<int>(parse_int(key, value));
    else if (key == "sift.octaves") sift.octaves = static_cast<int>(parse_int(key, value));
    else if (key == "sift.scales") sift.scales_per_octave = static_cast<int>(parse_int(key, value));
    else if (key == "sift.base_sigma") sift.base_sigma = parse_double(key, value);
    else if (key == "sift.contrast") sift.contrast_threshold = parse_double(key, value);
    else if (key == "sift.edge") sift.edge_threshold = parse_double(key, value);
    else if (key == "sift.size_factor") sift.size_factor = parse_double(key, value);
    else if (key == "sift.max_patches") sift.max_patches = static_cast<int>(parse_int(key, value));
    else if (key == "net.embed_dim") embed_dim = static_cast<int>(parse_int(key, value));
    else if (key == "net.margin") margin = parse_double(key, value);
    else if (key == "net.epochs") epochs = static_cast<int>(parse_int(key, value));
    else if (key == "net.batch_size") batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "net.learning_rate") learning_rate = parse_double(key, value);
    else if (key == "net.triplets_per_epoch") triplets_per_epoch = static_cast<int>(parse_int(key, value));
    else if (key == "net.loss") {
        if (value == "triplet") loss = LossKind::kTriplet;
        else if (value == "contrastive") loss = LossKind::kContrastive;
        else throw UsageError("config: net.loss must be triplet or contrastive");
    }
    else if (key == "spca.components") spca_components = static_cast<int>(parse_int(key, value));
    else if (key == "spca.lambda") spca_lambda = parse_double(key, value);
    else if (key == "spca.lambda1") spca_lambda1 = parse_double(key, value);
    else if (key == "spca.sample") spca_sample = static_cast<int>(parse_int(key, value));
    else if (key == "saliency.epsilon") saliency_epsilon = parse_double(key, value);
    else if (key == "saliency.weight_mode") {
        if (value == "inverse") weight_mode = WeightMode::kInverse;
        else if (value == "direct") weight_mode = WeightMode::kDirect;
        else throw UsageError("config: saliency.weight_mode must be inverse or direct");
    }
    else if (key == "svm.c_grid") svm.c_list = parse_grid(key, value);
    else if (key == "svm.gamma_grid") svm.gamma_list = parse_grid(key, value);
    else if (key == "svm.folds") svm.folds = static_cast<int>(parse_int(key, value));
    else if (key == "svm.kkt_tol") svm.kkt_tol = parse_double(key, value);
    else if (key == "fusion.mode") fusion = fusion_mode_from(value);
    else throw UsageError("config: unknown key '" + key + "'");
}

inline std::string PipelineConfig::to_text() const {
    using namespace config_detail;
    std::ostringstream out;
    char buf[64];
    auto put = [&](const char* key, const std::string& v) { out << key << " = " << v << "\n"; };
    auto putd = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        put(key, buf);
    };
    put("seed", std::to_string(seed));
    put("threads", std::to_string(threads));
    putd("imaging.sigma", imaging_sigma);
    put("imaging.threshold", std::to_string(imaging_threshold));
    putd("imaging.log_sigma", imaging_log_sigma);
    put("imaging.min_area", std::to_string(imaging_min_area));
    put("sift.octaves", std::to_string(sift.octaves));
    put("sift.scales", std::to_string(sift.scales_per_octave));
    putd("sift.base_sigma", sift.base_sigma);
    putd("sift.contrast", sift.contrast_threshold);
    putd("sift.edge", sift.edge_threshold);
    putd("sift.size_factor", sift.size_factor);
    put("sift.max_patches", std::to_string(sift.max_patches));
    put("net.embed_dim", std::to_string(embed_dim));
    putd("net.margin", margin);
    put("net.epochs", std::to_string(epochs));
    put("net.batch_size", std::to_string(batch_size));
    putd("net.learning_rate", learning_rate);
    put("net.triplets_per_epoch", std::to_string(triplets_per_epoch));
    put("net.loss", loss == LossKind::kTriplet ? "triplet" : "contrastive");
    put("spca.components", std::to_string(spca_components));
    putd("spca.lambda", spca_lambda);
    putd("spca.lambda1", spca_lambda1);
    put("spca.sample", std::to_string(spca_sample));
    putd("saliency.epsilon", saliency_epsilon);
    put("saliency.weight_mode", weight_mode == WeightMode::kInverse ? "inverse" : "direct");
    put("svm.c_grid", grid_text(svm.c_list));
    put("svm.gamma_grid", grid_text(svm.gamma_list));
    put("svm.folds", std::to_string(svm.folds));
    putd("svm.kkt_tol", svm.kkt_tol);
    put("fusion.mode", to_string(fusion));
    return out.str();
}

inline void PipelineConfig::validate() const {
    auto fail = [](const std::string& msg) { throw UsageError("config: " + msg); };
    if (imaging_sigma <= 0.0) fail("imaging.sigma must be > 0");
    if (imaging_threshold < 0 || imaging_threshold > 255) fail("imaging.threshold must be in [0,255]");
    if (imaging_log_sigma <= 0.0) fail("imaging.log_sigma must be > 0");
    if (imaging_min_area < 1) fail("imaging.min_area must be >= 1");
    if (sift.octaves < 1) fail("sift.octaves must be >= 1");
    if (sift.scales_per_octave < 1) fail("sift.scales must be >= 1");
    if (sift.base_sigma <= 0.0) fail("sift.base_sigma must be > 0");
    if (sift.contrast_threshold <= 0.0) fail("sift.contrast must be > 0");
    if (sift.edge_threshold <= 0.0) fail("sift.edge must be > 0");
    if (sift.size_factor <= 0.0) fail("sift.size_factor must be > 0");
    if (sift.max_patches < 0) fail("sift.max_patches must be >= 0");
    if (embed_dim != 256 && embed_dim != 512 && embed_dim != 1024 && embed_dim != 2048)
        fail("net.embed_dim must be one of 256, 512, 1024, 2048");
    if (margin <= 0.0) fail("net.margin must be > 0");
    if (epochs < 0) fail("net.epochs must be >= 0");
    if (batch_size < 1) fail("net.batch_size must be >= 1");
    if (learning_rate < 0.0) fail("net.learning_rate must be >= 0");
    if (triplets_per_epoch < 0) fail("net.triplets_per_epoch must be >= 0");
    if (spca_components < 0) fail("spca.components must be >= 0");
    if (spca_lambda < 0.0) fail("spca.lambda must be >= 0");
    if (spca_sample < 0) fail("spca.sample must be >= 0");
    if (saliency_epsilon < 0.0) fail("saliency.epsilon must be >= 0");
    if (svm.folds < 2) fail("svm.folds must be >= 2");
    if (svm.kkt_tol <= 0.0) fail("svm.kkt_tol must be > 0");
    if (svm.c_list.empty() || svm.gamma_list.empty()) fail("svm grids must be non-empty");
    for (double c : svm.c_list)
        if (c <= 0.0) fail("svm.c_grid entries must be > 0");
}

inline PipelineConfig PipelineConfig::from_text(const std::string& text) {
    PipelineConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

// --- checksums -------------------------------------------------------------

inline std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xffffffffu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

inline std::uint32_t crc32_file(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot read " + path.string());
    std::uint32_t state = 0;
    char buf[65536];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) state = crc32(buf, n, state);
    std::fclose(f);
    return state;
}

// --- model bundle -----------------------------------------------------------

struct ModelBundle {
    PipelineConfig config;
    EmbedNet net;
    SparseBasis basis;
    SaliencyWeights saliency;
    std::vector<WriterModel> svms;
    std::vector<std::string> writer_ids;
    std::vector<double> loss_history;
};

namespace bundle_detail {

inline std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", v);
    return buf;
}

} // namespace bundle_detail

inline void save_bundle(ModelBundle& bundle, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    fs::create_directories(dir / "svm");

    {
        std::ofstream cf(dir / "config.txt");
        if (!cf) throw IoError("cannot write bundle config");
        cf << bundle.config.to_text();
    }
    save_weights(bundle.net, dir / "embedder");
    save_basis(bundle.basis, dir);
    save_saliency(bundle.saliency, dir / "saliency.json");
    for (const WriterModel& m : bundle.svms)
        save_writer_model(m, dir / "svm" / ("writer_" + m.writer_id + ".bin"));
    {
        std::ofstream lf(dir / "loss_history.csv");
        lf << "epoch,mean_loss\n";
        for (std::size_t e = 0; e < bundle.loss_history.size(); ++e) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e + 1, bundle.loss_history[e]);
            lf << buf;
        }
    }

    // manifest with per-file checksums, written last
    nlohmann::json files;
    std::vector<std::string> rels = {"config.txt", "sparse_basis.json", "sparse_basis.f64",
                                     "saliency.json", "loss_history.csv"};
    for (Param* p : bundle.net.params()) rels.push_back("embedder/" + p->name + ".f64");
    for (const WriterModel& m : bundle.svms) rels.push_back("svm/writer_" + m.writer_id + ".bin");
    for (const std::string& rel : rels)
        files[rel] = bundle_detail::hex32(crc32_file(dir / rel));

    nlohmann::json manifest;
    manifest["format_version"] = kBundleFormatVersion;
    manifest["tool"] = std::string("wid ") + kToolVersion;
    manifest["embed_dim"] = bundle.net.embed_dim;
    manifest["components"] = bundle.basis.components();
    manifest["writers"] = bundle.writer_ids;
    manifest["fusion_mode"] = to_string(bundle.config.fusion);
    {
        nlohmann::json arch;
        arch["input"] = {1, NormalizedPatch::kSide, NormalizedPatch::kSide};
        arch["stem_filters"] = bundle.net.stem.weight.value.dim(0);
        std::vector<int> block_filters;
        for (const ResidualBlock& b : bundle.net.blocks)
            block_filters.push_back(b.conv1.weight.value.dim(0));
        arch["block_filters"] = block_filters;
        arch["fc_dim"] = bundle.net.embed_dim;
        manifest["architecture"] = arch;
        nlohmann::json training;
        training["loss"] = bundle.config.loss == LossKind::kTriplet ? "triplet" : "contrastive";
        training["margin"] = bundle.config.margin;
        training["epochs"] = bundle.config.epochs;
        training["batch_size"] = bundle.config.batch_size;
        training["learning_rate"] = bundle.config.learning_rate;
        training["seed"] = bundle.config.seed;
        manifest["training"] = training;
    }
    manifest["files"] = files;
    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot write bundle manifest");
    mf << manifest.dump(2) << "\n";
}

inline ModelBundle load_bundle(const std::filesystem::path& dir, bool verify = true) {
    namespace fs = std::filesystem;
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IntegrityError("bundle manifest missing in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(mf);

    const std::string version = manifest.at("format_version").get<std::string>();
    const std::string major = version.substr(0, version.find('.'));
    const std::string supported(kBundleFormatVersion);
    if (major != supported.substr(0, supported.find('.')))
        throw IntegrityError("bundle format version " + version + " does not match tool " +
                             kBundleFormatVersion);

    if (verify) {
        for (const auto& [rel, sum] : manifest.at("files").items()) {
            const fs::path p = dir / rel;
            if (!fs::exists(p)) throw IntegrityError("bundle file missing: " + rel);
            if (bundle_detail::hex32(crc32_file(p)) != sum.get<std::string>())
                throw IntegrityError("bundle checksum mismatch: " + rel);
        }
    }

    ModelBundle bundle;
    {
        std::ifstream cf(dir / "config.txt");
        std::stringstream ss;
        ss << cf.rdbuf();
        bundle.config = PipelineConfig::from_text(ss.str());
    }
    bundle.net = EmbedNet::make(manifest.at("embed_dim").get<int>(), 0);
    load_weights(bundle.net, dir / "embedder");
    bundle.basis = load_basis(dir);
    bundle.saliency = load_saliency(dir / "saliency.json");
    bundle.writer_ids = manifest.at("writers").get<std::vector<std::string>>();
    for (const std::string& id : bundle.writer_ids) {
        bundle.svms.push_back(load_writer_model(dir / "svm" / ("writer_" + id + ".bin")));
    }
    return bundle;
}

} // namespace wid
