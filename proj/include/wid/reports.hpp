#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wid/pipeline.hpp"

namespace wid {

namespace report_detail {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    return f;
}

} // namespace report_detail

// word id, truth, top-5 writer ids and scores, one row per scored word
inline void write_word_csv(const std::filesystem::path& path,
                           const std::vector<WordResult>& results,
                           const std::vector<std::string>& writer_ids) {
    using report_detail::num;
    auto f = report_detail::open_out(path);
    f << "word_id,truth,fragments,top1,top2,top3,top4,top5,score1,score2,score3,score4,score5\n";
    for (const WordResult& r : results) {
        f << r.word_id << ",";
        f << (r.truth >= 0 ? writer_ids[static_cast<std::size_t>(r.truth)] : "") << ",";
        f << r.fragments;
        if (r.no_evidence) {
            f << ",no_evidence,,,,,,,,,\n";
            continue;
        }
        for (int k = 0; k < 5; ++k) {
            f << ",";
            if (k < static_cast<int>(r.pred.ranking.size()))
                f << writer_ids[static_cast<std::size_t>(r.pred.ranking[static_cast<std::size_t>(k)])];
        }
        for (int k = 0; k < 5; ++k) {
            f << ",";
            if (k < static_cast<int>(r.pred.ranking.size()))
                f << num(r.scores.scores[static_cast<std::size_t>(
                        r.pred.ranking[static_cast<std::size_t>(k)])]);
        }
        f << "\n";
    }
}

inline void write_eval_summary(const std::filesystem::path& path, const EvalSummary& summary) {
    nlohmann::json j;
    j["words"] = summary.words;
    j["skipped"] = summary.skipped;
    j["top1"] = summary.top1;
    j["top5"] = summary.top5;
    j["fusion_mode"] = summary.fusion_mode;
    j["curve_words_1_to_8"] = summary.curve;
    if (summary.dbi >= 0.0) j["embedding_dbi"] = summary.dbi;
    nlohmann::json confusion;
    for (const auto& [truth, row] : summary.confusion) {
        nlohmann::json entry;
        for (const auto& [pred, count] : row) entry[pred] = count;
        confusion[truth] = entry;
    }
    j["confusion"] = confusion;
    auto f = report_detail::open_out(path);
    f << j.dump(2) << "\n";
}

inline void write_ablation_reports(const std::filesystem::path& dir,
                                   const std::vector<AblationRow>& rows) {
    using report_detail::num;
    auto csv = report_detail::open_out(dir / "ablation.csv");
    csv << "mode,top1,top5\n";
    nlohmann::json j = nlohmann::json::array();
    for (const AblationRow& r : rows) {
        csv << r.mode << "," << num(r.top1) << "," << num(r.top5) << "\n";
        nlohmann::json row;
        row["mode"] = r.mode;
        row["top1"] = r.top1;
        row["top5"] = r.top5;
        j.push_back(row);
    }
    auto jf = report_detail::open_out(dir / "ablation.json");
    jf << j.dump(2) << "\n";
}

inline void write_identify_summary(const std::filesystem::path& path,
                                   const std::vector<WordResult>& results,
                                   const std::vector<std::string>& writer_ids, int topk,
                                   const WordResult* page = nullptr) {
    nlohmann::json j;
    j["items"] = nlohmann::json::array();
    for (const WordResult& r : results) {
        nlohmann::json item;
        item["word_id"] = r.word_id;
        item["path"] = r.path;
        item["fragments"] = r.fragments;
        if (r.no_evidence) {
            item["no_evidence"] = true;
        } else {
            nlohmann::json ranked = nlohmann::json::array();
            const int upto = std::min<int>(topk, static_cast<int>(r.pred.ranking.size()));
            for (int k = 0; k < upto; ++k) {
                nlohmann::json entry;
                const int w = r.pred.ranking[static_cast<std::size_t>(k)];
                entry["writer"] = writer_ids[static_cast<std::size_t>(w)];
                entry["score"] = r.scores.scores[static_cast<std::size_t>(w)];
                ranked.push_back(entry);
            }
            item["ranking"] = ranked;
        }
        j["items"].push_back(item);
    }
    if (page && !page->no_evidence) {
        nlohmann::json p;
        p["words_used"] = page->scores.fragments;
        nlohmann::json ranked = nlohmann::json::array();
        const int upto = std::min<int>(topk, static_cast<int>(page->pred.ranking.size()));
        for (int k = 0; k < upto; ++k) {
            nlohmann::json entry;
            const int w = page->pred.ranking[static_cast<std::size_t>(k)];
            entry["writer"] = writer_ids[static_cast<std::size_t>(w)];
            entry["score"] = page->scores.scores[static_cast<std::size_t>(w)];
            ranked.push_back(entry);
        }
        p["ranking"] = ranked;
        j["page"] = p;
    }
    auto f = report_detail::open_out(path);
    f << j.dump(2) << "\n";
}

// JSON-lines sidecar for segmented word regions
inline void write_regions_jsonl(const std::filesystem::path& path, const std::string& source,
                                const std::vector<WordRegion>& regions) {
    auto f = report_detail::open_out(path);
    for (const WordRegion& r : regions) {
        nlohmann::json rec;
        rec["source"] = source;
        rec["bbox"] = {r.x, r.y, r.w, r.h};
        f << rec.dump() << "\n";
    }
}

// JSON-lines manifest for extracted patches
inline void write_patch_manifest_line(std::ofstream& f, const std::string& word_id, int index,
                                      const Keypoint& kp, const std::string& file) {
    nlohmann::json rec;
    rec["word_id"] = word_id;
    rec["kp_index"] = index;
    rec["x"] = kp.x;
    rec["y"] = kp.y;
    rec["octave"] = kp.octave;
    rec["scale"] = kp.scale;
    rec["orientation"] = kp.orientation;
    rec["file"] = file;
    f << rec.dump() << "\n";
}

} // namespace wid
