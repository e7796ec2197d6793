#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "capsumt/common.hpp"

namespace capsumt {

// One JSONL corpus line:
//   {"id": str, "features": path?, "factual": [str]?, "romantic": str?,
//    "humorous": str?, "summary": str?}
// Any field other than id may be absent depending on the task.
struct CorpusRecord {
    std::string id;
    std::optional<std::string> features;
    std::vector<std::string> factual;
    std::optional<std::string> romantic;
    std::optional<std::string> humorous;
    std::optional<std::string> summary;
    std::size_t line = 0;  // 1-based source line, kept for diagnostics
};

namespace detail {

inline std::string require_string(const nlohmann::json& j, const char* field, std::size_t line) {
    if (!j.is_string())
        throw IoError("corpus line " + std::to_string(line) + ": field '" + field +
                      "' must be a string");
    return j.get<std::string>();
}

}  // namespace detail

inline CorpusRecord parse_corpus_line(const std::string& text, std::size_t line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("corpus line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object())
        throw IoError("corpus line " + std::to_string(line) + ": record must be a JSON object");
    if (!j.contains("id"))
        throw IoError("corpus line " + std::to_string(line) + ": missing required field 'id'");
    CorpusRecord rec;
    rec.line = line;
    rec.id = detail::require_string(j["id"], "id", line);
    if (j.contains("features")) rec.features = detail::require_string(j["features"], "features", line);
    if (j.contains("factual")) {
        if (!j["factual"].is_array())
            throw IoError("corpus line " + std::to_string(line) +
                          ": field 'factual' must be an array of strings");
        for (const auto& c : j["factual"]) rec.factual.push_back(detail::require_string(c, "factual", line));
    }
    if (j.contains("romantic")) rec.romantic = detail::require_string(j["romantic"], "romantic", line);
    if (j.contains("humorous")) rec.humorous = detail::require_string(j["humorous"], "humorous", line);
    if (j.contains("summary")) rec.summary = detail::require_string(j["summary"], "summary", line);
    return rec;
}

inline std::vector<CorpusRecord> parse_corpus(std::istream& is, const std::string& source = "<stream>") {
    std::vector<CorpusRecord> records;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        CorpusRecord rec = parse_corpus_line(line, lineno);
        if (!seen.insert(rec.id).second)
            throw IoError(source + " line " + std::to_string(lineno) + ": duplicate id '" + rec.id +
                          "'");
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<CorpusRecord> load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open corpus: " + path);
    return parse_corpus(is, path);
}

// Pipeline output record (one JSONL line per input record).
struct PredictionRecord {
    std::string id;
    std::string factual_caption;
    std::string romantic_caption;
    std::string humorous_caption;
    std::string summary;
};

inline std::string to_jsonl(const PredictionRecord& p) {
    nlohmann::json j;
    j["id"] = p.id;
    j["factual_caption"] = p.factual_caption;
    j["romantic_caption"] = p.romantic_caption;
    j["humorous_caption"] = p.humorous_caption;
    j["summary"] = p.summary;
    return j.dump();
}

inline PredictionRecord parse_prediction_line(const std::string& text, std::size_t line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("predictions line " + std::to_string(line) + ": invalid JSON (" + e.what() +
                      ")");
    }
    if (!j.contains("id"))
        throw IoError("predictions line " + std::to_string(line) + ": missing 'id'");
    PredictionRecord p;
    p.id = detail::require_string(j["id"], "id", line);
    auto grab = [&](const char* field) -> std::string {
        if (!j.contains(field)) return "";
        return detail::require_string(j[field], field, line);
    };
    p.factual_caption = grab("factual_caption");
    p.romantic_caption = grab("romantic_caption");
    p.humorous_caption = grab("humorous_caption");
    p.summary = grab("summary");
    return p;
}

inline std::vector<PredictionRecord> load_predictions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open predictions: " + path);
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        out.push_back(parse_prediction_line(line, lineno));
    }
    return out;
}

}  // namespace capsumt
