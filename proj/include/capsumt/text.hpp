#pragma once

#include <cctype>
#include <string>
#include <unordered_map>
#include <vector>

#include "capsumt/common.hpp"

namespace capsumt {

// Lowercased whitespace/punctuation tokenization: alphanumeric runs become
// tokens, each punctuation character is its own token.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
            out.emplace_back(1, static_cast<char>(c));
        }
    }
    flush();
    return out;
}

// Token vocabulary with the four special ids fixed at the front. Words enter
// in first-occurrence order so builds are deterministic.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kStart = 1;
    static constexpr int kEnd = 2;
    static constexpr int kUnk = 3;

    Vocabulary() {
        for (const char* w : {"<pad>", "<s>", "</s>", "<unk>"}) push(w);
    }

    static Vocabulary build(const std::vector<std::vector<std::string>>& texts,
                            std::size_t min_count = 1) {
        std::unordered_map<std::string, std::size_t> counts;
        std::vector<std::string> order;
        for (const auto& toks : texts)
            for (const auto& t : toks) {
                if (++counts[t] == 1) order.push_back(t);
            }
        Vocabulary v;
        for (const auto& w : order)
            if (counts[w] >= min_count && !v.contains(w)) v.push(w);
        return v;
    }

    int id(const std::string& w) const {
        auto it = ids_.find(w);
        return it == ids_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& w) const { return ids_.count(w) != 0; }
    const std::string& word(std::size_t id) const { return words_.at(id); }
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

    int add(const std::string& w) {
        auto it = ids_.find(w);
        if (it != ids_.end()) return it->second;
        return push(w);
    }

    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (!out.empty()) out += ' ';
            out += word(static_cast<std::size_t>(id));
        }
        return out;
    }

private:
    int push(const std::string& w) {
        ids_.emplace(w, static_cast<int>(words_.size()));
        words_.push_back(w);
        return static_cast<int>(words_.size()) - 1;
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace capsumt
