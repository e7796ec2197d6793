#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capsumt/common.hpp"

namespace capsumt {

// Character n-grams of the boundary-marked word "<w>", ordered by n then
// position. The marked whole form is appended as its own token when its
// length falls outside [n_min, n_max] (otherwise it already appears as the
// longest n-gram); words shorter than n_min thus contribute only the marked
// form itself.
inline std::vector<std::string> extract_subwords(const std::string& word, std::size_t n_min,
                                                 std::size_t n_max) {
    if (word.empty()) throw ConfigError("extract_subwords: empty word");
    if (n_min == 0 || n_min > n_max) throw ConfigError("extract_subwords: bad n-gram range");
    std::string marked = "<" + word + ">";
    std::size_t len = marked.size();
    std::vector<std::string> out;
    for (std::size_t n = n_min; n <= std::min(n_max, len); ++n)
        for (std::size_t i = 0; i + n <= len; ++i) out.push_back(marked.substr(i, n));
    if (len < n_min || len > n_max) out.push_back(marked);
    return out;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

struct SubwordConfig {
    std::size_t n_min = 3;
    std::size_t n_max = 6;
    std::size_t buckets = std::size_t{1} << 20;
    std::size_t window = 4;  // context half-width b
    std::size_t min_count = 1;
};

// Word ids plus the hashed n-gram bucket lists of every in-vocab word.
// Bucket lookup works for arbitrary strings, which is what makes vectors of
// unseen words well defined.
class SubwordVocabulary {
public:
    SubwordVocabulary() = default;

    static SubwordVocabulary build(const std::vector<std::vector<std::string>>& sentences,
                                   SubwordConfig cfg) {
        if (cfg.buckets == 0) throw ConfigError("subword vocabulary: bucket count must be > 0");
        SubwordVocabulary v;
        v.cfg_ = cfg;
        std::unordered_map<std::string, std::size_t> counts;
        std::vector<std::string> order;
        for (const auto& s : sentences)
            for (const auto& w : s)
                if (++counts[w] == 1) order.push_back(w);
        for (const auto& w : order) {
            if (counts[w] < cfg.min_count) continue;
            v.ids_.emplace(w, static_cast<int>(v.words_.size()));
            v.words_.push_back(w);
            v.word_buckets_.push_back(v.buckets_for(w));
        }
        return v;
    }

    static SubwordVocabulary from_words(const std::vector<std::string>& words, SubwordConfig cfg) {
        std::vector<std::vector<std::string>> one = {words};
        return build(one, cfg);
    }

    std::size_t size() const { return words_.size(); }
    std::size_t bucket_count() const { return cfg_.buckets; }
    const SubwordConfig& config() const { return cfg_; }

    int id(const std::string& w) const {
        auto it = ids_.find(w);
        return it == ids_.end() ? -1 : it->second;
    }

    const std::string& word(std::size_t id) const { return words_.at(id); }
    const std::vector<std::string>& words() const { return words_; }

    const std::vector<std::size_t>& subword_buckets(std::size_t word_id) const {
        return word_buckets_.at(word_id);
    }

    std::vector<std::size_t> buckets_for(const std::string& word) const {
        std::vector<std::size_t> out;
        for (const auto& g : extract_subwords(word, cfg_.n_min, cfg_.n_max))
            out.push_back(fnv1a64(g) % cfg_.buckets);
        return out;
    }

private:
    SubwordConfig cfg_;
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
    std::vector<std::vector<std::size_t>> word_buckets_;
};

// One masked-word training example: the in-vocab center plus the composed
// subword buckets of every context word (context words may be out of vocab).
struct WindowSample {
    int center;
    std::vector<std::vector<std::size_t>> context;
};

inline std::vector<WindowSample> window_samples(const std::vector<std::string>& sentence,
                                                const SubwordVocabulary& vocab) {
    std::size_t b = vocab.config().window;
    std::vector<WindowSample> out;
    for (std::size_t i = 0; i < sentence.size(); ++i) {
        int center = vocab.id(sentence[i]);
        if (center < 0) continue;
        WindowSample s;
        s.center = center;
        std::size_t lo = i >= b ? i - b : 0;
        std::size_t hi = std::min(sentence.size(), i + b + 1);
        for (std::size_t j = lo; j < hi; ++j) {
            if (j == i) continue;
            s.context.push_back(vocab.buckets_for(sentence[j]));
        }
        if (!s.context.empty()) out.push_back(std::move(s));
    }
    return out;
}

}  // namespace capsumt
