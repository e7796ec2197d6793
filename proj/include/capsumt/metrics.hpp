#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "capsumt/common.hpp"

namespace capsumt {

using Tokens = std::vector<std::string>;

struct MetricReport {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double score = 0.0;  // F measure, or the metric's single value
};

namespace detail {

inline std::map<Tokens, int> ngram_counts(const Tokens& toks, std::size_t n) {
    std::map<Tokens, int> out;
    if (toks.size() < n) return out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        out[Tokens(toks.begin() + i, toks.begin() + i + n)]++;
    return out;
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

// Clipped modified n-gram precision (counts clipped by the per-reference
// maximum), geometric mean over n = 1..order, times the brevity penalty with
// the closest reference length (ties resolve to the shorter reference).
// No smoothing: any zero precision zeroes the score. An empty candidate
// scores 0 rather than erroring.
inline double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references,
                     std::size_t order) {
    if (order == 0) throw ConfigError("bleu: order must be >= 1");
    if (references.empty()) throw ConfigError("bleu: need at least one reference");
    if (candidate.empty()) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= order; ++n) {
        auto cc = detail::ngram_counts(candidate, n);
        std::size_t total = 0, clipped = 0;
        for (const auto& [ng, count] : cc) {
            total += static_cast<std::size_t>(count);
            int best = 0;
            for (const auto& ref : references) {
                auto rc = detail::ngram_counts(ref, n);
                auto it = rc.find(ng);
                if (it != rc.end()) best = std::max(best, it->second);
            }
            clipped += static_cast<std::size_t>(std::min(count, best));
        }
        if (total == 0 || clipped == 0) return 0.0;
        log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
    }
    std::size_t c = candidate.size();
    std::size_t r = references[0].size();
    auto dist = [c](std::size_t len) { return len > c ? len - c : c - len; };
    for (const auto& ref : references)
        if (dist(ref.size()) < dist(r) || (dist(ref.size()) == dist(r) && ref.size() < r))
            r = ref.size();
    double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    return bp * std::exp(log_sum / static_cast<double>(order));
}

inline MetricReport rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n) {
    if (reference.empty()) throw ConfigError("rouge: empty reference");
    auto cc = detail::ngram_counts(candidate, n);
    auto rc = detail::ngram_counts(reference, n);
    std::size_t overlap = 0, ctotal = 0, rtotal = 0;
    for (const auto& [ng, count] : cc) {
        ctotal += static_cast<std::size_t>(count);
        auto it = rc.find(ng);
        if (it != rc.end()) overlap += static_cast<std::size_t>(std::min(count, it->second));
    }
    for (const auto& [ng, count] : rc) rtotal += static_cast<std::size_t>(count);
    MetricReport rep;
    rep.name = "rouge-" + std::to_string(n);
    rep.precision = ctotal ? static_cast<double>(overlap) / static_cast<double>(ctotal) : 0.0;
    rep.recall = rtotal ? static_cast<double>(overlap) / static_cast<double>(rtotal) : 0.0;
    rep.score = (rep.precision + rep.recall) > 0
                    ? 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
                    : 0.0;
    return rep;
}

// Longest-common-subsequence variant with the recall-weighted F (beta = 1.2).
inline MetricReport rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2) {
    if (reference.empty()) throw ConfigError("rouge: empty reference");
    std::size_t l = detail::lcs_length(candidate, reference);
    MetricReport rep;
    rep.name = "rouge-l";
    rep.precision = candidate.empty() ? 0.0 : static_cast<double>(l) / candidate.size();
    rep.recall = static_cast<double>(l) / reference.size();
    double b2 = beta * beta;
    rep.score = (rep.recall + b2 * rep.precision) > 0
                    ? (1 + b2) * rep.precision * rep.recall / (rep.recall + b2 * rep.precision)
                    : 0.0;
    return rep;
}

enum class RougeVariant { kOne, kTwo, kL };

inline MetricReport rouge(const Tokens& candidate, const Tokens& reference, RougeVariant v) {
    switch (v) {
        case RougeVariant::kOne: return rouge_n(candidate, reference, 1);
        case RougeVariant::kTwo: return rouge_n(candidate, reference, 2);
        default: return rouge_l(candidate, reference);
    }
}

namespace detail {

// Exact-match unigram alignment: maximum match count first, then minimum
// chunk count. Exact branch-and-bound while the node budget lasts; the best
// alignment found so far stands in on pathological inputs.
struct MeteorAlign {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

class MeteorSearch {
public:
    MeteorSearch(const Tokens& cand, const Tokens& ref) : cand_(cand), ref_(ref) {
        std::map<std::string, int> ref_counts;
        for (const auto& w : ref) ref_counts[w]++;
        std::map<std::string, int> cand_counts;
        for (const auto& w : cand) cand_counts[w]++;
        for (const auto& [w, c] : cand_counts) {
            auto it = ref_counts.find(w);
            if (it != ref_counts.end())
                max_matches_ += static_cast<std::size_t>(std::min(c, it->second));
        }
        used_.assign(ref.size(), false);
    }

    MeteorAlign run() {
        if (max_matches_ == 0) return {0, 0};
        dfs(0, 0, -2, 0);
        return {max_matches_, best_chunks_};
    }

private:
    // Upper bound on matches still reachable from candidate position i.
    std::size_t bound_from(std::size_t i) const {
        std::map<std::string, int> remaining_cand;
        for (std::size_t k = i; k < cand_.size(); ++k) remaining_cand[cand_[k]]++;
        std::map<std::string, int> remaining_ref;
        for (std::size_t j = 0; j < ref_.size(); ++j)
            if (!used_[j]) remaining_ref[ref_[j]]++;
        std::size_t bound = 0;
        for (const auto& [w, c] : remaining_cand) {
            auto it = remaining_ref.find(w);
            if (it != remaining_ref.end())
                bound += static_cast<std::size_t>(std::min(c, it->second));
        }
        return bound;
    }

    void dfs(std::size_t i, std::size_t matched, int prev_ref, std::size_t chunks) {
        if (chunks >= best_chunks_) return;  // chunk count never decreases
        if (++nodes_ > kNodeBudget) return;
        if (matched + bound_from(i) < max_matches_) return;
        if (i == cand_.size()) {
            if (matched == max_matches_ && chunks < best_chunks_) best_chunks_ = chunks;
            return;
        }
        // Prefer the continuation of the current chunk, then other positions.
        if (prev_ref >= 0 && static_cast<std::size_t>(prev_ref + 1) < ref_.size() &&
            !used_[prev_ref + 1] && ref_[prev_ref + 1] == cand_[i]) {
            used_[prev_ref + 1] = true;
            dfs(i + 1, matched + 1, prev_ref + 1, chunks);
            used_[prev_ref + 1] = false;
        }
        for (std::size_t j = 0; j < ref_.size(); ++j) {
            if (used_[j] || ref_[j] != cand_[i]) continue;
            if (prev_ref >= 0 && j == static_cast<std::size_t>(prev_ref + 1)) continue;
            used_[j] = true;
            dfs(i + 1, matched + 1, static_cast<int>(j), chunks + 1);
            used_[j] = false;
        }
        dfs(i + 1, matched, -2, chunks);  // leave cand_[i] unmatched; breaks the chunk
    }

    static constexpr std::size_t kNodeBudget = 2'000'000;
    const Tokens& cand_;
    const Tokens& ref_;
    std::vector<bool> used_;
    std::size_t max_matches_ = 0;
    std::size_t best_chunks_ = std::size_t(-1);
    std::size_t nodes_ = 0;
};

}  // namespace detail

// Exact-match stage only: F_mean = 10PR/(R+9P), penalty = 0.5 (chunks/matches)^3.
inline double meteor_exact(const Tokens& candidate, const Tokens& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    detail::MeteorAlign a = detail::MeteorSearch(candidate, reference).run();
    if (a.matches == 0) return 0.0;
    double m = static_cast<double>(a.matches);
    double p = m / static_cast<double>(candidate.size());
    double r = m / static_cast<double>(reference.size());
    double fmean = 10.0 * p * r / (r + 9.0 * p);
    double frag = static_cast<double>(a.chunks) / m;
    return fmean * (1.0 - 0.5 * frag * frag * frag);
}

// exp of the mean per-token negative log likelihood; probabilities below the
// floor are clamped (the model's own floor for zero-probability tokens).
inline double perplexity(const std::vector<double>& token_probs, double floor = 1e-12) {
    if (token_probs.empty()) throw ConfigError("perplexity: no tokens");
    double nll = 0.0;
    for (double p : token_probs) nll += -std::log(std::max(p, floor));
    return std::exp(nll / static_cast<double>(token_probs.size()));
}

// Max-per-record convenience forms for multi-reference evaluation.
inline MetricReport rouge_best(const Tokens& candidate, const std::vector<Tokens>& references,
                               RougeVariant v) {
    if (references.empty()) throw ConfigError("rouge: need at least one reference");
    MetricReport best;
    bool first = true;
    for (const auto& ref : references) {
        MetricReport r = rouge(candidate, ref, v);
        if (first || r.score > best.score) best = r;
        first = false;
    }
    return best;
}

inline double meteor_best(const Tokens& candidate, const std::vector<Tokens>& references) {
    if (references.empty()) throw ConfigError("meteor: need at least one reference");
    double best = 0.0;
    for (const auto& ref : references) best = std::max(best, meteor_exact(candidate, ref));
    return best;
}

}  // namespace capsumt
