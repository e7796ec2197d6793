#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "capsumt/common.hpp"

namespace capsumt {

struct DecodeConfig {
    std::size_t beam = 1;  // 1 = greedy
    std::size_t max_len = 16;
};

// Beam search over an autoregressive model. Cumulative log probabilities are
// compared without length normalization; ties break toward the smaller token
// id (and then the older hypothesis), so beam width 1 reproduces greedy
// argmax decoding exactly.
//
//   step(state)            -> log-probability vector for the next token
//   advance(state, token)  -> state after consuming token
//
// Emitted sequences exclude the end token; max_len bounds the emitted length.
template <class State, class StepFn, class AdvanceFn>
std::vector<int> beam_search(State init, int end_token, const DecodeConfig& cfg, StepFn&& step,
                             AdvanceFn&& advance) {
    if (cfg.beam == 0) throw ConfigError("beam_search: beam width must be >= 1");
    struct Hyp {
        std::vector<int> tokens;
        double logp = 0.0;
        State state;
    };
    std::vector<Hyp> active;
    active.push_back({{}, 0.0, std::move(init)});
    std::vector<Hyp> finished;

    for (std::size_t t = 0; t < cfg.max_len && !active.empty(); ++t) {
        struct Cand {
            std::size_t parent;
            int token;
            double logp;
        };
        std::vector<Cand> cands;
        for (std::size_t p = 0; p < active.size(); ++p) {
            std::vector<double> lp = step(active[p].state);
            for (std::size_t tok = 0; tok < lp.size(); ++tok)
                cands.push_back({p, static_cast<int>(tok), active[p].logp + lp[tok]});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            if (a.token != b.token) return a.token < b.token;
            return a.parent < b.parent;
        });
        // Exactly the top `beam` continuations survive each step; a hypothesis
        // that emits the end token retires from the beam.
        std::vector<Hyp> next;
        std::size_t taken = 0;
        for (const Cand& c : cands) {
            if (taken == cfg.beam) break;
            ++taken;
            if (c.token == end_token) {
                Hyp h;
                h.tokens = active[c.parent].tokens;
                h.logp = c.logp;
                h.state = active[c.parent].state;
                finished.push_back(std::move(h));
            } else {
                Hyp h;
                h.tokens = active[c.parent].tokens;
                h.tokens.push_back(c.token);
                h.logp = c.logp;
                h.state = advance(active[c.parent].state, c.token);
                next.push_back(std::move(h));
            }
        }
        active = std::move(next);
    }

    const Hyp* best = nullptr;
    for (const Hyp& h : finished)
        if (!best || h.logp > best->logp) best = &h;
    for (const Hyp& h : active)
        if (!best || h.logp > best->logp) best = &h;
    return best ? best->tokens : std::vector<int>{};
}

}  // namespace capsumt
