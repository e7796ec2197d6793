#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "capsumt/adam.hpp"
#include "capsumt/common.hpp"
#include "capsumt/decode.hpp"
#include "capsumt/rng.hpp"
#include "capsumt/tape.hpp"
#include "capsumt/text.hpp"

namespace capsumt {

// M = Q * S * Lambda, mapping input width n to gate width m through rank r.
template <class T>
Tensor<T> compose_gate_matrix(Tape<T>& tp, const Tensor<T>& q, const Tensor<T>& s,
                              const Tensor<T>& lam) {
    if (q.rank() != 2 || s.rank() != 2 || lam.rank() != 2 || q.dim(1) != s.dim(0) ||
        s.dim(0) != s.dim(1) || s.dim(1) != lam.dim(0))
        throw ShapeError("compose_gate_matrix: incompatible factors " + shape_str(q.shape()) +
                         " * " + shape_str(s.shape()) + " * " + shape_str(lam.shape()));
    return tp.matmul(tp.matmul(q, s), lam);
}

// LSTM variant whose input transforms are factored Q*S*Lambda with a
// style-specific square S shared by no one and Q/Lambda/recurrent weights
// shared by every style. The input-refinement gate x~ multiplies the raw
// input (so the cell requires input width == hidden width), and the memory
// update uses x~ directly in place of the conventional input gate; i~ is
// still computed. `bypass_input_gate` disables the refinement (x~ := x) and
// restores the conventional i*g memory update, which makes the cell a plain
// LSTM with W = Q*Lambda — that switch exists for equivalence testing.
template <class T>
struct FactoredLstm {
    static constexpr std::size_t kGates = 5;  // x, i, f, o, g

    std::size_t width = 0;  // input width n == hidden width
    std::size_t rank = 0;
    bool tanh_candidate = false;  // candidate is sigmoid as printed; tanh optional
    bool bypass_input_gate = false;
    std::vector<std::string> styles;

    std::array<int, kGates> q{}, lam{}, wh{};
    std::array<int, kGates> bias{};  // bias[0] unused: the x~ gate has none
    std::map<std::string, std::array<int, kGates>> style_s;

    FactoredLstm() = default;

    FactoredLstm(ParameterSet<T>& ps, const std::string& prefix, std::size_t width_,
                 std::size_t rank_, std::vector<std::string> styles_, bool tanh_cand,
                 bool bypass, Rng& rng)
        : width(width_),
          rank(rank_),
          tanh_candidate(tanh_cand),
          bypass_input_gate(bypass),
          styles(std::move(styles_)) {
        if (rank > width) throw ConfigError("factored cell: rank exceeds gate width");
        if (styles.empty()) throw ConfigError("factored cell: need at least one style");
        static constexpr const char* names[kGates] = {"x", "i", "f", "o", "g"};
        T a = static_cast<T>(0.2);
        for (std::size_t g = 0; g < kGates; ++g) {
            q[g] = ps.add(prefix + ".q_" + names[g],
                          Tensor<T>::uniform({width, rank}, rng, -a, a));
            lam[g] = ps.add(prefix + ".lam_" + names[g],
                            Tensor<T>::uniform({rank, width}, rng, -a, a));
            wh[g] = ps.add(prefix + ".wh_" + names[g],
                           Tensor<T>::uniform({width, width}, rng, -T(0.08), T(0.08)));
            bias[g] = g == 0 ? -1 : ps.add(prefix + ".b_" + names[g], Tensor<T>::zeros({width}));
        }
        for (const auto& st : styles) {
            std::array<int, kGates> ids{};
            for (std::size_t g = 0; g < kGates; ++g)
                ids[g] = ps.add(prefix + ".style." + st + ".s_" + names[g], style_init(rng));
            style_s.emplace(st, ids);
        }
    }

    // S starts as (1/r)|R R^T| — symmetric positive wells scaled by the rank —
    // and is a free matrix thereafter.
    Tensor<T> style_init(Rng& rng) const {
        Tensor<T> r_mat = Tensor<T>::uniform({rank, rank}, rng, -1.0, 1.0);
        Tensor<T> s({rank, rank});
        for (std::size_t i = 0; i < rank; ++i)
            for (std::size_t j = 0; j < rank; ++j) {
                T dot = T(0);
                for (std::size_t k = 0; k < rank; ++k) dot += r_mat.at(i, k) * r_mat.at(j, k);
                s.at(i, j) = std::abs(dot) / static_cast<T>(rank);
            }
        return s;
    }

    struct Bound {
        std::array<Tensor<T>, kGates> q, lam, wh;
        std::array<Tensor<T>, kGates> bias;
        std::map<std::string, std::array<Tensor<T>, kGates>> style_s;
    };

    Bound bind(Tape<T>& tp, const ParameterSet<T>& ps) const {
        Bound b;
        for (std::size_t g = 0; g < kGates; ++g) {
            b.q[g] = tp.param(ps, q[g]);
            b.lam[g] = tp.param(ps, lam[g]);
            b.wh[g] = tp.param(ps, wh[g]);
            if (bias[g] >= 0) b.bias[g] = tp.param(ps, bias[g]);
        }
        for (const auto& [st, ids] : style_s) {
            std::array<Tensor<T>, kGates> bs;
            for (std::size_t g = 0; g < kGates; ++g) bs[g] = tp.param(ps, ids[g]);
            b.style_s.emplace(st, bs);
        }
        return b;
    }

    struct StepOut {
        Tensor<T> h, c;
        Tensor<T> x_gate, i, f, o, g;
    };

    StepOut step(Tape<T>& tp, const Bound& b, const Tensor<T>& x, const Tensor<T>& h_prev,
                 const Tensor<T>& c_prev, const std::string& style) const {
        if (x.shape() != Shape{width})
            throw ShapeError("factored cell: input " + shape_str(x.shape()) + ", want [" +
                             std::to_string(width) + "]");
        auto it = b.style_s.find(style);
        if (it == b.style_s.end()) throw ConfigError("factored cell: unknown style '" + style + "'");
        const auto& s = it->second;
        auto factored = [&](std::size_t g, const Tensor<T>& v) {
            return tp.matmul(compose_gate_matrix(tp, b.q[g], s[g], b.lam[g]), v);
        };
        Tensor<T> x_gate;
        if (bypass_input_gate) {
            x_gate = x;
        } else {
            x_gate = tp.mul(tp.sigmoid(tp.add(factored(0, x), tp.matmul(b.wh[0], h_prev))), x);
        }
        auto gate = [&](std::size_t g) {
            return tp.add(tp.add(factored(g, x_gate), tp.matmul(b.wh[g], h_prev)), b.bias[g]);
        };
        Tensor<T> i = tp.sigmoid(gate(1));
        Tensor<T> f = tp.sigmoid(gate(2));
        Tensor<T> o = tp.sigmoid(gate(3));
        Tensor<T> g = tanh_candidate ? tp.tanh(gate(4)) : tp.sigmoid(gate(4));
        Tensor<T> update = bypass_input_gate ? tp.mul(i, g) : tp.mul(x_gate, g);
        Tensor<T> c = tp.add(tp.mul(f, c_prev), update);
        Tensor<T> h = tp.mul(o, tp.tanh(c));
        return {h, c, x_gate, i, f, o, g};
    }
};

struct StyledConfig {
    std::size_t vocab = 0;
    std::size_t feat_dim = 0;
    std::size_t embed = 300;
    std::size_t hidden = 512;  // also the cell input width; must exceed embed
    std::size_t rank = 64;
    std::size_t attn = 64;
    bool tanh_candidate = false;
    bool bypass_input_gate = false;
    std::vector<std::string> styles = {"romantic", "humorous"};
    double lr = 2e-5;
    std::size_t batch = 96;
    std::size_t epochs = 60;
    std::uint64_t seed = 1;
};

template <class T>
struct StyledExample {
    Tensor<T> features;
    std::string style;
    std::vector<int> tokens;  // <s> ... </s>
};

// Stylized caption generator around the factored cell: soft additive
// attention over region features, a context slice concatenated to the token
// embedding (so the cell input width equals the hidden width), per-style S
// factors, shared everything else. Trained bidirectionally like the factual
// captioner; generation is forward-only.
template <class T>
class StyledCaptioner {
public:
    StyledCaptioner(StyledConfig cfg) : cfg_(cfg) {
        if (cfg_.vocab < 5) throw ConfigError("styled captioner: vocabulary too small");
        if (cfg_.feat_dim == 0) throw ConfigError("styled captioner: feature width must be set");
        if (cfg_.hidden <= cfg_.embed)
            throw ConfigError("styled captioner: hidden width must exceed embed width "
                              "(the context slice fills the difference)");
        Rng rng(cfg_.seed);
        T a = static_cast<T>(0.08);
        auto u = [&](const char* name, Shape s) {
            return params_.add(name, Tensor<T>::uniform(std::move(s), rng, -a, a));
        };
        emb_ = u("emb", {cfg_.vocab, cfg_.embed});
        attn_wq_ = u("attn.w_query", {cfg_.attn, cfg_.hidden});
        attn_wk_ = u("attn.w_key", {cfg_.attn, cfg_.feat_dim});
        attn_v_ = u("attn.w_score", {cfg_.attn});
        ctx_proj_ = u("ctx.proj", {cfg_.hidden - cfg_.embed, cfg_.feat_dim});
        cell_ = FactoredLstm<T>(params_, "cell", cfg_.hidden, cfg_.rank, cfg_.styles,
                                cfg_.tanh_candidate, cfg_.bypass_input_gate, rng);
        out_fwd_ = u("out.w_fwd", {cfg_.hidden, cfg_.hidden});
        out_bwd_ = u("out.w_bwd", {cfg_.hidden, cfg_.hidden});
        out_bias_ = params_.add("out.bias", Tensor<T>::zeros({cfg_.hidden}));
        readout_ = u("out.readout", {cfg_.vocab, cfg_.hidden});
    }

    const StyledConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    const FactoredLstm<T>& cell() const { return cell_; }

    struct Bound {
        Tensor<T> emb, attn_wq, attn_wk, attn_v, ctx_proj;
        typename FactoredLstm<T>::Bound cell;
        Tensor<T> out_fwd, out_bwd, out_bias, readout;
    };

    Bound bind(Tape<T>& tp) const {
        Bound b;
        b.emb = tp.param(params_, emb_);
        b.attn_wq = tp.param(params_, attn_wq_);
        b.attn_wk = tp.param(params_, attn_wk_);
        b.attn_v = tp.param(params_, attn_v_);
        b.ctx_proj = tp.param(params_, ctx_proj_);
        b.cell = cell_.bind(tp, params_);
        b.out_fwd = tp.param(params_, out_fwd_);
        b.out_bwd = tp.param(params_, out_bwd_);
        b.out_bias = tp.param(params_, out_bias_);
        b.readout = tp.param(params_, readout_);
        return b;
    }

    // Soft additive attention over region features with the hidden state as
    // query; returns the attended context (feature width).
    Tensor<T> attend(Tape<T>& tp, const Bound& b, const Tensor<T>& feats,
                     const Tensor<T>& h) const {
        Tensor<T> keys = tp.matmul(feats, tp.transpose(b.attn_wk));        // (k,A)
        Tensor<T> act = tp.tanh(tp.add(keys, tp.matmul(b.attn_wq, h)));    // broadcast query
        Tensor<T> weights = tp.softmax(tp.matmul(act, b.attn_v));          // (k)
        return tp.matmul(weights, feats);
    }

    // Cell input: [embedding; projected context] with total width = hidden.
    Tensor<T> fuse_input(Tape<T>& tp, const Bound& b, const Tensor<T>& feats, int token,
                         const Tensor<T>& h_prev) const {
        Tensor<T> x = tp.row(b.emb, static_cast<std::size_t>(token));
        Tensor<T> ctx = attend(tp, b, feats, h_prev);
        return tp.concat({x, tp.matmul(b.ctx_proj, ctx)}, 0);
    }

    struct StepOut {
        typename FactoredLstm<T>::StepOut cell;
        Tensor<T> logits;
    };

    StepOut step(Tape<T>& tp, const Bound& b, const Tensor<T>& feats, int token,
                 const Tensor<T>& h_prev, const Tensor<T>& c_prev, const std::string& style,
                 bool backward_dir) const {
        Tensor<T> x = fuse_input(tp, b, feats, token, h_prev);
        auto cs = cell_.step(tp, b.cell, x, h_prev, c_prev, style);
        Tensor<T> y = tp.add(tp.matmul(backward_dir ? b.out_bwd : b.out_fwd, cs.h), b.out_bias);
        Tensor<T> logits = tp.matmul(b.readout, y);
        return {cs, logits};
    }

    struct BiOut {
        std::vector<Tensor<T>> y;             // combined readouts per position
        std::vector<Tensor<T>> distributions; // softmax(readout * y_t)
        std::vector<Tensor<T>> h_fwd, h_bwd;
    };

    // Both directions over an already-embedded input sequence; the combined
    // readout y_t = W_f h^f_t + W_b h^b_t + b feeds the next-token softmax.
    BiOut bidirectional(Tape<T>& tp, const Bound& b, const std::vector<Tensor<T>>& inputs,
                        const std::string& style) const {
        if (inputs.empty()) throw ConfigError("bidirectional: empty sequence");
        std::size_t n = inputs.size();
        BiOut out;
        Tensor<T> h = tp.leaf(Tensor<T>::zeros({cfg_.hidden}));
        Tensor<T> c = tp.leaf(Tensor<T>::zeros({cfg_.hidden}));
        for (std::size_t t = 0; t < n; ++t) {
            auto cs = cell_.step(tp, b.cell, inputs[t], h, c, style);
            h = cs.h;
            c = cs.c;
            out.h_fwd.push_back(h);
        }
        h = tp.leaf(Tensor<T>::zeros({cfg_.hidden}));
        c = tp.leaf(Tensor<T>::zeros({cfg_.hidden}));
        out.h_bwd.resize(n);
        for (std::size_t t = n; t-- > 0;) {
            auto cs = cell_.step(tp, b.cell, inputs[t], h, c, style);
            h = cs.h;
            c = cs.c;
            out.h_bwd[t] = h;
        }
        for (std::size_t t = 0; t < n; ++t) {
            Tensor<T> y = tp.add(tp.add(tp.matmul(b.out_fwd, out.h_fwd[t]),
                                        tp.matmul(b.out_bwd, out.h_bwd[t])),
                                 b.out_bias);
            out.y.push_back(y);
            out.distributions.push_back(tp.softmax(tp.matmul(b.readout, y)));
        }
        return out;
    }

    Tensor<T> direction_loss(Tape<T>& tp, const Bound& b, const Tensor<T>& feats,
                             const std::vector<int>& tokens, const std::string& style,
                             bool backward_dir) const {
        if (tokens.size() < 2) throw ConfigError("caption too short to train on");
        Tensor<T> h = tp.leaf(Tensor<T>::zeros({cfg_.hidden}));
        Tensor<T> c = tp.leaf(Tensor<T>::zeros({cfg_.hidden}));
        std::vector<Tensor<T>> logits;
        std::vector<std::size_t> targets;
        for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
            StepOut so = step(tp, b, feats, tokens[t], h, c, style, backward_dir);
            h = so.cell.h;
            c = so.cell.c;
            logits.push_back(so.logits);
            targets.push_back(static_cast<std::size_t>(tokens[t + 1]));
        }
        Tensor<T> logp = tp.log(tp.softmax(tp.stack_rows(logits)), T(1e-12));
        return tp.scale(tp.mean(tp.pick_per_row(logp, targets)), T(-1));
    }

    // Style-routed NLL: the example's own style selects the S factors; the
    // reversed-direction term trains the backward readout causally.
    Tensor<T> example_loss(Tape<T>& tp, const Bound& b, const StyledExample<T>& ex) const {
        validate(ex);
        Tensor<T> feats = tp.leaf(ex.features);
        Tensor<T> fwd = direction_loss(tp, b, feats, ex.tokens, ex.style, false);
        std::vector<int> rev(ex.tokens.rbegin() + 1, ex.tokens.rend() - 1);
        rev.insert(rev.begin(), Vocabulary::kStart);
        rev.push_back(Vocabulary::kEnd);
        Tensor<T> bwd = direction_loss(tp, b, feats, rev, ex.style, true);
        return tp.scale(tp.add(fwd, bwd), T(0.5));
    }

    // Alternating style batches: one batch of each style in turn.
    std::vector<double> fit(const std::vector<StyledExample<T>>& data) {
        if (data.empty()) throw ConfigError("train: empty corpus");
        std::map<std::string, std::vector<std::size_t>> by_style;
        for (std::size_t i = 0; i < data.size(); ++i) {
            validate(data[i]);
            by_style[data[i].style].push_back(i);
        }
        for (const auto& st : cfg_.styles)
            if (by_style.find(st) == by_style.end() || by_style[st].empty())
                throw ConfigError("train: style '" + st + "' has no examples");
        Adam<T> opt(cfg_.lr);
        Rng order(cfg_.seed ^ 0x57ull);
        std::vector<double> history;
        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            std::map<std::string, std::vector<std::size_t>> shuffled;
            std::size_t max_batches = 0;
            for (const auto& st : cfg_.styles) {
                auto& ids = by_style[st];
                std::vector<std::size_t> perm;
                for (std::size_t p : order.permutation(ids.size())) perm.push_back(ids[p]);
                max_batches = std::max(max_batches,
                                       (perm.size() + cfg_.batch - 1) / cfg_.batch);
                shuffled.emplace(st, std::move(perm));
            }
            double total = 0.0;
            std::size_t count = 0;
            for (std::size_t bi = 0; bi < max_batches; ++bi) {
                for (const auto& st : cfg_.styles) {
                    const auto& ids = shuffled[st];
                    std::size_t lo = bi * cfg_.batch;
                    if (lo >= ids.size()) continue;
                    std::size_t hi = std::min(ids.size(), lo + cfg_.batch);
                    Tape<T> tp;
                    Bound bound = bind(tp);
                    Tensor<T> loss;
                    for (std::size_t i = lo; i < hi; ++i) {
                        Tensor<T> l = example_loss(tp, bound, data[ids[i]]);
                        loss = i == lo ? l : tp.add(loss, l);
                    }
                    loss = tp.scale(loss, T(1) / static_cast<T>(hi - lo));
                    total += static_cast<double>(loss.item()) * static_cast<double>(hi - lo);
                    count += hi - lo;
                    opt.step(params_, tp.backward(loss));
                }
            }
            history.push_back(total / static_cast<double>(count));
        }
        return history;
    }

    std::vector<int> generate(const Tensor<T>& features, const std::string& style,
                              const DecodeConfig& dc) const {
        if (features.rank() != 2 || features.dim(1) != cfg_.feat_dim)
            throw ConfigError("generate: features are " + shape_str(features.shape()) +
                              ", model wants k x " + std::to_string(cfg_.feat_dim));
        if (cell_.style_s.find(style) == cell_.style_s.end())
            throw ConfigError("generate: unknown style '" + style + "'");
        struct State {
            Tensor<T> h, c;
            int token = Vocabulary::kStart;
        };
        auto run = [this, &features, &style](const State& s) {
            Tape<T> tp;
            Bound b = bind(tp);
            return step(tp, b, tp.leaf(features), s.token, tp.leaf(s.h), tp.leaf(s.c), style,
                        false);
        };
        State init{Tensor<T>::zeros({cfg_.hidden}), Tensor<T>::zeros({cfg_.hidden}),
                   Vocabulary::kStart};
        auto stepfn = [&](const State& s) {
            StepOut so = run(s);
            Tape<T> tp;
            Tensor<T> logp = tp.log(tp.softmax(tp.leaf(so.logits)), T(1e-12));
            std::vector<double> out(logp.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(logp[i]);
            out[Vocabulary::kPad] = -1e30;
            out[Vocabulary::kStart] = -1e30;
            return out;
        };
        auto advance = [&](const State& s, int token) {
            StepOut so = run(s);
            State next;
            next.h = so.cell.h;
            next.h.node = -1;
            next.c = so.cell.c;
            next.c.node = -1;
            next.token = token;
            return next;
        };
        return beam_search(init, Vocabulary::kEnd, dc, stepfn, advance);
    }

private:
    void validate(const StyledExample<T>& ex) const {
        if (ex.features.rank() != 2 || ex.features.dim(1) != cfg_.feat_dim)
            throw ConfigError("styled example: features are " + shape_str(ex.features.shape()) +
                              ", model wants k x " + std::to_string(cfg_.feat_dim));
        if (cell_.style_s.find(ex.style) == cell_.style_s.end())
            throw ConfigError("styled example: unknown style '" + ex.style + "'");
        for (int t : ex.tokens)
            if (t < 0 || t >= static_cast<int>(cfg_.vocab))
                throw ConfigError("styled example: token id out of range");
    }

    StyledConfig cfg_;
    ParameterSet<T> params_;
    int emb_, attn_wq_, attn_wk_, attn_v_, ctx_proj_;
    FactoredLstm<T> cell_;
    int out_fwd_, out_bwd_, out_bias_, readout_;
};

}  // namespace capsumt
