#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "capsumt/adam.hpp"
#include "capsumt/common.hpp"
#include "capsumt/decode.hpp"
#include "capsumt/lstm.hpp"
#include "capsumt/rng.hpp"
#include "capsumt/tape.hpp"
#include "capsumt/text.hpp"

namespace capsumt {

struct CaptionerConfig {
    std::size_t vocab = 0;
    std::size_t feat_dim = 0;  // D of the ingested region features
    std::size_t embed = 300;
    std::size_t hidden = 512;
    std::size_t attn = 64;  // width of the attention score layers
    double lr = 2e-5;
    std::size_t batch = 64;
    std::size_t epochs = 70;
    std::uint64_t seed = 1;
};

// One training example: region features plus an encoded caption
// (<s> ... </s> ids).
template <class T>
struct CaptionExample {
    Tensor<T> features;  // k x D
    std::vector<int> tokens;
};

// Factual caption decoder. Channel attention rescales feature channels, the
// spatially attended context is blended with a visual sentinel, and the fused
// [context; embedding] vector drives a recurrent cell. Training is teacher
// forced in both directions (a forward cell and a backward cell over the
// reversed caption, each with a causal next-token loss); generation runs the
// forward cell only, so the decoding path is exactly the path that was
// trained.
template <class T>
class FactualCaptioner {
public:
    FactualCaptioner(CaptionerConfig cfg) : cfg_(cfg) {
        if (cfg_.vocab < 5) throw ConfigError("captioner: vocabulary too small");
        if (cfg_.feat_dim == 0) throw ConfigError("captioner: feature width must be set");
        Rng rng(cfg_.seed);
        T a = static_cast<T>(0.08);
        auto u = [&](const char* name, Shape s) {
            return params_.add(name, Tensor<T>::uniform(std::move(s), rng, -a, a));
        };
        emb_ = u("emb", {cfg_.vocab, cfg_.embed});
        ch_w_outer_ = u("attn.ch.w_outer", {cfg_.attn});
        ch_bias_ = params_.add("attn.ch.bias", Tensor<T>::zeros({cfg_.attn}));
        ch_w_hidden_ = u("attn.ch.w_hidden", {cfg_.attn, cfg_.hidden});
        ch_w_score_ = u("attn.ch.w_score", {cfg_.attn});
        sp_w_feat_ = u("attn.sp.w_feat", {cfg_.feat_dim, cfg_.attn});
        sp_bias_ = params_.add("attn.sp.bias", Tensor<T>::zeros({cfg_.attn}));
        sp_w_hidden_ = u("attn.sp.w_hidden", {cfg_.attn, cfg_.hidden});
        sp_w_score_ = u("attn.sp.w_score", {cfg_.attn});
        sent_w_x_ = u("sent.w_x", {cfg_.hidden, cfg_.embed});
        sent_w_h_ = u("sent.w_h", {cfg_.hidden, cfg_.hidden});
        blend_w_s_ = u("blend.w_s", {cfg_.attn, cfg_.hidden});
        blend_w_h_ = u("blend.w_h", {cfg_.attn, cfg_.hidden});
        blend_w_score_ = u("blend.w_score", {cfg_.attn});
        ctx_proj_ = u("ctx.proj", {cfg_.hidden, cfg_.feat_dim});
        fwd_ = LstmCell<T>(params_, "cell.fwd", cfg_.hidden + cfg_.embed, cfg_.hidden, rng);
        bwd_ = LstmCell<T>(params_, "cell.bwd", cfg_.hidden + cfg_.embed, cfg_.hidden, rng);
        out_w_ = u("out.w", {cfg_.vocab, cfg_.hidden});
        out_b_ = params_.add("out.b", Tensor<T>::zeros({cfg_.vocab}));
    }

    const CaptionerConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    struct Attend {
        Tensor<T> psi;      // channel attention over D
        Tensor<T> phi;      // spatial attention over k regions
        Tensor<T> xtilde;   // raw per-region scores (pre-softmax)
        Tensor<T> context;  // attended context, width D
    };

    struct Bound {
        Tensor<T> emb;
        Tensor<T> ch_w_outer, ch_bias, ch_w_hidden, ch_w_score;
        Tensor<T> sp_w_feat, sp_bias, sp_w_hidden, sp_w_score;
        Tensor<T> sent_w_x, sent_w_h;
        Tensor<T> blend_w_s, blend_w_h, blend_w_score;
        Tensor<T> ctx_proj;
        typename LstmCell<T>::Bound fwd, bwd;
        Tensor<T> out_w, out_b;
    };

    Bound bind(Tape<T>& tp) const {
        Bound b;
        b.emb = tp.param(params_, emb_);
        b.ch_w_outer = tp.param(params_, ch_w_outer_);
        b.ch_bias = tp.param(params_, ch_bias_);
        b.ch_w_hidden = tp.param(params_, ch_w_hidden_);
        b.ch_w_score = tp.param(params_, ch_w_score_);
        b.sp_w_feat = tp.param(params_, sp_w_feat_);
        b.sp_bias = tp.param(params_, sp_bias_);
        b.sp_w_hidden = tp.param(params_, sp_w_hidden_);
        b.sp_w_score = tp.param(params_, sp_w_score_);
        b.sent_w_x = tp.param(params_, sent_w_x_);
        b.sent_w_h = tp.param(params_, sent_w_h_);
        b.blend_w_s = tp.param(params_, blend_w_s_);
        b.blend_w_h = tp.param(params_, blend_w_h_);
        b.blend_w_score = tp.param(params_, blend_w_score_);
        b.ctx_proj = tp.param(params_, ctx_proj_);
        b.fwd = fwd_.bind(tp, params_);
        b.bwd = bwd_.bind(tp, params_);
        b.out_w = tp.param(params_, out_w_);
        b.out_b = tp.param(params_, out_b_);
        return b;
    }

    // Channel attention over feature columns, then spatial attention over the
    // channel-modulated regions. Returns the attended context and both
    // distributions.
    Attend attend(Tape<T>& tp, const Bound& b, const Tensor<T>& feats, const Tensor<T>& h) const {
        if (feats.rank() != 2 || feats.dim(1) != cfg_.feat_dim)
            throw ShapeError("attend: features must be k x " + std::to_string(cfg_.feat_dim) +
                             ", got " + shape_str(feats.shape()));
        std::size_t k = feats.dim(0);
        // Per-channel descriptor: mean over regions.
        Tensor<T> pool = tp.leaf(Tensor<T>::full({k}, T(1) / static_cast<T>(k)));
        Tensor<T> chan = tp.matmul(pool, feats);  // (D)
        Tensor<T> outer = tp.matmul(tp.reshape(b.ch_w_outer, {cfg_.attn, 1}),
                                    tp.reshape(chan, {1, cfg_.feat_dim}));
        Tensor<T> h_term = tp.reshape(tp.matmul(b.ch_w_hidden, h), {cfg_.attn, 1});
        Tensor<T> bias = tp.reshape(b.ch_bias, {cfg_.attn, 1});
        Tensor<T> ch_act = tp.tanh(tp.add(tp.add(outer, bias), h_term));  // broadcast over channels
        Tensor<T> psi = tp.softmax(tp.matmul(b.ch_w_score, ch_act));      // (D)

        Tensor<T> modulated = tp.mul(feats, psi);  // channel rescaling, broadcast over rows
        Tensor<T> sp_act = tp.tanh(tp.add(tp.add(tp.matmul(modulated, b.sp_w_feat), b.sp_bias),
                                          tp.matmul(b.sp_w_hidden, h)));  // (k,A) + (A) + (A)
        Tensor<T> xtilde = tp.matmul(sp_act, b.sp_w_score);               // (k)
        Tensor<T> phi = tp.softmax(xtilde);
        Tensor<T> context = tp.matmul(phi, modulated);  // (D)
        return {psi, phi, xtilde, context};
    }

    struct Blend {
        Tensor<T> a_hat;    // blended context, hidden width
        Tensor<T> delta;    // sentinel gate, scalar in (0,1)
        Tensor<T> chi_hat;  // softmax over [region scores; sentinel score]
        Tensor<T> sentinel;
    };

    // Visual sentinel and adaptive blending. `a_proj` is the attended context
    // already projected to the hidden width; `memory` is the forward cell's
    // memory from the previous step.
    Blend blend(Tape<T>& tp, const Bound& b, const Tensor<T>& x, const Tensor<T>& h_prev,
                const Tensor<T>& memory, const Tensor<T>& a_proj, const Tensor<T>& xtilde) const {
        Tensor<T> m = tp.sigmoid(tp.add(tp.matmul(b.sent_w_x, x), tp.matmul(b.sent_w_h, h_prev)));
        Tensor<T> s = tp.mul(m, tp.tanh(memory));
        Tensor<T> score = tp.matmul(
            b.blend_w_score,
            tp.tanh(tp.add(tp.matmul(b.blend_w_s, s), tp.matmul(b.blend_w_h, h_prev))));
        Tensor<T> all = tp.concat({xtilde, tp.reshape(score, {1})}, 0);
        Tensor<T> chi_hat = tp.softmax(all);
        Tensor<T> delta = tp.pick(chi_hat, xtilde.size());
        Tensor<T> one_minus = tp.affine(delta, T(-1), T(1));
        Tensor<T> a_hat = tp.add(tp.mul(delta, s), tp.mul(one_minus, a_proj));
        return {a_hat, delta, chi_hat, s};
    }

    struct StepOut {
        typename LstmCell<T>::State state;
        Tensor<T> logits;
    };

    // One decoder step: embed the previous token, attend with the previous
    // hidden state, blend with the sentinel, then advance the cell on the
    // fused [context; embedding] input.
    StepOut step(Tape<T>& tp, const Bound& b, const Tensor<T>& feats, int prev_token,
                 const typename LstmCell<T>::State& prev, bool backward_cell = false) const {
        Tensor<T> x = tp.row(b.emb, static_cast<std::size_t>(prev_token));
        Attend att = attend(tp, b, feats, prev.h);
        Tensor<T> a_proj = tp.matmul(b.ctx_proj, att.context);
        Blend bl = blend(tp, b, x, prev.h, prev.c, a_proj, att.xtilde);
        Tensor<T> fused = tp.concat({bl.a_hat, x}, 0);
        auto state = LstmCell<T>::step(tp, backward_cell ? b.bwd : b.fwd, fused, prev);
        Tensor<T> logits = tp.add(tp.matmul(b.out_w, state.h), b.out_b);
        return {state, logits};
    }

    // Mean next-token NLL along one direction of a teacher-forced caption.
    Tensor<T> direction_loss(Tape<T>& tp, const Bound& b, const Tensor<T>& feats,
                             const std::vector<int>& tokens, bool backward_cell) const {
        if (tokens.size() < 2) throw ConfigError("caption too short to train on");
        auto state = (backward_cell ? bwd_ : fwd_).zero_state(tp);
        std::vector<Tensor<T>> logits;
        std::vector<std::size_t> targets;
        for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
            StepOut so = step(tp, b, feats, tokens[t], state, backward_cell);
            state = so.state;
            logits.push_back(so.logits);
            targets.push_back(static_cast<std::size_t>(tokens[t + 1]));
        }
        Tensor<T> logp = tp.log(tp.softmax(tp.stack_rows(logits)), T(1e-12));
        return tp.scale(tp.mean(tp.pick_per_row(logp, targets)), T(-1));
    }

    // Teacher-forced loss: forward direction plus the reversed-sequence
    // auxiliary, averaged.
    Tensor<T> example_loss(Tape<T>& tp, const Bound& b, const CaptionExample<T>& ex) const {
        validate(ex);
        Tensor<T> feats = tp.leaf(ex.features);
        Tensor<T> fwd = direction_loss(tp, b, feats, ex.tokens, false);
        std::vector<int> rev(ex.tokens.rbegin() + 1, ex.tokens.rend() - 1);
        rev.insert(rev.begin(), Vocabulary::kStart);
        rev.push_back(Vocabulary::kEnd);
        Tensor<T> bwd = direction_loss(tp, b, feats, rev, true);
        return tp.scale(tp.add(fwd, bwd), T(0.5));
    }

    std::vector<double> fit(const std::vector<CaptionExample<T>>& data) {
        if (data.empty()) throw ConfigError("train: empty corpus");
        for (const auto& ex : data) validate(ex);
        Adam<T> opt(cfg_.lr);
        Rng order(cfg_.seed ^ 0xf17ull);
        std::vector<double> history;
        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            double total = 0.0;
            auto perm = order.permutation(data.size());
            for (std::size_t b0 = 0; b0 < perm.size(); b0 += cfg_.batch) {
                Tape<T> tp;
                Bound bound = bind(tp);
                Tensor<T> batch_loss;
                std::size_t n = 0;
                for (std::size_t i = b0; i < std::min(perm.size(), b0 + cfg_.batch); ++i, ++n) {
                    Tensor<T> l = example_loss(tp, bound, data[perm[i]]);
                    batch_loss = n == 0 ? l : tp.add(batch_loss, l);
                }
                batch_loss = tp.scale(batch_loss, T(1) / static_cast<T>(n));
                total += static_cast<double>(batch_loss.item()) * static_cast<double>(n);
                opt.step(params_, tp.backward(batch_loss));
            }
            history.push_back(total / static_cast<double>(data.size()));
        }
        return history;
    }

    // Autoregressive decoding with the forward cell; beam 1 is greedy.
    std::vector<int> decode(const Tensor<T>& features, const DecodeConfig& dc) const {
        if (features.rank() != 2 || features.dim(1) != cfg_.feat_dim)
            throw ConfigError("decode: features are " + shape_str(features.shape()) +
                              ", model wants k x " + std::to_string(cfg_.feat_dim));
        struct State {
            Tensor<T> h, c;
            int token = Vocabulary::kStart;
        };
        auto run = [this, &features](const State& s) {
            Tape<T> tp;
            Bound b = bind(tp);
            typename LstmCell<T>::State prev{tp.leaf(s.h), tp.leaf(s.c)};
            return step(tp, b, tp.leaf(features), s.token, prev, false);
        };
        State init{Tensor<T>::zeros({cfg_.hidden}), Tensor<T>::zeros({cfg_.hidden}),
                   Vocabulary::kStart};
        auto stepfn = [&](const State& s) {
            StepOut so = run(s);
            Tape<T> tp;
            Tensor<T> logp = tp.log(tp.softmax(tp.leaf(so.logits)), T(1e-12));
            std::vector<double> out(logp.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(logp[i]);
            // The pad/start tokens are never valid emissions.
            out[Vocabulary::kPad] = -1e30;
            out[Vocabulary::kStart] = -1e30;
            return out;
        };
        auto advance = [&](const State& s, int token) {
            StepOut so = run(s);
            State next;
            next.h = so.state.h;
            next.h.node = -1;
            next.c = so.state.c;
            next.c.node = -1;
            next.token = token;
            return next;
        };
        return beam_search(init, Vocabulary::kEnd, dc, stepfn, advance);
    }

private:
    void validate(const CaptionExample<T>& ex) const {
        if (ex.features.rank() != 2 || ex.features.dim(1) != cfg_.feat_dim)
            throw ConfigError("caption example: features are " + shape_str(ex.features.shape()) +
                              ", model wants k x " + std::to_string(cfg_.feat_dim));
        for (int t : ex.tokens)
            if (t < 0 || t >= static_cast<int>(cfg_.vocab))
                throw ConfigError("caption example: token id " + std::to_string(t) +
                                  " outside vocabulary of " + std::to_string(cfg_.vocab));
    }

    CaptionerConfig cfg_;
    ParameterSet<T> params_;
    int emb_;
    int ch_w_outer_, ch_bias_, ch_w_hidden_, ch_w_score_;
    int sp_w_feat_, sp_bias_, sp_w_hidden_, sp_w_score_;
    int sent_w_x_, sent_w_h_;
    int blend_w_s_, blend_w_h_, blend_w_score_;
    int ctx_proj_;
    LstmCell<T> fwd_, bwd_;
    int out_w_, out_b_;
};

}  // namespace capsumt
