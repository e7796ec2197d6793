#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "capsumt/adam.hpp"
#include "capsumt/common.hpp"
#include "capsumt/decode.hpp"
#include "capsumt/rng.hpp"
#include "capsumt/tape.hpp"
#include "capsumt/text.hpp"

namespace capsumt {

// Per-document union of the base vocabulary and the source-only tokens.
// Source-only tokens get temporary ids starting at base size, in order of
// first occurrence; the mapping is invertible for the document's lifetime.
class ExtendedVocab {
public:
    ExtendedVocab(const Vocabulary& base, const std::vector<std::string>& src_tokens)
        : base_(&base) {
        for (const auto& tok : src_tokens) {
            int id = base.contains(tok) ? base.id(tok) : temp_id(tok);
            source_ids_.push_back(static_cast<std::size_t>(id));
        }
    }

    std::size_t base_size() const { return base_->size(); }
    std::size_t size() const { return base_->size() + oov_words_.size(); }
    std::size_t oov_count() const { return oov_words_.size(); }

    // Source positions mapped into the extended id space.
    const std::vector<std::size_t>& source_ids() const { return source_ids_; }

    // Target-side mapping: base id, else temporary id, else <unk>.
    std::size_t target_id(const std::string& tok) const {
        if (base_->contains(tok)) return static_cast<std::size_t>(base_->id(tok));
        auto it = oov_ids_.find(tok);
        if (it != oov_ids_.end()) return static_cast<std::size_t>(it->second);
        return static_cast<std::size_t>(Vocabulary::kUnk);
    }

    const std::string& word(std::size_t ext_id) const {
        if (ext_id < base_->size()) return base_->word(ext_id);
        return oov_words_.at(ext_id - base_->size());
    }

    // Embedding-input id: temporary ids have no embedding row and feed <unk>.
    std::size_t input_id(std::size_t ext_id) const {
        return ext_id < base_->size() ? ext_id : static_cast<std::size_t>(Vocabulary::kUnk);
    }

private:
    int temp_id(const std::string& tok) {
        auto it = oov_ids_.find(tok);
        if (it != oov_ids_.end()) return it->second;
        int id = static_cast<int>(base_->size() + oov_words_.size());
        oov_ids_.emplace(tok, id);
        oov_words_.push_back(tok);
        return id;
    }

    const Vocabulary* base_;
    std::vector<std::size_t> source_ids_;
    std::vector<std::string> oov_words_;
    std::unordered_map<std::string, int> oov_ids_;
};

struct SummarizerConfig {
    std::size_t vocab = 0;
    std::size_t d_model = 128;
    std::size_t heads = 4;
    std::size_t d_ff = 256;
    std::size_t layers = 1;
    std::size_t attn = 32;  // additive-energy width (unified + pointer attention)
    double dropout = 0.1;
    double coverage_weight = 1.0;
    bool use_coverage = true;
    std::size_t coverage_start_epoch = 0;  // two-phase schedule: plain loss before this epoch
    std::size_t max_src = 64;
    std::size_t max_tgt = 32;
    double lr = 2e-5;
    std::size_t batch = 4;
    std::size_t epochs = 100;
    std::uint64_t seed = 1;
};

struct SummaryExample {
    std::vector<std::string> source;
    std::vector<std::string> target;
};

struct SummarizeOptions {
    DecodeConfig decode;
    std::optional<double> force_pgen;  // clamp the copy/generate switch (diagnostics)
};

// Single-stack summarization transformer: each layer couples multi-head
// attention with an additive "unified" attention, fuses the two through a
// learned projection with residual + layer norm, and the decoder adds a
// pointer-generator head with a coverage vector over source positions. The
// coverage feature enters both the cross-attention fuse (as a projected
// padded vector) and the pointer energies (See-style per-position term).
template <class T>
class Summarizer {
public:
    Summarizer(SummarizerConfig cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
        if (cfg_.vocab == 0) cfg_.vocab = vocab_.size();
        if (cfg_.vocab != vocab_.size())
            throw ConfigError("summarizer: config vocab " + std::to_string(cfg_.vocab) +
                              " != vocabulary size " + std::to_string(vocab_.size()));
        if (cfg_.heads == 0 || cfg_.d_model % cfg_.heads != 0)
            throw ConfigError("summarizer: head count must divide d_model");
        if (cfg_.layers == 0) throw ConfigError("summarizer: need at least one layer");
        if (cfg_.dropout < 0.0 || cfg_.dropout >= 1.0)
            throw ConfigError("summarizer: dropout must be in [0,1)");
        d_k_ = cfg_.d_model / cfg_.heads;
        Rng rng(cfg_.seed);
        T a = static_cast<T>(0.08);
        auto u = [&](const std::string& name, Shape s) {
            return params_.add(name, Tensor<T>::uniform(std::move(s), rng, -a, a));
        };
        auto zero = [&](const std::string& name, Shape s) {
            return params_.add(name, Tensor<T>::zeros(std::move(s)));
        };
        auto ones = [&](const std::string& name, Shape s) {
            return params_.add(name, Tensor<T>::full(std::move(s), T(1)));
        };
        emb_ = u("emb", {cfg_.vocab, cfg_.d_model});
        auto mha = [&](const std::string& p) {
            MhaIds m;
            for (std::size_t j = 0; j < cfg_.heads; ++j) {
                m.wq.push_back(u(p + ".wq" + std::to_string(j), {cfg_.d_model, d_k_}));
                m.wk.push_back(u(p + ".wk" + std::to_string(j), {cfg_.d_model, d_k_}));
                m.wv.push_back(u(p + ".wv" + std::to_string(j), {cfg_.d_model, d_k_}));
            }
            m.wo = u(p + ".wo", {cfg_.d_model, cfg_.d_model});
            return m;
        };
        auto una = [&](const std::string& p) {
            UnaIds x;
            x.wq = u(p + ".wq", {cfg_.attn, cfg_.d_model});
            x.wk = u(p + ".wk", {cfg_.attn, cfg_.d_model});
            x.v = u(p + ".v", {cfg_.attn});
            return x;
        };
        auto ffn = [&](const std::string& p, FfnIds& f) {
            f.w1 = u(p + ".w1", {cfg_.d_ff, cfg_.d_model});
            f.b1 = zero(p + ".b1", {cfg_.d_ff});
            f.w2 = u(p + ".w2", {cfg_.d_model, cfg_.d_ff});
            f.b2 = zero(p + ".b2", {cfg_.d_model});
        };
        auto norm = [&](const std::string& p, LnIds& l) {
            l.g = ones(p + ".gain", {cfg_.d_model});
            l.b = zero(p + ".bias", {cfg_.d_model});
        };
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            std::string p = "enc" + std::to_string(l);
            EncLayerIds e;
            e.mha = mha(p + ".mha");
            e.una = una(p + ".una");
            e.fuse_w = u(p + ".fuse.w", {cfg_.d_model, 2 * cfg_.d_model});
            e.fuse_b = zero(p + ".fuse.b", {cfg_.d_model});
            norm(p + ".ln1", e.ln1);
            ffn(p + ".ffn", e.ffn);
            norm(p + ".ln2", e.ln2);
            enc_.push_back(e);
        }
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            std::string p = "dec" + std::to_string(l);
            DecLayerIds d;
            d.self_mha = mha(p + ".self_mha");
            d.self_una = una(p + ".self_una");
            d.fuse_self_w = u(p + ".fuse_self.w", {cfg_.d_model, 2 * cfg_.d_model});
            d.fuse_self_b = zero(p + ".fuse_self.b", {cfg_.d_model});
            norm(p + ".ln_a", d.ln_a);
            d.cross_mha = mha(p + ".cross_mha");
            d.cross_una = una(p + ".cross_una");
            // Fades in from zero as coverage starts mattering.
            d.cov_w = zero(p + ".fuse_cross.cov", {cfg_.d_model, cfg_.max_src});
            d.fuse_cross_w = u(p + ".fuse_cross.w", {cfg_.d_model, 3 * cfg_.d_model});
            d.fuse_cross_b = zero(p + ".fuse_cross.b", {cfg_.d_model});
            norm(p + ".ln_b", d.ln_b);
            ffn(p + ".ffn", d.ffn);
            norm(p + ".ln_c", d.ln_c);
            dec_.push_back(d);
        }
        ptr_wq_ = u("ptr.wq", {cfg_.attn, cfg_.d_model});
        ptr_wk_ = u("ptr.wk", {cfg_.attn, cfg_.d_model});
        ptr_wcov_ = zero("ptr.w_cov", {cfg_.attn});
        ptr_b_ = zero("ptr.b", {cfg_.attn});
        ptr_v_ = u("ptr.v", {cfg_.attn});
        vh_w1_ = u("vocab_head.w1", {cfg_.d_model, 2 * cfg_.d_model});
        vh_b1_ = zero("vocab_head.b1", {cfg_.d_model});
        vh_w2_ = u("vocab_head.w2", {cfg_.vocab, cfg_.d_model});
        vh_b2_ = zero("vocab_head.b2", {cfg_.vocab});
        sw_wh_ = u("switch.w_h", {cfg_.d_model});
        sw_wn_ = u("switch.w_n", {cfg_.d_model});
        sw_wx_ = u("switch.w_x", {cfg_.d_model});
        sw_b_ = zero("switch.b", {});
        pe_ = positional_encoding(std::max(cfg_.max_src, cfg_.max_tgt + 1), cfg_.d_model);
    }

    const SummarizerConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    // Fixed sinusoidal position table.
    static Tensor<T> positional_encoding(std::size_t max_len, std::size_t d_model) {
        Tensor<T> pe({max_len, d_model});
        for (std::size_t pos = 0; pos < max_len; ++pos)
            for (std::size_t i = 0; i < d_model; ++i) {
                double angle = static_cast<double>(pos) /
                               std::pow(10000.0, 2.0 * static_cast<double>(i / 2) /
                                                     static_cast<double>(d_model));
                pe.at(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
        return pe;
    }

    struct MhaIds {
        std::vector<int> wq, wk, wv;
        int wo = -1;
    };
    struct UnaIds {
        int wq = -1, wk = -1, v = -1;
    };
    struct FfnIds {
        int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    };
    struct LnIds {
        int g = -1, b = -1;
    };
    struct EncLayerIds {
        MhaIds mha;
        UnaIds una;
        int fuse_w = -1, fuse_b = -1;
        LnIds ln1;
        FfnIds ffn;
        LnIds ln2;
    };
    struct DecLayerIds {
        MhaIds self_mha;
        UnaIds self_una;
        int fuse_self_w = -1, fuse_self_b = -1;
        LnIds ln_a;
        MhaIds cross_mha;
        UnaIds cross_una;
        int cov_w = -1, fuse_cross_w = -1, fuse_cross_b = -1;
        LnIds ln_b;
        FfnIds ffn;
        LnIds ln_c;
    };

    struct MhaBound {
        std::vector<Tensor<T>> wq, wk, wv;
        Tensor<T> wo;
    };
    struct UnaBound {
        Tensor<T> wq, wk, v;
    };
    struct FfnBound {
        Tensor<T> w1, b1, w2, b2;
    };
    struct LnBound {
        Tensor<T> g, b;
    };
    struct EncLayerBound {
        MhaBound mha;
        UnaBound una;
        Tensor<T> fuse_w, fuse_b;
        LnBound ln1;
        FfnBound ffn;
        LnBound ln2;
    };
    struct DecLayerBound {
        MhaBound self_mha;
        UnaBound self_una;
        Tensor<T> fuse_self_w, fuse_self_b;
        LnBound ln_a;
        MhaBound cross_mha;
        UnaBound cross_una;
        Tensor<T> cov_w, fuse_cross_w, fuse_cross_b;
        LnBound ln_b;
        FfnBound ffn;
        LnBound ln_c;
    };

    struct Bound {
        Tensor<T> emb;
        std::vector<EncLayerBound> enc;
        std::vector<DecLayerBound> dec;
        Tensor<T> ptr_wq, ptr_wk, ptr_wcov, ptr_b, ptr_v;
        Tensor<T> vh_w1, vh_b1, vh_w2, vh_b2;
        Tensor<T> sw_wh, sw_wn, sw_wx, sw_b;
        Tensor<T> pe;
    };

    Bound bind(Tape<T>& tp) const {
        Bound b;
        auto bm = [&](const MhaIds& m) {
            MhaBound out;
            for (std::size_t j = 0; j < cfg_.heads; ++j) {
                out.wq.push_back(tp.param(params_, m.wq[j]));
                out.wk.push_back(tp.param(params_, m.wk[j]));
                out.wv.push_back(tp.param(params_, m.wv[j]));
            }
            out.wo = tp.param(params_, m.wo);
            return out;
        };
        auto bu = [&](const UnaIds& x) {
            return UnaBound{tp.param(params_, x.wq), tp.param(params_, x.wk),
                            tp.param(params_, x.v)};
        };
        auto bf = [&](const FfnIds& f) {
            return FfnBound{tp.param(params_, f.w1), tp.param(params_, f.b1),
                            tp.param(params_, f.w2), tp.param(params_, f.b2)};
        };
        auto bl = [&](const LnIds& l) {
            return LnBound{tp.param(params_, l.g), tp.param(params_, l.b)};
        };
        b.emb = tp.param(params_, emb_);
        for (const auto& e : enc_) {
            EncLayerBound eb;
            eb.mha = bm(e.mha);
            eb.una = bu(e.una);
            eb.fuse_w = tp.param(params_, e.fuse_w);
            eb.fuse_b = tp.param(params_, e.fuse_b);
            eb.ln1 = bl(e.ln1);
            eb.ffn = bf(e.ffn);
            eb.ln2 = bl(e.ln2);
            b.enc.push_back(std::move(eb));
        }
        for (const auto& d : dec_) {
            DecLayerBound db;
            db.self_mha = bm(d.self_mha);
            db.self_una = bu(d.self_una);
            db.fuse_self_w = tp.param(params_, d.fuse_self_w);
            db.fuse_self_b = tp.param(params_, d.fuse_self_b);
            db.ln_a = bl(d.ln_a);
            db.cross_mha = bm(d.cross_mha);
            db.cross_una = bu(d.cross_una);
            db.cov_w = tp.param(params_, d.cov_w);
            db.fuse_cross_w = tp.param(params_, d.fuse_cross_w);
            db.fuse_cross_b = tp.param(params_, d.fuse_cross_b);
            db.ln_b = bl(d.ln_b);
            db.ffn = bf(d.ffn);
            db.ln_c = bl(d.ln_c);
            b.dec.push_back(std::move(db));
        }
        b.ptr_wq = tp.param(params_, ptr_wq_);
        b.ptr_wk = tp.param(params_, ptr_wk_);
        b.ptr_wcov = tp.param(params_, ptr_wcov_);
        b.ptr_b = tp.param(params_, ptr_b_);
        b.ptr_v = tp.param(params_, ptr_v_);
        b.vh_w1 = tp.param(params_, vh_w1_);
        b.vh_b1 = tp.param(params_, vh_b1_);
        b.vh_w2 = tp.param(params_, vh_w2_);
        b.vh_b2 = tp.param(params_, vh_b2_);
        b.sw_wh = tp.param(params_, sw_wh_);
        b.sw_wn = tp.param(params_, sw_wn_);
        b.sw_wx = tp.param(params_, sw_wx_);
        b.sw_b = tp.param(params_, sw_b_);
        b.pe = tp.leaf(pe_);
        return b;
    }

    // Scaled dot-product attention per head, heads concatenated and projected.
    // `causal` restricts each query row to keys at or before its position
    // (queries and keys must then have equal length).
    Tensor<T> multi_head_attention(Tape<T>& tp, const MhaBound& m, const Tensor<T>& queries,
                                   const Tensor<T>& keys, const Tensor<T>& values,
                                   bool causal = false) const {
        if (queries.dim(queries.rank() - 1) != cfg_.d_model)
            throw ShapeError("multi_head_attention: query width != d_model");
        Tensor<T> q2 = queries.rank() == 1 ? tp.reshape(queries, {1, cfg_.d_model}) : queries;
        std::size_t nq = q2.dim(0), nk = keys.dim(0);
        Tensor<T> mask;
        if (causal) {
            if (nq != nk) throw ShapeError("multi_head_attention: causal needs square attention");
            Tensor<T> raw({nq, nk});
            for (std::size_t i = 0; i < nq; ++i)
                for (std::size_t j = 0; j < nk; ++j)
                    raw.at(i, j) = j > i ? T(-1e9) : T(0);
            mask = tp.leaf(raw);
        }
        std::vector<Tensor<T>> heads;
        T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k_)));
        for (std::size_t j = 0; j < cfg_.heads; ++j) {
            Tensor<T> q = tp.matmul(q2, m.wq[j]);
            Tensor<T> k = tp.matmul(keys, m.wk[j]);
            Tensor<T> v = tp.matmul(values, m.wv[j]);
            Tensor<T> scores = tp.scale(tp.matmul(q, tp.transpose(k)), scale);
            if (causal) scores = tp.add(scores, mask);
            heads.push_back(tp.matmul(tp.softmax(scores), v));
        }
        Tensor<T> cat = cfg_.heads == 1 ? heads[0] : tp.concat(heads, 1);
        Tensor<T> out = tp.matmul(cat, m.wo);
        return queries.rank() == 1 ? tp.reshape(out, {cfg_.d_model}) : out;
    }

    struct UnaOut {
        Tensor<T> context;                  // one row per query
        std::vector<Tensor<T>> weights;     // per query, softmax over keys
    };

    // Additive-energy attention: e_i = v . tanh(Wq q + Wk k_i), weights
    // softmax(e), context = sum_i weight_i value_i. With `causal`, query i
    // sees keys 0..i.
    UnaOut unified_attention(Tape<T>& tp, const UnaBound& u, const Tensor<T>& queries,
                             const Tensor<T>& keys, const Tensor<T>& values,
                             bool causal = false) const {
        if (keys.rank() != 2 || keys.dim(0) == 0)
            throw ShapeError("unified_attention: empty key set");
        Tensor<T> q2 = queries.rank() == 1 ? tp.reshape(queries, {1, cfg_.d_model}) : queries;
        std::size_t nq = q2.dim(0);
        Tensor<T> kproj = tp.matmul(keys, tp.transpose(u.wk));  // (nk, A)
        UnaOut out;
        std::vector<Tensor<T>> rows;
        for (std::size_t i = 0; i < nq; ++i) {
            Tensor<T> qp = tp.matmul(u.wq, tp.row(q2, i));  // (A)
            Tensor<T> kslice = causal ? tp.slice_rows(kproj, 0, i + 1) : kproj;
            Tensor<T> vslice = causal ? tp.slice_rows(values, 0, i + 1) : values;
            Tensor<T> energies = tp.matmul(tp.tanh(tp.add(kslice, qp)), u.v);
            Tensor<T> w = tp.softmax(energies);
            out.weights.push_back(w);
            rows.push_back(tp.matmul(w, vslice));
        }
        out.context = tp.stack_rows(rows);
        if (queries.rank() == 1) out.context = tp.reshape(out.context, {cfg_.d_model});
        return out;
    }

    // Concat -> linear -> residual -> layer norm. The decoder's cross fuse
    // passes the padded-coverage feature as the third block; the encoder
    // omits it.
    Tensor<T> fuse(Tape<T>& tp, const Tensor<T>& fuse_w, const Tensor<T>& fuse_b,
                   const LnBound& ln, const Tensor<T>& residual,
                   const std::vector<Tensor<T>>& parts, Rng* drop) const {
        Tensor<T> cat = parts.size() == 1 ? parts[0] : tp.concat(parts, 0);
        Tensor<T> proj = tp.add(tp.matmul(fuse_w, cat), fuse_b);
        if (drop) proj = tp.dropout(proj, cfg_.dropout, *drop);
        return tp.layer_norm(tp.add(residual, proj), ln.g, ln.b);
    }

    Tensor<T> ffn_sublayer(Tape<T>& tp, const FfnBound& f, const LnBound& ln, const Tensor<T>& x,
                           Rng* drop) const {
        Tensor<T> h = tp.relu(tp.add(tp.matmul(f.w1, x), f.b1));
        Tensor<T> y = tp.add(tp.matmul(f.w2, h), f.b2);
        if (drop) y = tp.dropout(y, cfg_.dropout, *drop);
        return tp.layer_norm(tp.add(x, y), ln.g, ln.b);
    }

    // Encode base-vocabulary input ids into one state row per source position.
    Tensor<T> encode(Tape<T>& tp, const Bound& b, const std::vector<std::size_t>& input_ids,
                     Rng* drop) const {
        if (input_ids.empty()) throw ConfigError("encode: empty source");
        if (input_ids.size() > cfg_.max_src)
            throw ConfigError("encode: source length " + std::to_string(input_ids.size()) +
                              " exceeds max " + std::to_string(cfg_.max_src));
        Tensor<T> x = tp.add(tp.gather_rows(b.emb, input_ids),
                             tp.slice_rows(b.pe, 0, input_ids.size()));
        if (drop) x = tp.dropout(x, cfg_.dropout, *drop);
        for (const auto& layer : b.enc) {
            // Matrix-level fuse: project each row of [mha ; una].
            Tensor<T> mha = multi_head_attention(tp, layer.mha, x, x, x);
            UnaOut una = unified_attention(tp, layer.una, x, x, x);
            Tensor<T> cat = tp.concat({mha, una.context}, 1);
            Tensor<T> proj = tp.add(tp.matmul(cat, tp.transpose(layer.fuse_w)), layer.fuse_b);
            if (drop) proj = tp.dropout(proj, cfg_.dropout, *drop);
            x = tp.layer_norm(tp.add(x, proj), layer.ln1.g, layer.ln1.b);
            Tensor<T> h = tp.relu(tp.add(tp.matmul(x, tp.transpose(layer.ffn.w1)), layer.ffn.b1));
            Tensor<T> y = tp.add(tp.matmul(h, tp.transpose(layer.ffn.w2)), layer.ffn.b2);
            if (drop) y = tp.dropout(y, cfg_.dropout, *drop);
            x = tp.layer_norm(tp.add(x, y), layer.ln2.g, layer.ln2.b);
        }
        return x;
    }

    // Incremental decoder state: per-layer input caches plus the attention
    // history that defines the coverage vector.
    struct DecodeState {
        std::vector<std::vector<Tensor<T>>> layer_inputs;  // [layer][pos]
        std::vector<Tensor<T>> attn_history;               // pointer b^t per step
        Tensor<T> coverage;                                // sum of prior b^t
        std::size_t pos = 0;
    };

    DecodeState new_state(Tape<T>& tp, std::size_t src_len) const {
        DecodeState st;
        st.layer_inputs.resize(cfg_.layers);
        st.coverage = tp.leaf(Tensor<T>::zeros({src_len}));
        return st;
    }

    struct StepOut {
        Tensor<T> omega;        // decoder output for this position
        Tensor<T> attn;         // pointer distribution b^t over source positions
        Tensor<T> context;      // n_t
        Tensor<T> p_vocab;      // base-vocabulary distribution
        Tensor<T> p_gen;        // scalar switch
        Tensor<T> p_final;      // extended-vocabulary distribution
        Tensor<T> coverage_in;  // chi_t used by this step
    };

    StepOut step(Tape<T>& tp, const Bound& b, const Tensor<T>& enc_states,
                 const ExtendedVocab& ext, DecodeState& st, std::size_t input_id,
                 Rng* drop) const {
        if (st.pos >= cfg_.max_tgt + 1)
            throw ConfigError("decode: target length exceeds max " + std::to_string(cfg_.max_tgt));
        std::size_t src_len = enc_states.dim(0);
        Tensor<T> x_emb = tp.add(tp.row(b.emb, input_id), tp.row(b.pe, st.pos));
        Tensor<T> x = drop ? tp.dropout(x_emb, cfg_.dropout, *drop) : x_emb;
        Tensor<T> chi = st.coverage;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            auto& layer = b.dec[l];
            st.layer_inputs[l].push_back(x);
            Tensor<T> kv = tp.stack_rows(st.layer_inputs[l]);
            Tensor<T> mha_s = multi_head_attention(tp, layer.self_mha, x, kv, kv);
            UnaOut una_s = unified_attention(tp, layer.self_una, x, kv, kv);
            Tensor<T> fused = fuse(tp, layer.fuse_self_w, layer.fuse_self_b, layer.ln_a, x,
                                   {mha_s, una_s.context}, drop);
            Tensor<T> mha_c =
                multi_head_attention(tp, layer.cross_mha, fused, enc_states, enc_states);
            UnaOut una_c = unified_attention(tp, layer.cross_una, fused, enc_states, enc_states);
            Tensor<T> chi_pad = chi;
            if (src_len < cfg_.max_src)
                chi_pad = tp.concat({chi, tp.leaf(Tensor<T>::zeros({cfg_.max_src - src_len}))}, 0);
            Tensor<T> covfeat = tp.matmul(layer.cov_w, chi_pad);
            Tensor<T> fused2 = fuse(tp, layer.fuse_cross_w, layer.fuse_cross_b, layer.ln_b, fused,
                                    {mha_c, una_c.context, covfeat}, drop);
            x = ffn_sublayer(tp, layer.ffn, layer.ln_c, fused2, drop);
        }
        StepOut out;
        out.omega = x;
        out.coverage_in = chi;

        // Pointer attention over source positions with the coverage feature.
        Tensor<T> kproj = tp.matmul(enc_states, tp.transpose(b.ptr_wk));        // (src, A)
        Tensor<T> qproj = tp.matmul(b.ptr_wq, x);                               // (A)
        Tensor<T> covterm = tp.matmul(tp.reshape(chi, {src_len, 1}),
                                      tp.reshape(b.ptr_wcov, {1, cfg_.attn}));  // (src, A)
        Tensor<T> energies =
            tp.matmul(tp.tanh(tp.add(tp.add(kproj, covterm), tp.add(qproj, b.ptr_b))), b.ptr_v);
        out.attn = tp.softmax(energies);
        out.context = tp.matmul(out.attn, enc_states);

        Tensor<T> on = tp.concat({x, out.context}, 0);
        Tensor<T> hidden = tp.add(tp.matmul(b.vh_w1, on), b.vh_b1);
        out.p_vocab = tp.softmax(tp.add(tp.matmul(b.vh_w2, hidden), b.vh_b2));

        Tensor<T> sw = tp.add(tp.add(tp.matmul(b.sw_wh, x), tp.matmul(b.sw_wn, out.context)),
                              tp.add(tp.matmul(b.sw_wx, x_emb), b.sw_b));
        out.p_gen = tp.sigmoid(sw);
        out.p_final = mix_distributions(tp, out.p_vocab, out.p_gen, out.attn, ext);

        st.attn_history.push_back(out.attn);
        st.coverage = tp.add(st.coverage, out.attn);
        ++st.pos;
        return out;
    }

    // P(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum_{j: src_j = w} b_j over
    // the extended vocabulary. Generated mass stays zero on temporary ids and
    // copy mass stays zero off the source tokens by construction.
    Tensor<T> mix_distributions(Tape<T>& tp, const Tensor<T>& p_vocab, const Tensor<T>& p_gen,
                                const Tensor<T>& attn, const ExtendedVocab& ext) const {
        Tensor<T> gen = tp.mul(p_vocab, p_gen);
        if (ext.oov_count() > 0) {
            Tensor<T> pad = tp.leaf(Tensor<T>::zeros({ext.oov_count()}));
            gen = tp.concat({gen, pad}, 0);
        }
        Tensor<T> copy_mass = tp.mul(attn, tp.affine(p_gen, T(-1), T(1)));
        Tensor<T> copy = tp.scatter_add(copy_mass, ext.source_ids(), ext.size());
        return tp.add(gen, copy);
    }

    // Per-step coverage penalty: lambda * sum_i min(chi_i, b_i).
    Tensor<T> coverage_loss_step(Tape<T>& tp, const Tensor<T>& chi, const Tensor<T>& attn) const {
        return tp.scale(tp.sum(tp.min_elem(chi, attn)), static_cast<T>(cfg_.coverage_weight));
    }

    struct Losses {
        Tensor<T> nll;       // (1/T) sum -log P(w_t)
        Tensor<T> coverage;  // mean per-step coverage penalty (zero tensor when off)
        Tensor<T> total;
    };

    // Teacher-forced losses for one example. Coverage participates when
    // enabled and the epoch has reached the second phase.
    Losses example_losses(Tape<T>& tp, const Bound& b, const SummaryExample& ex, Rng* drop,
                          bool with_coverage) const {
        if (ex.source.empty()) throw ConfigError("summarizer: empty source document");
        if (ex.target.size() > cfg_.max_tgt)
            throw ConfigError("summarizer: target length " + std::to_string(ex.target.size()) +
                              " exceeds max " + std::to_string(cfg_.max_tgt));
        ExtendedVocab ext(vocab_, ex.source);
        std::vector<std::size_t> src_inputs;
        for (std::size_t id : ext.source_ids()) src_inputs.push_back(ext.input_id(id));
        Tensor<T> enc_states = encode(tp, b, src_inputs, drop);

        std::vector<std::size_t> tgt_ext;
        for (const auto& tok : ex.target) tgt_ext.push_back(ext.target_id(tok));
        tgt_ext.push_back(static_cast<std::size_t>(Vocabulary::kEnd));

        DecodeState st = new_state(tp, ex.source.size());
        std::size_t input = Vocabulary::kStart;
        Tensor<T> nll_sum, cov_sum;
        for (std::size_t t = 0; t < tgt_ext.size(); ++t) {
            StepOut so = step(tp, b, enc_states, ext, st, input, drop);
            Tensor<T> picked = tp.pick(so.p_final, tgt_ext[t]);
            Tensor<T> term = tp.scale(tp.log(picked, T(1e-12)), T(-1));
            nll_sum = t == 0 ? term : tp.add(nll_sum, term);
            if (with_coverage) {
                Tensor<T> cl = coverage_loss_step(tp, so.coverage_in, so.attn);
                cov_sum = t == 0 ? cl : tp.add(cov_sum, cl);
            }
            input = ext.input_id(tgt_ext[t]);
        }
        T inv = T(1) / static_cast<T>(tgt_ext.size());
        Losses out;
        out.nll = tp.scale(nll_sum, inv);
        out.coverage = with_coverage ? tp.scale(cov_sum, inv) : tp.leaf(Tensor<T>::scalar(T(0)));
        out.total = tp.add(out.nll, out.coverage);
        return out;
    }

    std::vector<double> fit(const std::vector<SummaryExample>& data) {
        if (data.empty()) throw ConfigError("train: empty corpus");
        Adam<T> opt(cfg_.lr);
        Rng order(cfg_.seed ^ 0x0ddeull);
        Rng drop_rng(cfg_.seed ^ 0xd20full);
        std::vector<double> history;
        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            bool with_cov = cfg_.use_coverage && epoch >= cfg_.coverage_start_epoch;
            double total = 0.0;
            auto perm = order.permutation(data.size());
            for (std::size_t b0 = 0; b0 < perm.size(); b0 += cfg_.batch) {
                Tape<T> tp;
                Bound bound = bind(tp);
                Tensor<T> loss;
                std::size_t n = 0;
                for (std::size_t i = b0; i < std::min(perm.size(), b0 + cfg_.batch); ++i, ++n) {
                    Rng* drop = cfg_.dropout > 0.0 ? &drop_rng : nullptr;
                    Losses l = example_losses(tp, bound, data[perm[i]], drop, with_cov);
                    loss = n == 0 ? l.total : tp.add(loss, l.total);
                }
                loss = tp.scale(loss, T(1) / static_cast<T>(n));
                total += static_cast<double>(loss.item()) * static_cast<double>(n);
                opt.step(params_, tp.backward(loss));
            }
            history.push_back(total / static_cast<double>(data.size()));
        }
        return history;
    }

    // Greedy/beam decoding over the extended vocabulary; copied temporary ids
    // render as the source strings.
    std::vector<std::string> summarize(const std::vector<std::string>& document,
                                       const SummarizeOptions& opts) const {
        if (document.empty()) throw ConfigError("summarize: empty document");
        ExtendedVocab ext(vocab_, document);
        struct State {
            std::vector<std::size_t> emitted;  // extended ids
        };
        auto run_prefix = [&](const State& s) {
            Tape<T> tp;
            Bound b = bind(tp);
            std::vector<std::size_t> src_inputs;
            for (std::size_t id : ext.source_ids()) src_inputs.push_back(ext.input_id(id));
            Tensor<T> enc_states = encode(tp, b, src_inputs, nullptr);
            DecodeState st = new_state(tp, document.size());
            std::size_t input = Vocabulary::kStart;
            StepOut so;
            for (std::size_t t = 0;; ++t) {
                so = step(tp, b, enc_states, ext, st, input, nullptr);
                if (t == s.emitted.size()) break;
                input = ext.input_id(s.emitted[t]);
            }
            if (opts.force_pgen) {
                Tape<T> tp2;
                Tensor<T> pg = tp2.leaf(Tensor<T>::scalar(static_cast<T>(*opts.force_pgen)));
                return mix_distributions(tp2, tp2.leaf(so.p_vocab), pg, tp2.leaf(so.attn), ext);
            }
            return so.p_final;
        };
        auto stepfn = [&](const State& s) {
            Tensor<T> p = run_prefix(s);
            std::vector<double> logp(p.size());
            for (std::size_t i = 0; i < p.size(); ++i)
                logp[i] = std::log(std::max(static_cast<double>(p[i]), 1e-12));
            logp[Vocabulary::kPad] = -1e30;
            logp[Vocabulary::kStart] = -1e30;
            return logp;
        };
        auto advance = [&](const State& s, int token) {
            State next = s;
            next.emitted.push_back(static_cast<std::size_t>(token));
            return next;
        };
        DecodeConfig dc = opts.decode;
        dc.max_len = std::min(dc.max_len, cfg_.max_tgt);
        std::vector<int> ids = beam_search(State{}, Vocabulary::kEnd, dc, stepfn, advance);
        std::vector<std::string> out;
        for (int id : ids) out.push_back(ext.word(static_cast<std::size_t>(id)));
        return out;
    }

private:
    SummarizerConfig cfg_;
    Vocabulary vocab_;
    ParameterSet<T> params_;
    std::size_t d_k_ = 0;
    int emb_ = -1;
    std::vector<EncLayerIds> enc_;
    std::vector<DecLayerIds> dec_;
    int ptr_wq_, ptr_wk_, ptr_wcov_, ptr_b_, ptr_v_;
    int vh_w1_, vh_b1_, vh_w2_, vh_b2_;
    int sw_wh_, sw_wn_, sw_wx_, sw_b_;
    Tensor<T> pe_;
};

}  // namespace capsumt
