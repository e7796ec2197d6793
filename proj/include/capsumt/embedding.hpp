#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capsumt/adam.hpp"
#include "capsumt/common.hpp"
#include "capsumt/subword.hpp"
#include "capsumt/tape.hpp"

namespace capsumt {

struct EmbeddingConfig {
    SubwordConfig subword;
    std::size_t dim = 300;
    std::size_t epochs = 5;
    double lr = 0.01;
    int negative = 0;  // 0 = full softmax objective, >0 = sampled negatives
    std::uint64_t seed = 1;
};

template <class T>
struct MaskedPrediction {
    Tensor<T> distribution;  // over the word vocabulary
    Tensor<T> attention;     // over the context positions
};

// Subword-composed word embeddings trained by attention-weighted masked-word
// prediction. U holds one vector per hash bucket, V one query vector per
// vocabulary word. A word's vector is the plain sum of its subword bucket
// rows, so it exists for out-of-vocabulary words too.
//
// The masked word's own V row scores the context during training; that query
// does not exist at inference time, so a learned global query is trained
// alongside and used instead when `center_query` is false.
template <class T>
class SubwordEmbeddings {
public:
    SubwordEmbeddings(SubwordVocabulary vocab, EmbeddingConfig cfg)
        : vocab_(std::move(vocab)), cfg_(cfg) {
        Rng rng(cfg_.seed);
        T a = static_cast<T>(1.0 / static_cast<double>(cfg_.dim));
        u_id_ = params_.add("embed.U",
                            Tensor<T>::uniform({vocab_.bucket_count(), cfg_.dim}, rng, -a, a));
        v_id_ = params_.add("embed.V", Tensor<T>::zeros({vocab_.size(), cfg_.dim}));
        q_id_ = params_.add("embed.query", Tensor<T>::zeros({cfg_.dim}));
        rebuild_groups();
    }

    const SubwordVocabulary& vocab() const { return vocab_; }
    const EmbeddingConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    // Composed vector of any word string (sum of its subword bucket rows).
    std::vector<T> word_vector(const std::string& word) const {
        const Tensor<T>& U = params_[u_id_].value;
        std::vector<T> v(cfg_.dim, T(0));
        for (std::size_t b : vocab_.buckets_for(word))
            for (std::size_t j = 0; j < cfg_.dim; ++j) v[j] += U.at(b, j);
        return v;
    }

    MaskedPrediction<T> predict_masked_on(Tape<T>& tape, const WindowSample& sample,
                                          bool center_query) const {
        if (sample.context.empty()) throw ConfigError("predict_masked: empty context window");
        if (sample.center < 0 || sample.center >= static_cast<int>(vocab_.size()))
            throw ConfigError("predict_masked: center word not in vocabulary");
        Tensor<T> U = tape.param(params_, u_id_);
        Tensor<T> ctx = tape.gather_sum_rows(U, sample.context);  // per-position word vectors
        Tensor<T> q;
        if (center_query) {
            Tensor<T> V = tape.param(params_, v_id_);
            q = tape.row(V, static_cast<std::size_t>(sample.center));
        } else {
            q = tape.param(params_, q_id_);
        }
        Tensor<T> att = tape.softmax(tape.matmul(ctx, q));
        Tensor<T> c_att = tape.matmul(att, ctx);
        // Output scoring uses the word table V, not the composed context
        // vectors; tying the two makes small-window corpora unlearnable.
        Tensor<T> V = tape.param(params_, v_id_);
        Tensor<T> dist = tape.softmax(tape.matmul(V, c_att));
        return {dist, att};
    }

    MaskedPrediction<T> predict_masked(const WindowSample& sample, bool center_query = false) const {
        Tape<T> tape;
        return predict_masked_on(tape, sample, center_query);
    }

    // Masked cross-entropy for one window; used by the trainer and the
    // gradient checks.
    Tensor<T> sample_loss_on(Tape<T>& tape, const WindowSample& sample, bool center_query,
                             Rng* neg_rng = nullptr) const {
        if (cfg_.negative <= 0 || neg_rng == nullptr) {
            MaskedPrediction<T> p = predict_masked_on(tape, sample, center_query);
            Tensor<T> picked = tape.pick(p.distribution, static_cast<std::size_t>(sample.center));
            return tape.scale(tape.log(picked, T(1e-12)), T(-1));
        }
        // Negative sampling: binary losses on the true word and k noise words.
        Tensor<T> U = tape.param(params_, u_id_);
        Tensor<T> ctx = tape.gather_sum_rows(U, sample.context);
        Tensor<T> q;
        if (center_query) {
            Tensor<T> V = tape.param(params_, v_id_);
            q = tape.row(V, static_cast<std::size_t>(sample.center));
        } else {
            q = tape.param(params_, q_id_);
        }
        Tensor<T> att = tape.softmax(tape.matmul(ctx, q));
        Tensor<T> c_att = tape.matmul(att, ctx);
        std::vector<std::size_t> ids = {static_cast<std::size_t>(sample.center)};
        for (int k = 0; k < cfg_.negative; ++k) {
            std::size_t neg;
            do {
                neg = neg_rng->index(vocab_.size());
            } while (static_cast<int>(neg) == sample.center && vocab_.size() > 1);
            ids.push_back(neg);
        }
        Tensor<T> V = tape.param(params_, v_id_);
        Tensor<T> scores = tape.matmul(tape.gather_rows(V, ids), c_att);
        Tensor<T> pos = tape.pick(scores, 0);
        Tensor<T> loss = tape.scale(tape.log(tape.sigmoid(pos), T(1e-12)), T(-1));
        for (int k = 0; k < cfg_.negative; ++k) {
            Tensor<T> s = tape.pick(scores, static_cast<std::size_t>(k + 1));
            Tensor<T> term = tape.log(tape.sigmoid(tape.scale(s, T(-1))), T(1e-12));
            loss = tape.sub(loss, term);
        }
        return loss;
    }

    // Returns the per-epoch mean training loss.
    std::vector<double> fit(const std::vector<std::vector<std::string>>& corpus) {
        std::vector<WindowSample> samples;
        for (const auto& s : corpus)
            for (auto& w : window_samples(s, vocab_)) samples.push_back(std::move(w));
        if (samples.empty()) throw ConfigError("train_embeddings: no usable windows in corpus");
        Adam<T> opt(cfg_.lr);
        Rng order_rng(cfg_.seed ^ 0x5eedull);
        Rng neg_rng(cfg_.seed ^ 0xbadd1ull);
        std::vector<double> history;
        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            double total = 0.0;
            for (std::size_t i : order_rng.permutation(samples.size())) {
                Tape<T> tape;
                // Teacher-signal query plus the global query trained for
                // inference-time scoring.
                Tensor<T> loss = tape.add(sample_loss_on(tape, samples[i], true, &neg_rng),
                                          sample_loss_on(tape, samples[i], false, &neg_rng));
                total += static_cast<double>(loss.item()) / 2.0;
                opt.step(params_, tape.backward(loss));
            }
            history.push_back(total / static_cast<double>(samples.size()));
        }
        return history;
    }

    static SubwordEmbeddings train(const std::vector<std::vector<std::string>>& corpus,
                                   EmbeddingConfig cfg, std::vector<double>* history = nullptr) {
        if (corpus.empty()) throw ConfigError("train_embeddings: empty corpus");
        SubwordVocabulary vocab = SubwordVocabulary::build(corpus, cfg.subword);
        if (vocab.size() == 0) throw ConfigError("train_embeddings: empty vocabulary");
        SubwordEmbeddings model(std::move(vocab), cfg);
        auto h = model.fit(corpus);
        if (history) *history = std::move(h);
        return model;
    }

    static double cosine(const std::vector<T>& a, const std::vector<T>& b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += static_cast<double>(a[i]) * b[i];
            na += static_cast<double>(a[i]) * a[i];
            nb += static_cast<double>(b[i]) * b[i];
        }
        if (na == 0.0 || nb == 0.0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    }

    // Descending cosine similarity; ties break toward the smaller word id.
    std::vector<std::pair<std::string, double>> nearest_neighbors(const std::string& word,
                                                                  std::size_t k) const {
        if (k > vocab_.size()) throw ConfigError("nearest_neighbors: k exceeds vocabulary");
        std::vector<T> q = word_vector(word);
        std::vector<std::pair<double, std::size_t>> scored;
        scored.reserve(vocab_.size());
        for (std::size_t id = 0; id < vocab_.size(); ++id)
            scored.emplace_back(cosine(q, word_vector(vocab_.word(id))), id);
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<std::pair<std::string, double>> out;
        for (std::size_t i = 0; i < k; ++i) out.emplace_back(vocab_.word(scored[i].second), scored[i].first);
        return out;
    }

    // Plain-text vector format: "<count> <dim>" then one word per line
    // followed by its composed vector.
    void export_text(std::ostream& os) const {
        os << vocab_.size() << ' ' << cfg_.dim << '\n';
        os << std::setprecision(9);
        for (std::size_t id = 0; id < vocab_.size(); ++id) {
            os << vocab_.word(id);
            for (T x : word_vector(vocab_.word(id))) os << ' ' << static_cast<double>(x);
            os << '\n';
        }
    }

    void export_text_file(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("cannot open vector file for writing: " + path);
        export_text(os);
    }

    struct WordVectors {
        std::size_t dim = 0;
        std::vector<std::string> order;
        std::unordered_map<std::string, std::vector<double>> table;
    };

    static WordVectors import_text(std::istream& is) {
        WordVectors wv;
        std::size_t count = 0;
        std::string header;
        if (!std::getline(is, header)) throw IoError("vector file: missing header");
        {
            std::istringstream hs(header);
            if (!(hs >> count >> wv.dim) || wv.dim == 0)
                throw IoError("vector file: bad header '" + header + "'");
        }
        std::string line;
        std::size_t lineno = 1;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string word;
            ls >> word;
            std::vector<double> vec(wv.dim);
            for (std::size_t j = 0; j < wv.dim; ++j)
                if (!(ls >> vec[j]))
                    throw IoError("vector file line " + std::to_string(lineno) +
                                  ": expected " + std::to_string(wv.dim) + " values");
            wv.order.push_back(word);
            wv.table.emplace(std::move(word), std::move(vec));
        }
        if (wv.order.size() != count)
            throw IoError("vector file: header count " + std::to_string(count) + " but " +
                          std::to_string(wv.order.size()) + " rows");
        return wv;
    }

    static WordVectors import_text_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open vector file: " + path);
        return import_text(is);
    }

private:
    void rebuild_groups() {
        word_groups_.clear();
        for (std::size_t id = 0; id < vocab_.size(); ++id)
            word_groups_.push_back(vocab_.subword_buckets(id));
    }

    SubwordVocabulary vocab_;
    EmbeddingConfig cfg_;
    ParameterSet<T> params_;
    std::vector<std::vector<std::size_t>> word_groups_;
    int u_id_ = -1, v_id_ = -1, q_id_ = -1;
};

}  // namespace capsumt
