#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsumt/captioner.hpp"
#include "capsumt/checkpoint.hpp"
#include "capsumt/common.hpp"
#include "capsumt/corpus.hpp"
#include "capsumt/embedding.hpp"
#include "capsumt/feat_io.hpp"
#include "capsumt/styled.hpp"
#include "capsumt/summarizer.hpp"
#include "capsumt/text.hpp"

namespace capsumt {

// ---------------------------------------------------------------------------
// Config <-> JSON (checkpoint echo and CLI config files share these).
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const CaptionerConfig& c) {
    return {{"vocab", c.vocab},   {"feat_dim", c.feat_dim}, {"embed", c.embed},
            {"hidden", c.hidden}, {"attn", c.attn},         {"lr", c.lr},
            {"batch", c.batch},   {"epochs", c.epochs},     {"seed", c.seed}};
}

inline CaptionerConfig captioner_config_from_json(const nlohmann::json& j) {
    CaptionerConfig c;
    c.vocab = j.value("vocab", c.vocab);
    c.feat_dim = j.value("feat_dim", c.feat_dim);
    c.embed = j.value("embed", c.embed);
    c.hidden = j.value("hidden", c.hidden);
    c.attn = j.value("attn", c.attn);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline nlohmann::json to_json(const StyledConfig& c) {
    return {{"vocab", c.vocab},
            {"feat_dim", c.feat_dim},
            {"embed", c.embed},
            {"hidden", c.hidden},
            {"rank", c.rank},
            {"attn", c.attn},
            {"tanh_candidate", c.tanh_candidate},
            {"bypass_input_gate", c.bypass_input_gate},
            {"styles", c.styles},
            {"lr", c.lr},
            {"batch", c.batch},
            {"epochs", c.epochs},
            {"seed", c.seed}};
}

inline StyledConfig styled_config_from_json(const nlohmann::json& j) {
    StyledConfig c;
    c.vocab = j.value("vocab", c.vocab);
    c.feat_dim = j.value("feat_dim", c.feat_dim);
    c.embed = j.value("embed", c.embed);
    c.hidden = j.value("hidden", c.hidden);
    c.rank = j.value("rank", c.rank);
    c.attn = j.value("attn", c.attn);
    c.tanh_candidate = j.value("tanh_candidate", c.tanh_candidate);
    c.bypass_input_gate = j.value("bypass_input_gate", c.bypass_input_gate);
    if (j.contains("styles")) c.styles = j["styles"].get<std::vector<std::string>>();
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline nlohmann::json to_json(const SummarizerConfig& c) {
    return {{"vocab", c.vocab},
            {"d_model", c.d_model},
            {"heads", c.heads},
            {"d_ff", c.d_ff},
            {"layers", c.layers},
            {"attn", c.attn},
            {"dropout", c.dropout},
            {"coverage_weight", c.coverage_weight},
            {"use_coverage", c.use_coverage},
            {"coverage_start_epoch", c.coverage_start_epoch},
            {"max_src", c.max_src},
            {"max_tgt", c.max_tgt},
            {"lr", c.lr},
            {"batch", c.batch},
            {"epochs", c.epochs},
            {"seed", c.seed}};
}

inline SummarizerConfig summarizer_config_from_json(const nlohmann::json& j) {
    SummarizerConfig c;
    c.vocab = j.value("vocab", c.vocab);
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.layers = j.value("layers", c.layers);
    c.attn = j.value("attn", c.attn);
    c.dropout = j.value("dropout", c.dropout);
    c.coverage_weight = j.value("coverage_weight", c.coverage_weight);
    c.use_coverage = j.value("use_coverage", c.use_coverage);
    c.coverage_start_epoch = j.value("coverage_start_epoch", c.coverage_start_epoch);
    c.max_src = j.value("max_src", c.max_src);
    c.max_tgt = j.value("max_tgt", c.max_tgt);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline nlohmann::json to_json(const EmbeddingConfig& c) {
    return {{"n_min", c.subword.n_min},   {"n_max", c.subword.n_max},
            {"buckets", c.subword.buckets}, {"window", c.subword.window},
            {"min_count", c.subword.min_count}, {"dim", c.dim},
            {"epochs", c.epochs},         {"lr", c.lr},
            {"negative", c.negative},     {"seed", c.seed}};
}

inline EmbeddingConfig embedding_config_from_json(const nlohmann::json& j) {
    EmbeddingConfig c;
    c.subword.n_min = j.value("n_min", c.subword.n_min);
    c.subword.n_max = j.value("n_max", c.subword.n_max);
    c.subword.buckets = j.value("buckets", c.subword.buckets);
    c.subword.window = j.value("window", c.subword.window);
    c.subword.min_count = j.value("min_count", c.subword.min_count);
    c.dim = j.value("dim", c.dim);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.negative = j.value("negative", c.negative);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// Model persistence (CKPT wrappers with vocab carried in the config echo).
// ---------------------------------------------------------------------------

inline Vocabulary vocabulary_from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (std::size_t i = 4; i < words.size(); ++i) v.add(words[i]);
    if (v.size() != words.size())
        throw IoError("checkpoint: vocabulary word list is inconsistent");
    return v;
}

inline constexpr const char* kKindCaptioner = "factual-captioner";
inline constexpr const char* kKindStyled = "styled-captioner";
inline constexpr const char* kKindSummarizer = "summarizer";
inline constexpr const char* kKindEmbeddings = "embeddings";

template <class T>
void save_captioner(const std::string& path, const FactualCaptioner<T>& model,
                    const Vocabulary& vocab, std::uint64_t seed, std::uint32_t epoch) {
    nlohmann::json echo = {{"config", to_json(model.config())}, {"vocab", vocab.words()}};
    Checkpoint::from_params(kKindCaptioner, echo.dump(), seed, epoch, model.params()).write(path);
}

template <class T>
struct LoadedCaptioner {
    std::unique_ptr<FactualCaptioner<T>> model;
    Vocabulary vocab;
    Checkpoint meta;
};

template <class T>
LoadedCaptioner<T> load_captioner(const std::string& path) {
    Checkpoint ck = Checkpoint::read(path, kKindCaptioner);
    nlohmann::json echo = nlohmann::json::parse(ck.config_json);
    LoadedCaptioner<T> out;
    out.vocab = vocabulary_from_words(echo["vocab"].get<std::vector<std::string>>());
    out.model = std::make_unique<FactualCaptioner<T>>(captioner_config_from_json(echo["config"]));
    ck.load_into(out.model->params());
    ck.tensors.clear();
    out.meta = std::move(ck);
    return out;
}

template <class T>
void save_styled(const std::string& path, const StyledCaptioner<T>& model,
                 const Vocabulary& vocab, std::uint64_t seed, std::uint32_t epoch) {
    nlohmann::json echo = {{"config", to_json(model.config())}, {"vocab", vocab.words()}};
    Checkpoint::from_params(kKindStyled, echo.dump(), seed, epoch, model.params()).write(path);
}

template <class T>
struct LoadedStyled {
    std::unique_ptr<StyledCaptioner<T>> model;
    Vocabulary vocab;
    Checkpoint meta;
};

template <class T>
LoadedStyled<T> load_styled(const std::string& path) {
    Checkpoint ck = Checkpoint::read(path, kKindStyled);
    nlohmann::json echo = nlohmann::json::parse(ck.config_json);
    LoadedStyled<T> out;
    out.vocab = vocabulary_from_words(echo["vocab"].get<std::vector<std::string>>());
    out.model = std::make_unique<StyledCaptioner<T>>(styled_config_from_json(echo["config"]));
    ck.load_into(out.model->params());
    ck.tensors.clear();
    out.meta = std::move(ck);
    return out;
}

template <class T>
void save_summarizer(const std::string& path, const Summarizer<T>& model, std::uint64_t seed,
                     std::uint32_t epoch) {
    nlohmann::json echo = {{"config", to_json(model.config())}, {"vocab", model.vocab().words()}};
    Checkpoint::from_params(kKindSummarizer, echo.dump(), seed, epoch, model.params()).write(path);
}

template <class T>
struct LoadedSummarizer {
    std::unique_ptr<Summarizer<T>> model;
    Checkpoint meta;
};

template <class T>
LoadedSummarizer<T> load_summarizer(const std::string& path) {
    Checkpoint ck = Checkpoint::read(path, kKindSummarizer);
    nlohmann::json echo = nlohmann::json::parse(ck.config_json);
    Vocabulary vocab = vocabulary_from_words(echo["vocab"].get<std::vector<std::string>>());
    LoadedSummarizer<T> out;
    out.model = std::make_unique<Summarizer<T>>(summarizer_config_from_json(echo["config"]),
                                                std::move(vocab));
    ck.load_into(out.model->params());
    ck.tensors.clear();
    out.meta = std::move(ck);
    return out;
}

template <class T>
void save_embeddings(const std::string& path, const SubwordEmbeddings<T>& model,
                     std::uint64_t seed, std::uint32_t epoch) {
    nlohmann::json echo = {{"config", to_json(model.config())},
                           {"words", model.vocab().words()}};
    Checkpoint::from_params(kKindEmbeddings, echo.dump(), seed, epoch, model.params()).write(path);
}

template <class T>
std::unique_ptr<SubwordEmbeddings<T>> load_embeddings(const std::string& path) {
    Checkpoint ck = Checkpoint::read(path, kKindEmbeddings);
    nlohmann::json echo = nlohmann::json::parse(ck.config_json);
    EmbeddingConfig cfg = embedding_config_from_json(echo["config"]);
    auto words = echo["words"].get<std::vector<std::string>>();
    auto model = std::make_unique<SubwordEmbeddings<T>>(
        SubwordVocabulary::from_words(words, cfg.subword), cfg);
    ck.load_into(model->params());
    return model;
}

// ---------------------------------------------------------------------------
// Corpus -> training examples
// ---------------------------------------------------------------------------

inline std::vector<int> encode_caption(const Vocabulary& vocab, const std::string& text) {
    std::vector<int> ids = {Vocabulary::kStart};
    for (const auto& tok : tokenize(text)) ids.push_back(vocab.id(tok));
    ids.push_back(Vocabulary::kEnd);
    return ids;
}

template <class T>
Tensor<T> load_record_features(const CorpusRecord& rec) {
    if (!rec.features)
        throw ConfigError("record '" + rec.id + "': a feature file is required for this task");
    return read_features<T>(*rec.features);
}

template <class T>
struct CaptionData {
    Vocabulary vocab;
    std::size_t feat_dim = 0;
    std::vector<CaptionExample<T>> examples;
};

template <class T>
CaptionData<T> prepare_caption_data(const std::vector<CorpusRecord>& records,
                                    std::size_t min_count = 1) {
    CaptionData<T> out;
    std::vector<std::vector<std::string>> texts;
    for (const auto& rec : records)
        for (const auto& cap : rec.factual) texts.push_back(tokenize(cap));
    out.vocab = Vocabulary::build(texts, min_count);
    for (const auto& rec : records) {
        if (rec.factual.empty()) continue;
        Tensor<T> feats = load_record_features<T>(rec);
        if (out.feat_dim == 0) out.feat_dim = feats.dim(1);
        if (feats.dim(1) != out.feat_dim)
            throw ConfigError("record '" + rec.id + "': feature width " +
                              std::to_string(feats.dim(1)) + " != corpus width " +
                              std::to_string(out.feat_dim));
        for (const auto& cap : rec.factual)
            out.examples.push_back({feats, encode_caption(out.vocab, cap)});
    }
    if (out.examples.empty()) throw ConfigError("no factual captions in corpus");
    return out;
}

template <class T>
struct StyledData {
    Vocabulary vocab;
    std::size_t feat_dim = 0;
    std::vector<StyledExample<T>> examples;
};

template <class T>
StyledData<T> prepare_styled_data(const std::vector<CorpusRecord>& records,
                                  std::size_t min_count = 1) {
    StyledData<T> out;
    std::vector<std::vector<std::string>> texts;
    for (const auto& rec : records) {
        if (rec.romantic) texts.push_back(tokenize(*rec.romantic));
        if (rec.humorous) texts.push_back(tokenize(*rec.humorous));
    }
    out.vocab = Vocabulary::build(texts, min_count);
    for (const auto& rec : records) {
        if (!rec.romantic && !rec.humorous) continue;
        Tensor<T> feats = load_record_features<T>(rec);
        if (out.feat_dim == 0) out.feat_dim = feats.dim(1);
        if (feats.dim(1) != out.feat_dim)
            throw ConfigError("record '" + rec.id + "': feature width mismatch");
        if (rec.romantic)
            out.examples.push_back({feats, "romantic", encode_caption(out.vocab, *rec.romantic)});
        if (rec.humorous)
            out.examples.push_back({feats, "humorous", encode_caption(out.vocab, *rec.humorous)});
    }
    if (out.examples.empty()) throw ConfigError("no stylized captions in corpus");
    return out;
}

// The summarizer's source document: the three sentences in fixed order
// factual -> romantic -> humorous, separated by sentence breaks.
inline std::vector<std::string> build_summary_source(const std::string& factual,
                                                     const std::string& romantic,
                                                     const std::string& humorous) {
    std::vector<std::string> out;
    bool first = true;
    for (const std::string* text : {&factual, &romantic, &humorous}) {
        if (!first) out.push_back(".");
        first = false;
        for (auto& tok : tokenize(*text)) out.push_back(std::move(tok));
    }
    return out;
}

struct SummaryData {
    Vocabulary vocab;
    std::vector<SummaryExample> examples;
};

inline SummaryData prepare_summary_data(const std::vector<CorpusRecord>& records,
                                        std::size_t min_count = 1) {
    SummaryData out;
    std::vector<std::vector<std::string>> texts;
    std::vector<SummaryExample> examples;
    for (const auto& rec : records) {
        if (!rec.summary) continue;
        if (rec.factual.empty() || !rec.romantic || !rec.humorous)
            throw ConfigError("record '" + rec.id +
                              "': summarizer training needs factual, romantic and humorous text");
        SummaryExample ex;
        ex.source = build_summary_source(rec.factual[0], *rec.romantic, *rec.humorous);
        ex.target = tokenize(*rec.summary);
        texts.push_back(ex.source);
        texts.push_back(ex.target);
        examples.push_back(std::move(ex));
    }
    if (examples.empty()) throw ConfigError("no summaries in corpus");
    out.vocab = Vocabulary::build(texts, min_count);
    out.examples = std::move(examples);
    return out;
}

// Seed the summarizer's embedding rows from exported word vectors (rows for
// words the table covers; everything else keeps its random init).
template <class T>
std::size_t init_embeddings_from_vectors(Summarizer<T>& model,
                                         const typename SubwordEmbeddings<T>::WordVectors& wv) {
    if (wv.dim != model.config().d_model)
        throw ConfigError("embedding vectors are " + std::to_string(wv.dim) +
                          "-dimensional but the model width is " +
                          std::to_string(model.config().d_model));
    Tensor<T>* emb = nullptr;
    for (auto& p : model.params())
        if (p.name == "emb") emb = &p.value;
    std::size_t hits = 0;
    for (std::size_t id = 0; id < model.vocab().size(); ++id) {
        auto it = wv.table.find(model.vocab().word(id));
        if (it == wv.table.end()) continue;
        for (std::size_t j = 0; j < wv.dim; ++j) emb->at(id, j) = static_cast<T>(it->second[j]);
        ++hits;
    }
    return hits;
}

// ---------------------------------------------------------------------------
// End-to-end pipeline over one record
// ---------------------------------------------------------------------------

template <class T>
struct PipelineModels {
    FactualCaptioner<T>* captioner = nullptr;
    const Vocabulary* captioner_vocab = nullptr;
    StyledCaptioner<T>* styled = nullptr;
    const Vocabulary* styled_vocab = nullptr;
    Summarizer<T>* summarizer = nullptr;
};

struct PipelineOptions {
    DecodeConfig caption;
    SummarizeOptions summary;
};

inline std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (const auto& t : toks) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

template <class T>
PredictionRecord run_pipeline(const CorpusRecord& rec, const PipelineModels<T>& models,
                              const PipelineOptions& opts) {
    if (!models.captioner || !models.styled || !models.summarizer)
        throw ConfigError("pipeline: all three models must be loaded");
    Tensor<T> feats = load_record_features<T>(rec);

    auto detok = [](const Vocabulary& v, const std::vector<int>& ids) {
        std::vector<std::string> out;
        for (int id : ids) out.push_back(v.word(static_cast<std::size_t>(id)));
        return out;
    };
    std::vector<std::string> factual =
        detok(*models.captioner_vocab, models.captioner->decode(feats, opts.caption));
    std::vector<std::string> romantic =
        detok(*models.styled_vocab, models.styled->generate(feats, "romantic", opts.caption));
    std::vector<std::string> humorous =
        detok(*models.styled_vocab, models.styled->generate(feats, "humorous", opts.caption));

    std::vector<std::string> source = build_summary_source(
        join_tokens(factual), join_tokens(romantic), join_tokens(humorous));
    std::vector<std::string> summary = models.summarizer->summarize(source, opts.summary);

    PredictionRecord out;
    out.id = rec.id;
    out.factual_caption = join_tokens(factual);
    out.romantic_caption = join_tokens(romantic);
    out.humorous_caption = join_tokens(humorous);
    out.summary = join_tokens(summary);
    return out;
}

}  // namespace capsumt
