#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "capsumt/gradcheck.hpp"
#include "capsumt/metrics.hpp"
#include "capsumt/parallel.hpp"
#include "capsumt/pipeline.hpp"

namespace capsumt::cli {

// CLI models train in single precision so checkpoints round-trip bit-exactly;
// the gradcheck subcommand instantiates double for reliable finite differences.
using F = float;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
};

inline nlohmann::json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("config " + path + ": " + e.what());
    }
}

inline std::string out_path(const CommonArgs& args, const std::string& name) {
    std::filesystem::create_directories(args.out_dir);
    return (std::filesystem::path(args.out_dir) / name).string();
}

// Feature paths inside a corpus resolve relative to the corpus file.
inline std::vector<CorpusRecord> load_corpus_resolved(const std::string& corpus_path) {
    std::vector<CorpusRecord> records = load_corpus(corpus_path);
    std::filesystem::path base = std::filesystem::path(corpus_path).parent_path();
    for (auto& rec : records)
        if (rec.features && std::filesystem::path(*rec.features).is_relative())
            rec.features = (base / *rec.features).string();
    return records;
}

inline std::string require_string_field(const nlohmann::json& j, const char* field,
                                        const std::string& where) {
    if (!j.contains(field) || !j[field].is_string())
        throw ConfigError(where + ": missing required string field '" + field + "'");
    return j[field].get<std::string>();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_embed_train(const CommonArgs& args) {
    nlohmann::json j = load_config(args.config_path);
    EmbeddingConfig cfg = embedding_config_from_json(j);
    if (args.seed) cfg.seed = *args.seed;
    std::string corpus_path = require_string_field(j, "corpus", "embed-train");
    std::vector<CorpusRecord> records = load_corpus_resolved(corpus_path);
    std::vector<std::vector<std::string>> sentences;
    for (const auto& rec : records) {
        for (const auto& cap : rec.factual) sentences.push_back(tokenize(cap));
        if (rec.romantic) sentences.push_back(tokenize(*rec.romantic));
        if (rec.humorous) sentences.push_back(tokenize(*rec.humorous));
        if (rec.summary) sentences.push_back(tokenize(*rec.summary));
    }
    std::vector<double> history;
    auto model = SubwordEmbeddings<F>::train(sentences, cfg, &history);
    model.export_text_file(out_path(args, "vectors.txt"));
    save_embeddings(out_path(args, "embeddings.ckpt"), model, cfg.seed,
                    static_cast<std::uint32_t>(cfg.epochs));
    std::cout << "trained embeddings: vocab=" << model.vocab().size()
              << " dim=" << cfg.dim << " final_loss=" << history.back() << "\n";
    return 0;
}

inline int cmd_fic_train(const CommonArgs& args) {
    nlohmann::json j = load_config(args.config_path);
    std::string corpus_path = require_string_field(j, "corpus", "fic-train");
    auto data = prepare_caption_data<F>(load_corpus_resolved(corpus_path),
                                        j.value("min_count", std::size_t{1}));
    CaptionerConfig cfg = captioner_config_from_json(j);
    cfg.vocab = data.vocab.size();
    cfg.feat_dim = data.feat_dim;
    if (args.seed) cfg.seed = *args.seed;
    FactualCaptioner<F> model(cfg);
    auto history = model.fit(data.examples);
    save_captioner(out_path(args, "fic.ckpt"), model, data.vocab, cfg.seed,
                   static_cast<std::uint32_t>(cfg.epochs));
    std::cout << "trained factual captioner: examples=" << data.examples.size()
              << " vocab=" << cfg.vocab << " final_loss=" << history.back() << "\n";
    return 0;
}

inline int cmd_style_train(const CommonArgs& args) {
    nlohmann::json j = load_config(args.config_path);
    std::string corpus_path = require_string_field(j, "corpus", "style-train");
    auto data = prepare_styled_data<F>(load_corpus_resolved(corpus_path),
                                       j.value("min_count", std::size_t{1}));
    StyledConfig cfg = styled_config_from_json(j);
    cfg.vocab = data.vocab.size();
    cfg.feat_dim = data.feat_dim;
    if (args.seed) cfg.seed = *args.seed;
    StyledCaptioner<F> model(cfg);
    auto history = model.fit(data.examples);
    save_styled(out_path(args, "style.ckpt"), model, data.vocab, cfg.seed,
                static_cast<std::uint32_t>(cfg.epochs));
    std::cout << "trained styled captioner: examples=" << data.examples.size()
              << " vocab=" << cfg.vocab << " final_loss=" << history.back() << "\n";
    return 0;
}

inline int cmd_sum_train(const CommonArgs& args) {
    nlohmann::json j = load_config(args.config_path);
    std::string corpus_path = require_string_field(j, "corpus", "sum-train");
    SummaryData data = prepare_summary_data(load_corpus_resolved(corpus_path),
                                            j.value("min_count", std::size_t{1}));
    SummarizerConfig cfg = summarizer_config_from_json(j);
    cfg.vocab = data.vocab.size();
    if (args.seed) cfg.seed = *args.seed;
    Summarizer<F> model(cfg, data.vocab);
    if (j.contains("embeddings")) {
        auto wv = SubwordEmbeddings<F>::import_text_file(j["embeddings"].get<std::string>());
        std::size_t hits = init_embeddings_from_vectors(model, wv);
        std::cout << "initialized " << hits << " embedding rows from vectors\n";
    }
    auto history = model.fit(data.examples);
    save_summarizer(out_path(args, "sum.ckpt"), model, cfg.seed,
                    static_cast<std::uint32_t>(cfg.epochs));
    std::cout << "trained summarizer: examples=" << data.examples.size()
              << " vocab=" << cfg.vocab << " final_loss=" << history.back() << "\n";
    return 0;
}

inline int cmd_summarize(const CommonArgs& args) {
    nlohmann::json j = load_config(args.config_path);
    auto loaded = load_summarizer<F>(require_string_field(j, "checkpoint", "summarize"));
    std::vector<CorpusRecord> records =
        load_corpus_resolved(require_string_field(j, "corpus", "summarize"));
    SummarizeOptions opts;
    opts.decode.beam = j.value("beam", std::size_t{3});
    opts.decode.max_len = j.value("max_len", loaded.model->config().max_tgt);
    std::ofstream os(out_path(args, "predictions.jsonl"));
    for (const auto& rec : records) {
        if (rec.factual.empty() || !rec.romantic || !rec.humorous)
            throw ConfigError("record '" + rec.id +
                              "': summarize needs factual, romantic and humorous text");
        auto source = build_summary_source(rec.factual[0], *rec.romantic, *rec.humorous);
        PredictionRecord pred;
        pred.id = rec.id;
        pred.summary = join_tokens(loaded.model->summarize(source, opts));
        os << to_jsonl(pred) << "\n";
    }
    std::cout << "summarized " << records.size() << " records\n";
    return 0;
}

inline int cmd_pipeline(const CommonArgs& args) {
    nlohmann::json j = load_config(args.config_path);
    auto fic = load_captioner<F>(require_string_field(j, "fic_checkpoint", "pipeline"));
    auto styled = load_styled<F>(require_string_field(j, "style_checkpoint", "pipeline"));
    auto summ = load_summarizer<F>(require_string_field(j, "sum_checkpoint", "pipeline"));
    std::vector<CorpusRecord> records =
        load_corpus_resolved(require_string_field(j, "corpus", "pipeline"));
    PipelineModels<F> models;
    models.captioner = fic.model.get();
    models.captioner_vocab = &fic.vocab;
    models.styled = styled.model.get();
    models.styled_vocab = &styled.vocab;
    models.summarizer = summ.model.get();
    PipelineOptions opts;
    opts.caption.beam = j.value("beam", std::size_t{3});
    opts.caption.max_len = j.value("caption_max_len", std::size_t{16});
    opts.summary.decode.beam = opts.caption.beam;
    opts.summary.decode.max_len = j.value("summary_max_len", summ.model->config().max_tgt);
    std::ofstream os(out_path(args, "predictions.jsonl"));
    for (const auto& rec : records) os << to_jsonl(run_pipeline(rec, models, opts)) << "\n";
    std::cout << "ran pipeline over " << records.size() << " records\n";
    return 0;
}

// Prediction files accept either generated-field names or reference-style
// fields, so a reference corpus can be evaluated against itself.
struct EvalCandidate {
    std::string id;
    std::map<std::string, std::string> text;  // task -> candidate text
};

inline std::vector<EvalCandidate> load_candidates(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open predictions: " + path);
    std::vector<EvalCandidate> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError("predictions line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("id") || !j["id"].is_string())
            throw IoError("predictions line " + std::to_string(lineno) + ": missing 'id'");
        EvalCandidate c;
        c.id = j["id"].get<std::string>();
        auto grab = [&](const char* task, const char* primary, const char* fallback) {
            if (j.contains(primary) && j[primary].is_string())
                c.text[task] = j[primary].get<std::string>();
            else if (fallback && j.contains(fallback)) {
                if (j[fallback].is_string())
                    c.text[task] = j[fallback].get<std::string>();
                else if (j[fallback].is_array() && !j[fallback].empty())
                    c.text[task] = j[fallback][0].get<std::string>();
            }
        };
        grab("factual", "factual_caption", "factual");
        grab("romantic", "romantic_caption", "romantic");
        grab("humorous", "humorous_caption", "humorous");
        grab("summary", "summary", nullptr);
        out.push_back(std::move(c));
    }
    return out;
}

inline int cmd_evaluate(const CommonArgs& args) {
    nlohmann::json j = load_config(args.config_path);
    auto candidates = load_candidates(require_string_field(j, "predictions", "evaluate"));
    auto references = load_corpus(require_string_field(j, "references", "evaluate"));
    std::size_t bleu_order = j.value("bleu_order", std::size_t{4});

    std::map<std::string, const CorpusRecord*> by_id;
    for (const auto& r : references) by_id[r.id] = &r;

    struct RecordScores {
        std::map<std::string, double> values;  // metric name -> value
        bool used = false;
    };
    std::vector<RecordScores> scores(candidates.size());

    parallel_for(candidates.size(), [&](std::size_t i) {
        const EvalCandidate& cand = candidates[i];
        auto it = by_id.find(cand.id);
        if (it == by_id.end()) return;
        const CorpusRecord& ref = *it->second;
        RecordScores& rs = scores[i];
        auto caption_metrics = [&](const std::string& task, const std::vector<Tokens>& refs) {
            auto ct = cand.text.find(task);
            if (ct == cand.text.end() || refs.empty()) return;
            Tokens hyp = tokenize(ct->second);
            for (std::size_t n = 1; n <= bleu_order; ++n)
                rs.values[task + "_bleu_" + std::to_string(n)] = bleu_n(hyp, refs, n);
            rs.values[task + "_meteor"] = meteor_best(hyp, refs);
            rs.used = true;
        };
        std::vector<Tokens> fact_refs;
        for (const auto& c : ref.factual) fact_refs.push_back(tokenize(c));
        caption_metrics("factual", fact_refs);
        if (ref.romantic) caption_metrics("romantic", {tokenize(*ref.romantic)});
        if (ref.humorous) caption_metrics("humorous", {tokenize(*ref.humorous)});
        if (ref.summary && cand.text.count("summary")) {
            Tokens hyp = tokenize(cand.text.at("summary"));
            Tokens tgt = tokenize(*ref.summary);
            rs.values["summary_rouge_1"] = rouge_n(hyp, tgt, 1).score;
            rs.values["summary_rouge_2"] = rouge_n(hyp, tgt, 2).score;
            rs.values["summary_rouge_l"] = rouge_l(hyp, tgt).score;
            rs.used = true;
        }
    });

    std::map<std::string, std::pair<double, std::size_t>> totals;
    std::size_t used = 0;
    for (const auto& rs : scores) {
        if (!rs.used) continue;
        ++used;
        for (const auto& [name, v] : rs.values) {
            totals[name].first += v;
            totals[name].second += 1;
        }
    }
    if (used == 0) throw ConfigError("evaluate: no prediction matched a reference id");

    nlohmann::json report;
    report["records"] = used;
    std::ostringstream text;
    text << std::fixed << std::setprecision(6);
    for (const auto& [name, acc] : totals) {
        double mean = acc.first / static_cast<double>(acc.second);
        text << name << "=" << mean << "\n";
        report["metrics"][name] = mean;
    }
    std::cout << text.str();
    std::ofstream txt(out_path(args, "metrics.txt"));
    txt << text.str();
    std::ofstream js(out_path(args, "metrics.json"));
    js << report.dump(2) << "\n";
    return 0;
}

// Finite-difference sweep over every training loss on tiny double-precision
// configurations; prints one line per module.
inline int cmd_gradcheck() {
    using D = double;
    bool ok = true;
    auto report = [&](const char* name, double err) {
        std::cout << name << " max_rel_err=" << std::scientific << err
                  << (err < 1e-4 ? "  ok" : "  FAIL") << "\n";
        ok = ok && err < 1e-4;
    };
    Rng rng(99);
    auto jiggle = [&](ParameterSet<D>& ps) {
        for (auto& p : ps)
            for (auto& x : p.value.data()) x = rng.uniform(-0.4, 0.4);
    };
    {
        CaptionerConfig cfg;
        cfg.vocab = 7;
        cfg.feat_dim = 3;
        cfg.embed = 4;
        cfg.hidden = 5;
        cfg.attn = 3;
        FactualCaptioner<D> model(cfg);
        jiggle(model.params());
        CaptionExample<D> ex;
        ex.features = Tensor<D>::uniform({2, 3}, rng, -1, 1);
        ex.tokens = {Vocabulary::kStart, 4, 5, 6, Vocabulary::kEnd};
        report("caption-loss", params_grad_check<D>(model.params(), [&](Tape<D>& tp) {
                   auto b = model.bind(tp);
                   return model.example_loss(tp, b, ex);
               }));
    }
    {
        StyledConfig cfg;
        cfg.vocab = 7;
        cfg.feat_dim = 3;
        cfg.embed = 3;
        cfg.hidden = 5;
        cfg.rank = 2;
        cfg.attn = 3;
        StyledCaptioner<D> model(cfg);
        jiggle(model.params());
        StyledExample<D> ex;
        ex.features = Tensor<D>::uniform({2, 3}, rng, -1, 1);
        ex.style = "humorous";
        ex.tokens = {Vocabulary::kStart, 4, 6, Vocabulary::kEnd};
        report("styled-loss", params_grad_check<D>(model.params(), [&](Tape<D>& tp) {
                   auto b = model.bind(tp);
                   return model.example_loss(tp, b, ex);
               }));
    }
    {
        std::vector<std::vector<std::string>> text = {{"w0", "w1", "w2", "w3", "w4"}};
        Vocabulary vocab = Vocabulary::build(text);
        SummarizerConfig cfg;
        cfg.vocab = vocab.size();
        cfg.d_model = 6;
        cfg.heads = 2;
        cfg.d_ff = 8;
        cfg.attn = 4;
        cfg.dropout = 0.0;
        cfg.max_src = 6;
        cfg.max_tgt = 4;
        Summarizer<D> model(cfg, vocab);
        jiggle(model.params());
        SummaryExample ex{{"w0", "nix", "w3"}, {"w3", "nix"}};
        report("summary-loss", params_grad_check<D>(model.params(), [&](Tape<D>& tp) {
                   auto b = model.bind(tp);
                   return model.example_losses(tp, b, ex, nullptr, true).total;
               }));
    }
    {
        SubwordConfig scfg;
        scfg.buckets = 64;
        EmbeddingConfig cfg;
        cfg.subword = scfg;
        cfg.dim = 4;
        auto vocab = SubwordVocabulary::from_words({"ab", "cd", "ef"}, scfg);
        SubwordEmbeddings<D> model(vocab, cfg);
        jiggle(model.params());
        WindowSample s{0, {vocab.buckets_for("cd"), vocab.buckets_for("ef")}};
        report("embedding-loss", params_grad_check<D>(model.params(), [&](Tape<D>& tp) {
                   return tp.add(model.sample_loss_on(tp, s, true),
                                 model.sample_loss_on(tp, s, false));
               }));
    }
    return ok ? 0 : 1;
}

inline int run(int argc, char** argv) {
    CLI::App app{"caption summarization toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        if (needs_config)
            sub->add_option("--config", args.config_path, "JSON config file")->required();
        sub->add_option("--out", args.out_dir, "output directory");
        sub->add_option("--seed", args.seed, "override the config seed");
    };
    int (*handler)(const CommonArgs&) = nullptr;
    bool run_gradcheck = false;
    for (auto& [name, fn, desc] :
         std::vector<std::tuple<const char*, int (*)(const CommonArgs&), const char*>>{
             {"embed-train", &cmd_embed_train, "train subword embeddings"},
             {"fic-train", &cmd_fic_train, "train the factual captioner"},
             {"style-train", &cmd_style_train, "train the styled captioner"},
             {"sum-train", &cmd_sum_train, "train the summarizer"},
             {"summarize", &cmd_summarize, "summarize corpus captions with a checkpoint"},
             {"pipeline", &cmd_pipeline, "caption + style + summarize end to end"},
             {"evaluate", &cmd_evaluate, "score predictions against references"}}) {
        CLI::App* sub = app.add_subcommand(name, desc);
        add_common(sub);
        sub->callback([&handler, fn = fn] { handler = fn; });
    }
    CLI::App* gsub = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(gsub, /*needs_config=*/false);
    gsub->callback([&] { run_gradcheck = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        if (run_gradcheck) return cmd_gradcheck();
        return handler ? handler(args) : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace capsumt::cli

namespace capsumt {
inline int run_cli(int argc, char** argv) { return cli::run(argc, argv); }
}  // namespace capsumt
