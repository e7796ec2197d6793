#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <capsumt/cli.hpp>
#include <capsumt/pipeline.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace capsumt;
using D = double;
namespace fs = std::filesystem;

namespace {

int run_cli_args(std::vector<std::string> args) {
    std::vector<std::string> full = {"capsumt"};
    for (auto& a : args) full.push_back(std::move(a));
    std::vector<char*> argv;
    for (auto& a : full) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

struct Sandbox {
    fs::path dir;
    Sandbox() {
        dir = fs::temp_directory_path() / "capsumt_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
    void write(const std::string& name, const std::string& content) const {
        std::ofstream os(path(name));
        os << content;
    }
};

}  // namespace

TEST_CASE("corpus parsing: empty file, verbatim fields, and diagnostics") {
    std::istringstream empty("");
    CHECK(parse_corpus(empty).empty());

    std::istringstream one(
        R"({"id": "r1", "features": "f.feat", "factual": ["a dog runs"], "romantic": "hearts", "humorous": "lol", "summary": "dog"})");
    auto recs = parse_corpus(one);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].id == "r1");
    CHECK(*recs[0].features == "f.feat");
    CHECK(recs[0].factual == std::vector<std::string>{"a dog runs"});
    CHECK(*recs[0].romantic == "hearts");
    CHECK(*recs[0].humorous == "lol");
    CHECK(*recs[0].summary == "dog");
    CHECK(recs[0].line == 1);

    std::istringstream missing_id("{\"id\": \"a\"}\n{\"factual\": []}\n");
    try {
        parse_corpus(missing_id);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("id") != std::string::npos);
    }

    std::istringstream dup("{\"id\": \"a\"}\n{\"id\": \"a\"}\n");
    CHECK_THROWS_AS(parse_corpus(dup), IoError);

    std::istringstream bad_json("{\"id\": \"a\"}\nnot json\n");
    try {
        parse_corpus(bad_json);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    std::istringstream bad_field("{\"id\": \"a\", \"romantic\": 7}\n");
    CHECK_THROWS_AS(parse_corpus(bad_field), IoError);
}

TEST_CASE("checkpoints round-trip float models bit-exactly") {
    Sandbox sb;
    CaptionerConfig cfg;
    cfg.vocab = 8;
    cfg.feat_dim = 4;
    cfg.embed = 5;
    cfg.hidden = 6;
    cfg.attn = 3;
    cfg.seed = 9;
    FactualCaptioner<float> model(cfg);
    Vocabulary vocab;
    for (const char* w : {"dog", "cat", "runs", "naps"}) vocab.add(w);
    REQUIRE(vocab.size() == cfg.vocab);

    std::string path = sb.path("fic.ckpt");
    save_captioner(path, model, vocab, 1234, 7);
    auto loaded = load_captioner<float>(path);
    CHECK(loaded.meta.seed == 1234);
    CHECK(loaded.meta.epoch == 7);
    CHECK(loaded.vocab.words() == vocab.words());
    REQUIRE(loaded.model->params().size() == model.params().size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto& a = model.params()[static_cast<int>(i)];
        const auto& b = loaded.model->params()[static_cast<int>(i)];
        CHECK(a.name == b.name);
        CHECK(a.value.data() == b.value.data());  // bitwise float equality
    }
    // Save the loaded model again: byte-identical checkpoint files.
    std::string path2 = sb.path("fic2.ckpt");
    save_captioner(path2, *loaded.model, loaded.vocab, 1234, 7);
    CHECK(binio::read_file(path) == binio::read_file(path2));
}

TEST_CASE("checkpoint decoding rejects corruption and kind mismatches") {
    Checkpoint ck;
    ck.kind = kKindSummarizer;
    ck.config_json = "{}";
    ck.seed = 1;
    ck.tensors.push_back({"t", {2}, {1.0f, 2.0f}});
    std::string bytes = ck.encode();

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(Checkpoint::decode(bad_magic, "<mem>"), doctest::Contains("bad magic"),
                         IoError);

    std::string truncated = bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS_WITH_AS(Checkpoint::decode(truncated, "<mem>"), doctest::Contains("truncated"),
                         IoError);

    CHECK_THROWS_WITH_AS(Checkpoint::decode(bytes, "<mem>", kKindCaptioner),
                         doctest::Contains("does not match"), IoError);

    std::string trailing = bytes + "x";
    CHECK_THROWS_WITH_AS(Checkpoint::decode(trailing, "<mem>"), doctest::Contains("trailing"),
                         IoError);
}

TEST_CASE("summary source keeps the fixed sentence order") {
    auto src = build_summary_source("A dog runs.", "Hearts glow", "Goats laugh");
    std::vector<std::string> expect = {"a",      "dog", "runs", ".", ".",     "hearts",
                                       "glow",   ".",   "goats", "laugh"};
    CHECK(src == expect);
}

TEST_CASE("end-to-end pipeline reproduces the target summary after overfitting") {
    // One record; every stage overfits it, so the stitched pipeline must
    // reproduce the reference summary exactly.
    Rng rng(77);
    Tensor<D> feats = Tensor<D>::uniform({3, 5}, rng, -1.0, 1.0);

    std::string factual_text = "a dog runs fast";
    std::string romantic_text = "love runs with the dog";
    std::string humorous_text = "dog outruns silly cat";
    std::string summary_text = "dog runs lovingly fast";

    // Factual captioner.
    std::vector<std::vector<std::string>> fact_toks = {tokenize(factual_text)};
    Vocabulary fic_vocab = Vocabulary::build(fact_toks);
    CaptionerConfig fcfg;
    fcfg.vocab = fic_vocab.size();
    fcfg.feat_dim = 5;
    fcfg.embed = 10;
    fcfg.hidden = 20;
    fcfg.attn = 8;
    fcfg.lr = 0.01;
    fcfg.batch = 1;
    fcfg.epochs = 150;
    fcfg.seed = 3;
    FactualCaptioner<D> fic(fcfg);
    fic.fit({{feats, encode_caption(fic_vocab, factual_text)}});

    // Styled captioner (both styles on the same image).
    std::vector<std::vector<std::string>> style_toks = {tokenize(romantic_text),
                                                        tokenize(humorous_text)};
    Vocabulary style_vocab = Vocabulary::build(style_toks);
    StyledConfig scfg;
    scfg.vocab = style_vocab.size();
    scfg.feat_dim = 5;
    scfg.embed = 10;
    scfg.hidden = 22;
    scfg.rank = 6;
    scfg.attn = 8;
    scfg.lr = 0.01;
    scfg.batch = 1;
    scfg.epochs = 200;
    scfg.seed = 4;
    StyledCaptioner<D> styled(scfg);
    styled.fit({{feats, "romantic", encode_caption(style_vocab, romantic_text)},
                {feats, "humorous", encode_caption(style_vocab, humorous_text)}});

    // Summarizer trained on the reference-caption source.
    SummaryExample sex;
    sex.source = build_summary_source(factual_text, romantic_text, humorous_text);
    sex.target = tokenize(summary_text);
    Vocabulary sum_vocab = Vocabulary::build({sex.source, sex.target});
    SummarizerConfig mcfg;
    mcfg.vocab = sum_vocab.size();
    mcfg.d_model = 24;
    mcfg.heads = 2;
    mcfg.d_ff = 32;
    mcfg.attn = 12;
    mcfg.dropout = 0.0;
    mcfg.use_coverage = false;
    mcfg.max_src = 20;
    mcfg.max_tgt = 8;
    mcfg.lr = 0.01;
    mcfg.batch = 1;
    mcfg.epochs = 150;
    mcfg.seed = 5;
    Summarizer<D> summ(mcfg, sum_vocab);
    summ.fit({sex});

    CorpusRecord rec;
    rec.id = "r0";
    rec.features = "";  // features injected below by writing the file
    Sandbox sb;
    write_features(sb.path("r0.feat"), feats);
    rec.features = sb.path("r0.feat");

    PipelineModels<D> models;
    models.captioner = &fic;
    models.captioner_vocab = &fic_vocab;
    models.styled = &styled;
    models.styled_vocab = &style_vocab;
    models.summarizer = &summ;
    PipelineOptions opts;
    opts.caption.max_len = 10;
    opts.summary.decode.max_len = 8;

    PredictionRecord pred = run_pipeline(rec, models, opts);
    CHECK(pred.factual_caption == factual_text);
    CHECK(pred.romantic_caption == romantic_text);
    CHECK(pred.humorous_caption == humorous_text);
    CHECK(pred.summary == summary_text);

    // Determinism: a second run produces identical text.
    PredictionRecord again = run_pipeline(rec, models, opts);
    CHECK(again.summary == pred.summary);
    CHECK(again.factual_caption == pred.factual_caption);

    // Missing pieces raise stage-specific errors.
    PipelineModels<D> missing = models;
    missing.summarizer = nullptr;
    CHECK_THROWS_AS(run_pipeline(rec, missing, opts), ConfigError);
    CorpusRecord no_feat;
    no_feat.id = "x";
    CHECK_THROWS_AS(run_pipeline(no_feat, models, opts), ConfigError);
}

TEST_CASE("cli: no arguments prints usage and exits 2") {
    CHECK(run_cli_args({}) == 2);
    CHECK(run_cli_args({"bogus-subcommand"}) == 2);
    CHECK(run_cli_args({"fic-train"}) == 2);  // missing required --config
}

TEST_CASE("cli: end-to-end train, summarize, pipeline, evaluate round") {
    Sandbox sb;
    // Tiny corpus with three records and FEAT files.
    Rng rng(11);
    std::ostringstream corpus;
    for (int i = 0; i < 3; ++i) {
        std::string feat_name = "img" + std::to_string(i) + ".feat";
        write_features(sb.path(feat_name), Tensor<float>::uniform({2, 4}, rng, -1.0, 1.0));
        nlohmann::json j = {
            {"id", "rec" + std::to_string(i)},
            {"features", feat_name},
            {"factual", {std::string("object ") + char('a' + i) + " appears right here"}},
            {"romantic", std::string("such a lovely thing ") + char('a' + i)},
            {"humorous", std::string("what a funny thing ") + char('a' + i)},
            {"summary", std::string("thing ") + char('a' + i) + " summarized quite well"}};
        corpus << j.dump() << "\n";
    }
    sb.write("corpus.jsonl", corpus.str());

    sb.write("embed.json", nlohmann::json{{"corpus", sb.path("corpus.jsonl")},
                                          {"dim", 8},
                                          {"buckets", 512},
                                          {"window", 2},
                                          {"epochs", 2},
                                          {"lr", 0.01}}
                               .dump());
    CHECK(run_cli_args({"embed-train", "--config", sb.path("embed.json"), "--out",
                        sb.path("out")}) == 0);
    CHECK(fs::exists(sb.path("out/vectors.txt")));
    CHECK(fs::exists(sb.path("out/embeddings.ckpt")));

    sb.write("fic.json", nlohmann::json{{"corpus", sb.path("corpus.jsonl")},
                                        {"embed", 6},
                                        {"hidden", 10},
                                        {"attn", 4},
                                        {"lr", 0.01},
                                        {"batch", 3},
                                        {"epochs", 3}}
                             .dump());
    CHECK(run_cli_args({"fic-train", "--config", sb.path("fic.json"), "--out", sb.path("out"),
                        "--seed", "5"}) == 0);
    CHECK(fs::exists(sb.path("out/fic.ckpt")));

    sb.write("style.json", nlohmann::json{{"corpus", sb.path("corpus.jsonl")},
                                          {"embed", 6},
                                          {"hidden", 12},
                                          {"rank", 3},
                                          {"attn", 4},
                                          {"lr", 0.01},
                                          {"batch", 3},
                                          {"epochs", 3}}
                               .dump());
    CHECK(run_cli_args({"style-train", "--config", sb.path("style.json"), "--out",
                        sb.path("out")}) == 0);

    sb.write("sum.json", nlohmann::json{{"corpus", sb.path("corpus.jsonl")},
                                        {"d_model", 8},
                                        {"heads", 2},
                                        {"d_ff", 12},
                                        {"attn", 6},
                                        {"dropout", 0.1},
                                        {"max_src", 24},
                                        {"max_tgt", 8},
                                        {"lr", 0.01},
                                        {"batch", 3},
                                        {"epochs", 3},
                                        {"embeddings", sb.path("out/vectors.txt")}}
                             .dump());
    // Embedding width 8 matches d_model on purpose.
    CHECK(run_cli_args({"sum-train", "--config", sb.path("sum.json"), "--out", sb.path("out")}) ==
          0);
    CHECK(fs::exists(sb.path("out/sum.ckpt")));

    sb.write("summarize.json", nlohmann::json{{"corpus", sb.path("corpus.jsonl")},
                                              {"checkpoint", sb.path("out/sum.ckpt")},
                                              {"beam", 2},
                                              {"max_len", 6}}
                                   .dump());
    CHECK(run_cli_args({"summarize", "--config", sb.path("summarize.json"), "--out",
                        sb.path("sumout")}) == 0);
    auto preds = load_predictions(sb.path("sumout/predictions.jsonl"));
    REQUIRE(preds.size() == 3);
    CHECK(preds[0].id == "rec0");

    sb.write("pipeline.json", nlohmann::json{{"corpus", sb.path("corpus.jsonl")},
                                             {"fic_checkpoint", sb.path("out/fic.ckpt")},
                                             {"style_checkpoint", sb.path("out/style.ckpt")},
                                             {"sum_checkpoint", sb.path("out/sum.ckpt")},
                                             {"caption_max_len", 6},
                                             {"summary_max_len", 6}}
                                  .dump());
    CHECK(run_cli_args({"pipeline", "--config", sb.path("pipeline.json"), "--out",
                        sb.path("pipeout")}) == 0);
    auto pipe_preds = load_predictions(sb.path("pipeout/predictions.jsonl"));
    REQUIRE(pipe_preds.size() == 3);
    for (const auto& p : pipe_preds) CHECK(!p.id.empty());

    // Evaluating the references against themselves: exact-overlap metrics hit 1.
    sb.write("eval.json", nlohmann::json{{"predictions", sb.path("corpus.jsonl")},
                                         {"references", sb.path("corpus.jsonl")}}
                              .dump());
    CHECK(run_cli_args({"evaluate", "--config", sb.path("eval.json"), "--out",
                        sb.path("evalout")}) == 0);
    std::ifstream mj(sb.path("evalout/metrics.json"));
    nlohmann::json report = nlohmann::json::parse(mj);
    CHECK(report["records"] == 3);
    for (const char* m : {"factual_bleu_1", "factual_bleu_4", "romantic_bleu_1",
                          "humorous_bleu_1", "summary_rouge_1", "summary_rouge_2",
                          "summary_rouge_l"})
        CHECK(report["metrics"][m].get<double>() == doctest::Approx(1.0).epsilon(1e-9));
    // The chunk penalty keeps identical-text scores just below 1.
    CHECK(report["metrics"]["factual_meteor"].get<double>() ==
          doctest::Approx(1.0 - 0.5 / (5.0 * 5.0 * 5.0)).epsilon(1e-9));
    CHECK(fs::exists(sb.path("evalout/metrics.txt")));

    // Determinism: retraining the summarizer with the same seed produces a
    // byte-identical checkpoint (dropout is active and seed-driven).
    fs::copy_file(sb.path("out/sum.ckpt"), sb.path("out/sum_first.ckpt"));
    CHECK(run_cli_args({"sum-train", "--config", sb.path("sum.json"), "--out", sb.path("out")}) ==
          0);
    CHECK(binio::read_file(sb.path("out/sum.ckpt")) ==
          binio::read_file(sb.path("out/sum_first.ckpt")));
}

TEST_CASE("cli: gradcheck runs the finite-difference suite and exits 0") {
    CHECK(run_cli_args({"gradcheck"}) == 0);
}

TEST_CASE("worker count honors the environment cap") {
    setenv("CAPSUMT_THREADS", "2", 1);
    CHECK(worker_count(100) == 2);
    CHECK(worker_count(1) == 1);
    unsetenv("CAPSUMT_THREADS");
}
