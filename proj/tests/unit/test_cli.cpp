#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mmn/cli.hpp"
#include "mmn/dataset.hpp"
#include "mmn/optim.hpp"

using namespace mmn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run mmn_run(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = cli::run(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mmn_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string words(Rng& rng, std::size_t n, std::size_t alphabet) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    const std::size_t w = rng.below(alphabet);
    s += "w" + std::string(1, char('a' + w / 26)) + std::string(1, char('a' + w % 26));
  }
  return s;
}

// Title-summary posts: `posts` lines of `doc_len` / `title_len` random words.
void write_corpus(const fs::path& p, std::size_t posts, std::size_t doc_len, std::size_t title_len, std::size_t alphabet,
                  std::uint64_t seed) {
  Rng rng(seed);
  std::ofstream out(p);
  for (std::size_t i = 0; i < posts; ++i) {
    json rec = {{"id", "p" + std::to_string(i)},
                {"document", words(rng, doc_len, alphabet)},
                {"title", words(rng, title_len, alphabet)},
                {"tldr", nullptr}};
    out << rec.dump() << '\n';
  }
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("preprocess splits 95/5, writes a vocabulary and is deterministic") {
  TempDir dir("pre");
  write_corpus(dir.path / "corpus.jsonl", 1000, 20, 5, 200, 1);
  auto r = mmn_run({"preprocess", dir / "corpus.jsonl", "--seed", "7", "--out", dir / "a"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(count_lines(dir.path / "a" / "train.jsonl") == 950);
  CHECK(count_lines(dir.path / "a" / "test.jsonl") == 50);
  CHECK(fs::exists(dir.path / "a" / "vocab.txt"));
  const auto manifest = json::parse(slurp(dir.path / "a" / "manifest.json"));
  CHECK(manifest["command"] == "preprocess");
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["config"]["corpus"]["max_summary_tokens"] == 20);
  CHECK(manifest.contains("version"));
  CHECK(manifest.contains("duration_seconds"));

  REQUIRE(mmn_run({"preprocess", dir / "corpus.jsonl", "--seed", "7", "--out", dir / "b"}).code == 0);
  for (const char* f : {"train.jsonl", "test.jsonl", "vocab.txt"}) {
    CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
  }
  REQUIRE(mmn_run({"preprocess", dir / "corpus.jsonl", "--seed", "8", "--out", dir / "c"}).code == 0);
  CHECK(slurp(dir.path / "a" / "test.jsonl") != slurp(dir.path / "c" / "test.jsonl"));
}

TEST_CASE("preprocess reports the malformed line") {
  TempDir dir("bad");
  write_corpus(dir.path / "corpus.jsonl", 5, 6, 2, 20, 1);
  {
    std::ofstream out(dir.path / "corpus.jsonl", std::ios::app);
    out << "{\"id\": \"x\", \"document\": 3}\n";
  }
  const auto r = mmn_run({"preprocess", dir / "corpus.jsonl", "--out", dir / "o"});
  CHECK(r.code == 1);
  CHECK(r.err.find("line 6") != std::string::npos);
  CHECK(r.out.empty());
  CHECK_FALSE(fs::exists(dir.path / "o" / "manifest.json"));
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(mmn_run({}).code == 2);
  CHECK(mmn_run({"frobnicate"}).code == 2);
  CHECK(mmn_run({"train"}).code == 2);
  TempDir dir("usage");
  write_corpus(dir.path / "corpus.jsonl", 5, 6, 2, 20, 1);
  CHECK(mmn_run({"preprocess", dir / "corpus.jsonl", "--profile", "cnn"}).code == 2);
  CHECK(mmn_run({"--help"}).code == 0);
}

TEST_CASE("audit with and without external scores") {
  TempDir dir("audit");
  {
    std::ofstream out(dir.path / "split.jsonl");
    out << R"({"id":"a","document":["x","y",".","z","w","."],"summary":["x","y"]})" << '\n';
    out << R"({"id":"b","document":["p","q","."],"summary":["p","n"]})" << '\n';
  }
  auto r = mmn_run({"audit", dir / "split.jsonl", "--bins", "4", "--out", dir / "plain"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  auto report = json::parse(slurp(dir.path / "plain" / "bias_report.json"));
  CHECK(report["documents"] == 2);
  CHECK_FALSE(report.contains("abstractive_over_lead"));
  const auto csv = slurp(dir.path / "plain" / "bigram_location.csv");
  CHECK(csv.rfind("bin_start,density\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(fs::exists(dir.path / "plain" / "manifest.json"));

  {
    std::ofstream scores(dir.path / "scores.txt");
    scores << "10\n30\n";
  }
  r = mmn_run({"audit", dir / "split.jsonl", "--scores", dir / "scores.txt", "--out", dir / "scored"});
  REQUIRE(r.code == 0);
  report = json::parse(slurp(dir.path / "scored" / "bias_report.json"));
  CHECK(report["abstractive_rl"].get<double>() == doctest::Approx(20.0));
  CHECK(report.contains("abstractive_over_lead"));
  CHECK(report.contains("abstractive_over_oracle"));
  CHECK(mmn_run({"audit", dir / "split.jsonl", "--scores", "12.5", "--out", dir / "lit"}).code == 0);

  {
    std::ofstream empty(dir.path / "empty.jsonl");
  }
  CHECK(mmn_run({"audit", dir / "empty.jsonl", "--out", dir / "e"}).code == 1);
}

TEST_CASE("train, eval and summarize memorize a fixture") {
  TempDir dir("e2e");
  write_corpus(dir.path / "corpus.jsonl", 16, 12, 4, 60, 3);
  {
    std::ofstream cfg(dir.path / "config.json");
    cfg << R"({"model": {"d_emb": 32, "encoder_layers": 3, "decoder_layers": 2, "memory_layers": [1, 3]},
               "train": {"lr_init": 0.003, "lr_floor": 0.003, "grad_clip": 1.0, "batch_size": 1, "max_epochs": 40},
               "corpus": {"max_document_tokens": 12}})";
  }
  // Train and evaluate on the same split.
  auto r = mmn_run({"preprocess", dir / "corpus.jsonl", "--config", dir / "config.json", "--out", dir / "data"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const std::string split = dir / "data/train.jsonl";
  const std::string vocab = dir / "data/vocab.txt";

  r = mmn_run({"train", split, "--vocab", vocab, "--config", dir / "config.json", "--out", dir / "run"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir.path / "run" / "model.ckpt"));
  CHECK(slurp(dir.path / "run" / "loss.csv").rfind("epoch,step,lr,loss\n", 0) == 0);
  const auto manifest = json::parse(slurp(dir.path / "run" / "manifest.json"));
  CHECK(manifest["config"]["model"]["d_emb"] == 32);
  CHECK(manifest["config"]["train"]["max_epochs"] == 40);

  // Same seed reruns give a byte-identical checkpoint.
  REQUIRE(mmn_run({"train", split, "--vocab", vocab, "--config", dir / "config.json", "--out", dir / "rerun"}).code == 0);
  CHECK(slurp(dir.path / "run" / "model.ckpt") == slurp(dir.path / "rerun" / "model.ckpt"));
  CHECK(slurp(dir.path / "run" / "loss.csv") == slurp(dir.path / "rerun" / "loss.csv"));

  const std::string ckpt = dir / "run/model.ckpt";
  r = mmn_run({"eval", split, "--checkpoint", ckpt, "--vocab", vocab, "--out", dir / "eval"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto report = json::parse(r.out);
  CHECK(report["rouge_l"].get<double>() == doctest::Approx(100.0));
  CHECK(report["perplexity"].get<double>() >= 1.0);
  CHECK(json::parse(slurp(dir.path / "eval" / "eval.json")) == report);

  const auto posts = read_tokenized(fs::path(split));
  std::string document;
  for (const auto& t : posts[0].document) document += t + " ";
  std::string expected;
  for (const auto& t : posts[0].summary) expected += (expected.empty() ? "" : " ") + t;
  r = mmn_run({"summarize", "--checkpoint", ckpt, "--vocab", vocab, "--out", dir / "sum"}, document);
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out == expected + "\n");

  {
    std::ofstream doc(dir.path / "doc.txt");
    doc << document;
  }
  r = mmn_run({"summarize", dir / "doc.txt", "--checkpoint", ckpt, "--vocab", vocab, "--out", dir / "sum2"});
  CHECK(r.out == expected + "\n");

  // A longer document than the model accepts is refused rather than truncated.
  r = mmn_run({"summarize", "--checkpoint", ckpt, "--vocab", vocab, "--out", dir / "sum3"}, document + document);
  CHECK(r.code == 1);
  CHECK(r.err.find("at most 12") != std::string::npos);
}

TEST_CASE("checkpoint and vocabulary problems are reported") {
  TempDir dir("ckpt");
  {
    std::ofstream bad(dir.path / "bad.ckpt");
    bad << "not a checkpoint";
    std::ofstream vocab(dir.path / "vocab.txt");
    vocab << "<pad>\n<unk>\n<bos>\n<eos>\nhello\n";
  }
  auto r = mmn_run({"summarize", "--checkpoint", dir / "bad.ckpt", "--vocab", dir / "vocab.txt"}, "hello");
  CHECK(r.code == 1);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("gradcheck command passes and writes its report") {
  TempDir dir("grad");
  const auto r = mmn_run({"gradcheck", "--out", dir / "g"});
  INFO(r.out << r.err);
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("PASS model_composite") != std::string::npos);
  CHECK(r.out.find("PASS decoder_causality") != std::string::npos);
  const auto rows = json::parse(slurp(dir.path / "g" / "gradcheck.json"));
  CHECK(rows.size() > 20);
  CHECK(fs::exists(dir.path / "g" / "manifest.json"));
}
