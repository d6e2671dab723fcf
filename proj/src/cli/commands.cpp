#include "mmn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmn/analytics.hpp"
#include "mmn/dataset.hpp"
#include "mmn/text.hpp"
#include "mmn/training.hpp"
#include "mmn/verification.hpp"

#ifndef MMN_VERSION
#define MMN_VERSION "0.0.0"
#endif

namespace mmn::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Resolved {
  std::string profile;
  CorpusProfile corpus;
  std::size_t vocabulary_size = kDefaultVocabularySize;
  ModelConfig model;
  TrainConfig train;
};

json corpus_json(const Resolved& r) {
  return {{"summary_source", r.corpus.summary_source == SummarySource::kTitle ? "title" : "tldr"},
          {"max_document_tokens", r.corpus.max_document_tokens},
          {"max_summary_tokens", r.corpus.max_summary_tokens},
          {"vocabulary_size", r.vocabulary_size}};
}

json resolved_json(const Resolved& r) {
  return {{"profile", r.profile},
          {"corpus", corpus_json(r)},
          {"model", json::parse(config_to_json(r.model))},
          {"train", json::parse(train_config_to_json(r.train))}};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void apply_corpus_overrides(Resolved& r, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config \"corpus\" must be an object");
  for (auto& [key, value] : j.items()) {
    if (key == "summary_source") {
      const auto s = value.get<std::string>();
      if (s == "title") r.corpus.summary_source = SummarySource::kTitle;
      else if (s == "tldr") r.corpus.summary_source = SummarySource::kTldr;
      else throw std::invalid_argument("summary_source must be \"title\" or \"tldr\"");
    } else if (key == "max_document_tokens") {
      r.corpus.max_document_tokens = value.get<std::size_t>();
    } else if (key == "max_summary_tokens") {
      r.corpus.max_summary_tokens = value.get<std::size_t>();
    } else if (key == "vocabulary_size") {
      r.vocabulary_size = value.get<std::size_t>();
    } else {
      throw std::invalid_argument("unknown corpus config key \"" + key + "\"");
    }
  }
}

// The config file overlays the profile: {"corpus": {...}, "model": {...}, "train": {...}}.
Resolved resolve(const std::string& profile_name, const std::string& config_path, std::optional<std::uint64_t> seed) {
  const Profile p = profile(profile_name);
  Resolved r{p.name, p.corpus, kDefaultVocabularySize, p.model, p.train};
  if (!config_path.empty()) {
    json j;
    try {
      j = json::parse(read_file(config_path));
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("config " + config_path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    try {
      for (auto& [key, value] : j.items()) {
        if (key == "corpus") apply_corpus_overrides(r, value);
        else if (key == "model") r.model = config_from_json(value.dump(), r.model);
        else if (key == "train") r.train = train_config_from_json(value.dump(), r.train);
        else throw std::invalid_argument("unknown config section \"" + key + "\"");
      }
    } catch (const json::type_error& e) {
      throw std::invalid_argument(std::string("config field has the wrong type: ") + e.what());
    }
  }
  if (seed) r.train.seed = *seed;
  r.model.max_document_len = r.corpus.max_document_tokens;
  r.train.validate();
  return r;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::optional<std::uint64_t> seed;
  Clock::time_point start = Clock::now();
};

void write_manifest(const fs::path& dir, const Manifest& m) {
  fs::create_directories(dir);
  const auto path = dir / "manifest.json";
  json j = {{"command", m.command},
            {"argv", m.argv},
            {"config", m.config},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"seed", m.seed ? json(*m.seed) : json(nullptr)},
            {"version", MMN_VERSION},
            {"duration_seconds", std::chrono::duration<double>(Clock::now() - m.start).count()}};
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<Example> encode_all(std::span<const TokenizedPost> posts, const Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(posts.size());
  for (const auto& p : posts) out.push_back(encode_example(p, vocab));
  return out;
}

Model<float> load_checked(const fs::path& checkpoint, const Vocabulary& vocab) {
  Model<float> model = Model<float>::load(checkpoint);
  if (model.config().vocab_size != vocab.size()) {
    throw std::invalid_argument("checkpoint expects " + std::to_string(model.config().vocab_size) +
                                " vocabulary entries but " + std::to_string(vocab.size()) + " were loaded");
  }
  return model;
}

// A literal number, or a file holding one ROUGE-L value per line (mean used).
double parse_scores(const std::string& arg) {
  double v = 0.0;
  const auto* end = arg.data() + arg.size();
  if (auto [ptr, ec] = std::from_chars(arg.data(), end, v); ec == std::errc() && ptr == end) return v;
  std::ifstream in(arg);
  if (!in) throw std::runtime_error("--scores is neither a number nor a readable file: " + arg);
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      values.push_back(std::stod(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw std::runtime_error("scores file line " + std::to_string(line_no) + " is not a number");
    }
  }
  if (values.empty()) throw std::runtime_error("scores file " + arg + " holds no values");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

struct Options {
  std::string profile = "tifu-short";
  std::string config;
  std::uint64_t seed = 13;
  std::string vocab;
  std::string checkpoint;
  std::string out = ".";
  std::size_t max_len = 0;
  std::size_t bins = 20;
  std::string scores;
  std::string input;
  std::string embeddings;
};

class Commands {
 public:
  Commands(std::vector<std::string> argv, std::istream& in, std::ostream& out, std::ostream& err)
      : argv_(std::move(argv)), in_(in), out_(out), err_(err) {}

  int preprocess(const Options& o, bool seed_given) {
    Manifest m = begin("preprocess");
    const Resolved r = resolve(o.profile, o.config, seed_given ? std::optional(o.seed) : std::nullopt);
    const auto posts = read_corpus(fs::path(o.input));
    std::vector<TokenizedPost> kept;
    std::size_t missing = 0;
    for (const auto& post : posts) {
      if (auto t = preprocess_post(post, r.corpus)) kept.push_back(std::move(*t));
      else ++missing;
    }
    const auto split = filter_and_split(std::move(kept), r.corpus, r.train.seed);
    if (split.train.empty()) throw std::runtime_error("no posts survive filtering");
    std::vector<std::vector<std::string>> texts;
    for (const auto& p : split.train) {
      texts.push_back(p.document);
      texts.push_back(p.summary);
    }
    const Vocabulary vocab = Vocabulary::build(texts, r.vocabulary_size);

    const fs::path dir(o.out);
    auto train_out = open_output(dir / "train.jsonl");
    write_tokenized(train_out, split.train);
    auto test_out = open_output(dir / "test.jsonl");
    write_tokenized(test_out, split.test);
    vocab.save(dir / "vocab.txt");

    m.config = resolved_json(r);
    m.seed = r.train.seed;
    m.inputs = {{"corpus", o.input}};
    m.outputs = {{"train", (dir / "train.jsonl").string()},
                 {"test", (dir / "test.jsonl").string()},
                 {"vocab", (dir / "vocab.txt").string()}};
    write_manifest(dir, m);
    out_ << json{{"posts", posts.size()},
                 {"without_summary", missing},
                 {"train", split.train.size()},
                 {"test", split.test.size()},
                 {"vocabulary", vocab.size()}}
                .dump()
         << '\n';
    return 0;
  }

  int audit(const Options& o) {
    Manifest m = begin("audit");
    const auto posts = read_tokenized(fs::path(o.input));
    if (posts.empty()) throw std::runtime_error("split " + o.input + " is empty");
    std::vector<SummaryPair> pairs;
    pairs.reserve(posts.size());
    for (const auto& p : posts) pairs.push_back({p.document, p.summary});
    std::optional<double> rl;
    if (!o.scores.empty()) rl = parse_scores(o.scores);
    const BiasReport report = bias_report(pairs, rl, o.bins);

    const fs::path dir(o.out);
    const std::string text = report_json(report);
    auto report_out = open_output(dir / "bias_report.json");
    report_out << text << '\n';
    auto csv = open_output(dir / "bigram_location.csv");
    write_histogram_csv(csv, report.location);

    m.config = {{"bins", o.bins}, {"abstractive_rl", rl ? json(*rl) : json(nullptr)}};
    m.inputs = {{"split", o.input}};
    if (!o.scores.empty()) m.inputs["scores"] = o.scores;
    m.outputs = {{"report", (dir / "bias_report.json").string()}, {"histogram", (dir / "bigram_location.csv").string()}};
    write_manifest(dir, m);
    out_ << text << '\n';
    return 0;
  }

  int train(const Options& o, bool seed_given) {
    Manifest m = begin("train");
    Resolved r = resolve(o.profile, o.config, seed_given ? std::optional(o.seed) : std::nullopt);
    const Vocabulary vocab = Vocabulary::load(o.vocab);
    r.model.vocab_size = vocab.size();
    const auto data = encode_all(read_tokenized(fs::path(o.input)), vocab);
    if (data.empty()) throw std::runtime_error("training split " + o.input + " is empty");

    Model<float> model(r.model, r.train.seed);
    if (!o.embeddings.empty()) {
      std::ifstream emb(o.embeddings);
      if (!emb) throw std::runtime_error("cannot open " + o.embeddings);
      err_ << "loaded " << model.load_pretrained_embeddings(emb, vocab) << " pretrained embedding rows\n";
    }
    err_ << "training " << model.parameter_count() << " parameters on " << data.size() << " examples\n";
    const auto result = mmn::train(model, data, r.train, [&](std::size_t epoch, double loss) {
      err_ << "epoch " << epoch << " lr " << lr_schedule(epoch, r.train) << " loss " << loss << '\n';
      return true;
    });

    const fs::path dir(o.out);
    fs::create_directories(dir);
    model.save(dir / "model.ckpt");
    auto csv = open_output(dir / "loss.csv");
    write_loss_csv(csv, result);

    m.config = resolved_json(r);
    m.seed = r.train.seed;
    m.inputs = {{"train", o.input}, {"vocab", o.vocab}};
    if (!o.embeddings.empty()) m.inputs["embeddings"] = o.embeddings;
    m.outputs = {{"checkpoint", (dir / "model.ckpt").string()}, {"loss_curve", (dir / "loss.csv").string()}};
    write_manifest(dir, m);
    out_ << json{{"epochs", result.epoch_loss.size()}, {"final_loss", result.epoch_loss.back()}}.dump() << '\n';
    return 0;
  }

  int eval(const Options& o) {
    Manifest m = begin("eval");
    const Vocabulary vocab = Vocabulary::load(o.vocab);
    const Model<float> model = load_checked(o.checkpoint, vocab);
    const auto data = encode_all(read_tokenized(fs::path(o.input)), vocab);
    const std::size_t max_len = o.max_len ? o.max_len : profile(o.profile).corpus.max_summary_tokens;
    const EvalReport report = evaluate(model, data, max_len);

    const fs::path dir(o.out);
    const std::string text = eval_report_json(report);
    auto report_out = open_output(dir / "eval.json");
    report_out << text << '\n';

    m.config = {{"max_len", max_len}, {"model", json::parse(config_to_json(model.config()))}};
    m.inputs = {{"split", o.input}, {"vocab", o.vocab}, {"checkpoint", o.checkpoint}};
    m.outputs = {{"report", (dir / "eval.json").string()}};
    write_manifest(dir, m);
    out_ << text << '\n';
    return 0;
  }

  int summarize(const Options& o) {
    Manifest m = begin("summarize");
    const Vocabulary vocab = Vocabulary::load(o.vocab);
    const Model<float> model = load_checked(o.checkpoint, vocab);
    std::string text;
    if (o.input.empty() || o.input == "-") text.assign(std::istreambuf_iterator<char>(in_), std::istreambuf_iterator<char>());
    else text = read_file(o.input);
    const auto tokens = tokenize(normalize_text(text));
    if (tokens.empty()) throw std::invalid_argument("input document is empty after normalization");
    if (tokens.size() > model.config().max_document_len) {
      throw std::invalid_argument("input has " + std::to_string(tokens.size()) + " tokens; the model accepts at most " +
                                  std::to_string(model.config().max_document_len));
    }
    const std::size_t max_len = o.max_len ? o.max_len : profile(o.profile).corpus.max_summary_tokens;
    const auto ids = model.greedy_decode(vocab.encode(tokens), max_len);
    const std::string summary = join_tokens(vocab.decode(ids));

    const fs::path dir(o.out);
    m.config = {{"max_len", max_len}};
    m.inputs = {{"document", o.input.empty() ? "-" : o.input}, {"vocab", o.vocab}, {"checkpoint", o.checkpoint}};
    m.outputs = {{"summary", "stdout"}};
    write_manifest(dir, m);
    out_ << summary << '\n';
    return 0;
  }

  int gradcheck(const Options& o) {
    Manifest m = begin("gradcheck");
    auto outcomes = gradcheck_suite(o.seed);
    outcomes.push_back(causality_suite(100, o.seed));
    outcomes.push_back(locality_suite(o.seed));
    bool ok = true;
    json rows = json::array();
    for (const auto& c : outcomes) {
      out_ << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
      rows.push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"threshold", c.threshold},
                      {"detail", c.detail}});
      ok = ok && c.passed;
    }
    const fs::path dir(o.out);
    auto report = open_output(dir / "gradcheck.json");
    report << rows.dump(2) << '\n';
    if (!ok) {
      err_ << "gradcheck: at least one check failed\n";
      return 1;
    }
    m.seed = o.seed;
    m.outputs = {{"report", (dir / "gradcheck.json").string()}};
    write_manifest(dir, m);
    return 0;
  }

 private:
  Manifest begin(const std::string& command) {
    Manifest m;
    m.command = command;
    m.argv = argv_;
    return m;
  }

  std::vector<std::string> argv_;
  std::istream& in_;
  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-level memory network summarizer", "mmn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MMN_VERSION);
  Options o;

  auto profile_opt = [&](CLI::App* sub) {
    sub->add_option("--profile", o.profile, "Preset: tifu-short, tifu-long, newsroom-abs, xsum")
        ->check(CLI::IsMember(profile_names()));
  };
  auto out_opt = [&](CLI::App* sub, const std::string& what) {
    sub->add_option("--out", o.out, "Output directory for " + what + " and manifest.json");
  };

  auto* pre = app.add_subcommand("preprocess", "Normalize, filter and split a JSONL corpus; build the vocabulary");
  pre->add_option("corpus", o.input, "JSONL corpus (id, document, title, tldr)")->required()->check(CLI::ExistingFile);
  profile_opt(pre);
  auto* pre_seed = pre->add_option("--seed", o.seed, "Split shuffle seed");
  pre->add_option("--config", o.config, "JSON overrides for the profile")->check(CLI::ExistingFile);
  out_opt(pre, "train.jsonl, test.jsonl, vocab.txt");

  auto* aud = app.add_subcommand("audit", "Lead, oracle, novel n-gram and bigram location statistics of a split");
  aud->add_option("split", o.input, "Tokenized split file")->required()->check(CLI::ExistingFile);
  aud->add_option("--bins", o.bins, "Histogram bins")->check(CLI::PositiveNumber);
  aud->add_option("--scores", o.scores, "External abstractive ROUGE-L (number, or file with one value per line)");
  out_opt(aud, "bias_report.json, bigram_location.csv");

  auto* trn = app.add_subcommand("train", "Train a model on a tokenized split");
  trn->add_option("split", o.input, "Tokenized training split")->required()->check(CLI::ExistingFile);
  trn->add_option("--vocab", o.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  profile_opt(trn);
  auto* trn_seed = trn->add_option("--seed", o.seed, "Initialization and shuffle seed");
  trn->add_option("--config", o.config, "JSON overrides for the profile")->check(CLI::ExistingFile);
  trn->add_option("--embeddings", o.embeddings, "Pretrained word vectors in text format")->check(CLI::ExistingFile);
  out_opt(trn, "model.ckpt, loss.csv");

  auto* evl = app.add_subcommand("eval", "Greedy-decode a split and report perplexity and ROUGE");
  evl->add_option("split", o.input, "Tokenized split")->required()->check(CLI::ExistingFile);
  evl->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  evl->add_option("--vocab", o.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  evl->add_option("--max-len", o.max_len, "Maximum summary tokens (default: profile cap)");
  profile_opt(evl);
  out_opt(evl, "eval.json");

  auto* sum = app.add_subcommand("summarize", "Summarize plain text from a file or standard input");
  sum->add_option("document", o.input, "Text file; '-' or omitted reads standard input");
  sum->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sum->add_option("--vocab", o.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  sum->add_option("--max-len", o.max_len, "Maximum summary tokens (default: profile cap)");
  profile_opt(sum);
  out_opt(sum, "the run record");

  auto* grd = app.add_subcommand("gradcheck", "Finite-difference, causality and locality verification");
  grd->add_option("--seed", o.seed, "Seed for the random test inputs");
  out_opt(grd, "gradcheck.json");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  std::vector<std::string> argv = {"mmn"};
  argv.insert(argv.end(), args.begin(), args.end());
  Commands commands(argv, in, out, err);
  CLI::App* chosen = app.get_subcommands().front();
  try {
    if (chosen == pre) return commands.preprocess(o, pre_seed->count() > 0);
    if (chosen == aud) return commands.audit(o);
    if (chosen == trn) return commands.train(o, trn_seed->count() > 0);
    if (chosen == evl) return commands.eval(o);
    if (chosen == sum) return commands.summarize(o);
    return commands.gradcheck(o);
  } catch (const std::exception& e) {
    err << "mmn " << chosen->get_name() << ": error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mmn::cli
