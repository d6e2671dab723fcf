#include "mmn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "json.hpp"
#include "mmn/optim.hpp"
#include "mmn/text.hpp"

namespace mmn {

using nlohmann::json;

CorpusProfile short_corpus_profile() { return {SummarySource::kTitle, 500, 20}; }

CorpusProfile long_corpus_profile() { return {SummarySource::kTldr, 500, 50}; }

std::optional<TokenizedPost> preprocess_post(const RawPost& post, const CorpusProfile& profile) {
  const std::optional<std::string>& raw_summary =
      profile.summary_source == SummarySource::kTitle ? std::optional<std::string>(post.title) : post.tldr;
  if (!raw_summary) return std::nullopt;
  TokenizedPost out;
  out.id = post.id;
  out.document = tokenize(normalize_text(post.body));
  out.summary = tokenize(trim_summary_prefix(normalize_text(*raw_summary)));
  return out;
}

bool within_caps(const TokenizedPost& post, const CorpusProfile& profile) {
  return !post.document.empty() && !post.summary.empty() && post.document.size() <= profile.max_document_tokens &&
         post.summary.size() <= profile.max_summary_tokens;
}

SplitResult filter_and_split(std::vector<TokenizedPost> posts, const CorpusProfile& profile, std::uint64_t seed) {
  std::erase_if(posts, [&](const TokenizedPost& p) { return !within_caps(p, profile); });
  std::sort(posts.begin(), posts.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  Rng rng(seed);
  for (std::size_t i = posts.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(posts[i - 1], posts[j]);
  }

  const std::size_t test_count = (posts.size() * 5 + 50) / 100;
  const std::size_t train_count = posts.size() - test_count;
  SplitResult split;
  split.train.assign(std::make_move_iterator(posts.begin()),
                     std::make_move_iterator(posts.begin() + static_cast<std::ptrdiff_t>(train_count)));
  split.test.assign(std::make_move_iterator(posts.begin() + static_cast<std::ptrdiff_t>(train_count)),
                    std::make_move_iterator(posts.end()));
  return split;
}

Example encode_example(const TokenizedPost& post, const Vocabulary& vocab) {
  Example ex;
  ex.id = post.id;
  ex.document_ids = vocab.encode(post.document);
  ex.summary_ids = vocab.encode(post.summary);
  ex.summary_ids.push_back(kEosId);
  return ex;
}

namespace {

const json& require_field(const json& record, const char* name, std::size_t line) {
  auto it = record.find(name);
  if (it == record.end()) throw CorpusFormatError(line, std::string("missing field \"") + name + "\"");
  return *it;
}

std::string require_string(const json& record, const char* name, std::size_t line) {
  const json& v = require_field(record, name, line);
  if (!v.is_string()) throw CorpusFormatError(line, std::string("field \"") + name + "\" must be a string");
  return v.get<std::string>();
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::vector<RawPost> read_corpus(std::istream& in) {
  std::vector<RawPost> posts;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusFormatError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) throw CorpusFormatError(line_no, "record must be a JSON object");
    RawPost post;
    post.id = require_string(record, "id", line_no);
    if (post.id.empty()) throw CorpusFormatError(line_no, "empty id");
    if (!seen.insert(post.id).second) throw CorpusFormatError(line_no, "duplicate id \"" + post.id + "\"");
    post.body = require_string(record, "document", line_no);
    post.title = require_string(record, "title", line_no);
    if (auto it = record.find("tldr"); it != record.end() && !it->is_null()) {
      if (!it->is_string()) throw CorpusFormatError(line_no, "field \"tldr\" must be a string or null");
      post.tldr = it->get<std::string>();
    }
    posts.push_back(std::move(post));
  }
  return posts;
}

std::vector<RawPost> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  return read_corpus(in);
}

void write_examples(std::ostream& out, const std::vector<Example>& examples) {
  for (const auto& ex : examples) {
    json record = {{"id", ex.id}, {"document_ids", ex.document_ids}, {"summary_ids", ex.summary_ids}};
    out << record.dump() << '\n';
  }
}

std::vector<Example> read_examples(std::istream& in) {
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    try {
      const json record = json::parse(line);
      Example ex;
      ex.id = require_string(record, "id", line_no);
      ex.document_ids = require_field(record, "document_ids", line_no).get<std::vector<TokenId>>();
      ex.summary_ids = require_field(record, "summary_ids", line_no).get<std::vector<TokenId>>();
      examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw CorpusFormatError(line_no, std::string("malformed example: ") + e.what());
    }
  }
  return examples;
}

std::vector<Example> read_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file " + path.string());
  return read_examples(in);
}

void write_tokenized(std::ostream& out, std::span<const TokenizedPost> posts) {
  for (const auto& p : posts) {
    json record = {{"id", p.id}, {"document", p.document}, {"summary", p.summary}};
    out << record.dump() << '\n';
  }
}

std::vector<TokenizedPost> read_tokenized(std::istream& in) {
  std::vector<TokenizedPost> posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    try {
      const json record = json::parse(line);
      TokenizedPost p;
      p.id = require_string(record, "id", line_no);
      p.document = require_field(record, "document", line_no).get<std::vector<std::string>>();
      p.summary = require_field(record, "summary", line_no).get<std::vector<std::string>>();
      posts.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw CorpusFormatError(line_no, std::string("malformed tokenized record: ") + e.what());
    }
  }
  return posts;
}

std::vector<TokenizedPost> read_tokenized(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file " + path.string());
  return read_tokenized(in);
}

}  // namespace mmn
