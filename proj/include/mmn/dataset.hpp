#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

#include "mmn/vocab.hpp"

namespace mmn {

// A malformed corpus record; `line()` is 1-based.
class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct RawPost {
  std::string id;
  std::string body;
  std::string title;
  std::optional<std::string> tldr;
};

enum class SummarySource { kTitle, kTldr };

// Which field is the gold summary and the length caps that apply to it.
struct CorpusProfile {
  SummarySource summary_source = SummarySource::kTitle;
  std::size_t max_document_tokens = 500;
  std::size_t max_summary_tokens = 20;  // content tokens, EOS excluded
};

CorpusProfile short_corpus_profile();  // title summaries, <= 20 tokens
CorpusProfile long_corpus_profile();   // TL;DR summaries, <= 50 tokens

struct TokenizedPost {
  std::string id;
  std::vector<std::string> document;
  std::vector<std::string> summary;
};

// Token ids ready for the model. summary_ids ends with kEosId.
struct Example {
  std::string id;
  std::vector<TokenId> document_ids;
  std::vector<TokenId> summary_ids;
};

struct SplitResult {
  std::vector<TokenizedPost> train;
  std::vector<TokenizedPost> test;
};

// normalize -> trim (summary only) -> tokenize. Returns nullopt when the
// profile's summary field is absent.
std::optional<TokenizedPost> preprocess_post(const RawPost& post, const CorpusProfile& profile);

// Drops posts with an empty side, a document over the cap, or a summary over
// the cap; orders survivors by id, shuffles them with `seed`, and puts
// round(5%) into the test split.
SplitResult filter_and_split(std::vector<TokenizedPost> posts, const CorpusProfile& profile, std::uint64_t seed);

bool within_caps(const TokenizedPost& post, const CorpusProfile& profile);

Example encode_example(const TokenizedPost& post, const Vocabulary& vocab);

// Line-delimited JSON: {"id", "document", "title", "tldr"}; ids must be unique.
std::vector<RawPost> read_corpus(std::istream& in);
std::vector<RawPost> read_corpus(const std::filesystem::path& path);

// Line-delimited JSON: {"id", "document_ids", "summary_ids"}.
void write_examples(std::ostream& out, const std::vector<Example>& examples);
std::vector<Example> read_examples(std::istream& in);
std::vector<Example> read_examples(const std::filesystem::path& path);

// JSONL with id, document (token array), summary (token array).
void write_tokenized(std::ostream& out, std::span<const TokenizedPost> posts);
std::vector<TokenizedPost> read_tokenized(std::istream& in);
std::vector<TokenizedPost> read_tokenized(const std::filesystem::path& path);

}  // namespace mmn
