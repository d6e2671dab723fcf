#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmn {

using TokenList = std::vector<std::string>;

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Clipped n-gram overlap. Either side without n-grams scores 0.
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);
// Longest common subsequence.
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
// mean(R-1, R-2, R-L) F1.
double rouge_mean_f1(std::span<const std::string> candidate, std::span<const std::string> reference);

// Breaks after '.', '!' or '?' when whitespace follows. No empty sentences.
std::vector<std::string> sentence_split(std::string_view text);
// Token version: a sentence ends at a token made only of '.', '!' and '?'.
std::vector<TokenList> sentence_split(std::span<const std::string> tokens);

// First k sentences, concatenated.
TokenList lead_baseline(std::span<const TokenList> sentences, std::size_t k = 1);

struct OracleResult {
  std::vector<std::size_t> selected;  // sentence indices in document order
  TokenList summary;
  double score = 0.0;  // mean(R-1, R-2, R-L) F1 of `summary`
};

// k = 1 is an exact argmax (earliest sentence on ties); k > 1 adds sentences
// greedily while the mean score improves.
OracleResult ext_oracle(std::span<const TokenList> sentences, std::span<const std::string> reference,
                        std::size_t k = 1);

class UndefinedRatioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Share of reference n-grams (with multiplicity) that never occur in the
// document. Throws UndefinedRatioError when the reference has fewer than n tokens.
double novel_ngram_ratio(std::span<const std::string> document, std::span<const std::string> reference,
                         std::size_t n);

// Positions of reference bigrams inside the document, as raw counts per bin.
struct LocationHistogram {
  explicit LocationHistogram(std::size_t bins = 20);

  std::size_t bins() const { return counts.size(); }
  double total() const;
  bool empty() const { return total() == 0.0; }
  std::vector<double> densities() const;  // all zero when empty
  double bin_start(std::size_t b) const { return static_cast<double>(b) / static_cast<double>(bins()); }
  void merge(const LocationHistogram& other);

  std::vector<double> counts;
};

// Every match of every reference bigram counts, at first-token index / (|doc| - 1).
// Documents under two tokens contribute nothing.
LocationHistogram bigram_location_density(std::span<const std::string> document,
                                          std::span<const std::string> reference, std::size_t bins = 20);

struct SummaryPair {
  TokenList document;
  TokenList reference;
};

struct RougeTriple {
  double r1 = 0.0;
  double r2 = 0.0;
  double rl = 0.0;
};

// Corpus means on a 0-100 scale.
struct BiasReport {
  std::size_t documents = 0;
  RougeTriple lead;
  RougeTriple oracle;
  std::vector<double> novel_ngram_percent;   // n = 1..4
  std::vector<std::size_t> novel_ngram_docs;  // documents with a defined ratio, per n
  LocationHistogram location{20};
  std::optional<double> abstractive_rl;
  std::optional<double> abstractive_over_lead;
  std::optional<double> abstractive_over_oracle;
};

// Throws std::invalid_argument on an empty corpus. `abstractive_rl` is an
// externally measured ROUGE-L on the same 0-100 scale.
BiasReport bias_report(std::span<const SummaryPair> corpus, std::optional<double> abstractive_rl = std::nullopt,
                       std::size_t bins = 20);

std::string report_json(const BiasReport& report);
// "bin_start,density" rows.
void write_histogram_csv(std::ostream& out, const LocationHistogram& histogram);

}  // namespace mmn
