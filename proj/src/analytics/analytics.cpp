#include "mmn/analytics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include "json.hpp"

namespace mmn {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[NGram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

RougeScore make_score(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  if (cand_total <= 0.0 || ref_total <= 0.0) return s;
  s.precision = overlap / cand_total;
  s.recall = overlap / ref_total;
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

bool is_terminal(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) { return c == '.' || c == '!' || c == '?'; });
}

}  // namespace

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
  if (n < 1) throw std::invalid_argument("rouge_n needs n >= 1");
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  double overlap = 0.0;
  for (const auto& [gram, count] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += static_cast<double>(std::min(count, it->second));
  }
  const auto total = [](std::span<const std::string> t, std::size_t k) {
    return t.size() >= k ? static_cast<double>(t.size() - k + 1) : 0.0;
  };
  return make_score(overlap, total(candidate, n), total(reference, n));
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  const std::size_t m = candidate.size();
  const std::size_t n = reference.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return make_score(static_cast<double>(prev[n]), static_cast<double>(m), static_cast<double>(n));
}

double rouge_mean_f1(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return (rouge_n(candidate, reference, 1).f1 + rouge_n(candidate, reference, 2).f1 + rouge_l(candidate, reference).f1) /
         3.0;
}

std::vector<std::string> sentence_split(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    const auto first = current.find_first_not_of(" \t\n\r");
    if (first != std::string::npos) {
      const auto last = current.find_last_not_of(" \t\n\r");
      out.push_back(current.substr(first, last - first + 1));
    }
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    current += text[i];
    const bool terminal = text[i] == '.' || text[i] == '!' || text[i] == '?';
    if (terminal && i + 1 < text.size() && std::isspace(static_cast<unsigned char>(text[i + 1]))) flush();
  }
  flush();
  return out;
}

std::vector<TokenList> sentence_split(std::span<const std::string> tokens) {
  std::vector<TokenList> out;
  TokenList current;
  for (const auto& t : tokens) {
    current.push_back(t);
    if (is_terminal(t)) out.push_back(std::move(current)), current.clear();
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

TokenList lead_baseline(std::span<const TokenList> sentences, std::size_t k) {
  if (sentences.empty()) throw std::invalid_argument("lead baseline of an empty document");
  TokenList out;
  for (std::size_t i = 0; i < std::min(k, sentences.size()); ++i) out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  return out;
}

OracleResult ext_oracle(std::span<const TokenList> sentences, std::span<const std::string> reference, std::size_t k) {
  if (sentences.empty()) throw std::invalid_argument("oracle of an empty document");
  if (k < 1) throw std::invalid_argument("oracle needs k >= 1");
  OracleResult result;
  std::vector<bool> chosen(sentences.size(), false);
  auto assemble = [&](const std::vector<bool>& mask) {
    TokenList summary;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (mask[i]) summary.insert(summary.end(), sentences[i].begin(), sentences[i].end());
    }
    return summary;
  };
  double best_total = -1.0;
  for (std::size_t round = 0; round < std::min(k, sentences.size()); ++round) {
    std::optional<std::size_t> best;
    double best_score = best_total;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (chosen[i]) continue;
      auto trial = chosen;
      trial[i] = true;
      const double score = rouge_mean_f1(assemble(trial), reference);
      if (score > best_score) best_score = score, best = i;
    }
    if (!best) break;
    chosen[*best] = true;
    best_total = best_score;
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (chosen[i]) result.selected.push_back(i);
  }
  result.summary = assemble(chosen);
  result.score = best_total;
  return result;
}

double novel_ngram_ratio(std::span<const std::string> document, std::span<const std::string> reference, std::size_t n) {
  if (n < 1) throw std::invalid_argument("novel n-gram ratio needs n >= 1");
  if (reference.size() < n) {
    throw UndefinedRatioError("reference has " + std::to_string(reference.size()) + " tokens, fewer than n = " +
                              std::to_string(n));
  }
  std::set<NGram> seen;
  for (const auto& [gram, count] : ngram_counts(document, n)) seen.insert(gram);
  std::size_t novel = 0;
  const std::size_t total = reference.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    if (!seen.contains(NGram(reference.begin() + i, reference.begin() + i + n))) ++novel;
  }
  return static_cast<double>(novel) / static_cast<double>(total);
}

LocationHistogram::LocationHistogram(std::size_t bins) : counts(bins, 0.0) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
}

double LocationHistogram::total() const {
  double t = 0.0;
  for (double c : counts) t += c;
  return t;
}

std::vector<double> LocationHistogram::densities() const {
  std::vector<double> d(counts.size(), 0.0);
  const double t = total();
  if (t == 0.0) return d;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = counts[i] / t;
  return d;
}

void LocationHistogram::merge(const LocationHistogram& other) {
  if (other.bins() != bins()) throw std::invalid_argument("histogram bin counts differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

LocationHistogram bigram_location_density(std::span<const std::string> document, std::span<const std::string> reference,
                                          std::size_t bins) {
  LocationHistogram hist(bins);
  if (document.size() < 2 || reference.size() < 2) return hist;
  std::map<NGram, std::vector<std::size_t>> positions;
  for (std::size_t i = 0; i + 1 < document.size(); ++i) positions[{document[i], document[i + 1]}].push_back(i);
  const double span = static_cast<double>(document.size() - 1);
  for (std::size_t j = 0; j + 1 < reference.size(); ++j) {
    auto it = positions.find({reference[j], reference[j + 1]});
    if (it == positions.end()) continue;
    for (std::size_t idx : it->second) {
      const double p = static_cast<double>(idx) / span;
      const auto b = std::min(static_cast<std::size_t>(std::floor(p * static_cast<double>(bins))), bins - 1);
      hist.counts[b] += 1.0;
    }
  }
  return hist;
}

BiasReport bias_report(std::span<const SummaryPair> corpus, std::optional<double> abstractive_rl, std::size_t bins) {
  if (corpus.empty()) throw std::invalid_argument("bias report of an empty corpus");
  constexpr std::size_t kMaxN = 4;
  BiasReport report;
  report.documents = corpus.size();
  report.location = LocationHistogram(bins);
  report.novel_ngram_percent.assign(kMaxN, 0.0);
  report.novel_ngram_docs.assign(kMaxN, 0);

  for (const auto& pair : corpus) {
    const auto sentences = sentence_split(pair.document);
    if (!sentences.empty()) {
      const auto lead = lead_baseline(sentences, 1);
      report.lead.r1 += rouge_n(lead, pair.reference, 1).f1;
      report.lead.r2 += rouge_n(lead, pair.reference, 2).f1;
      report.lead.rl += rouge_l(lead, pair.reference).f1;
      const auto oracle = ext_oracle(sentences, pair.reference, 1);
      report.oracle.r1 += rouge_n(oracle.summary, pair.reference, 1).f1;
      report.oracle.r2 += rouge_n(oracle.summary, pair.reference, 2).f1;
      report.oracle.rl += rouge_l(oracle.summary, pair.reference).f1;
    }
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      if (pair.reference.size() < n) continue;
      report.novel_ngram_percent[n - 1] += novel_ngram_ratio(pair.document, pair.reference, n);
      ++report.novel_ngram_docs[n - 1];
    }
    report.location.merge(bigram_location_density(pair.document, pair.reference, bins));
  }

  const double docs = static_cast<double>(corpus.size());
  for (RougeTriple* t : {&report.lead, &report.oracle}) {
    t->r1 = 100.0 * t->r1 / docs;
    t->r2 = 100.0 * t->r2 / docs;
    t->rl = 100.0 * t->rl / docs;
  }
  for (std::size_t n = 0; n < kMaxN; ++n) {
    if (report.novel_ngram_docs[n] > 0) {
      report.novel_ngram_percent[n] = 100.0 * report.novel_ngram_percent[n] / static_cast<double>(report.novel_ngram_docs[n]);
    }
  }
  if (abstractive_rl) {
    if (*abstractive_rl < 0.0) throw std::invalid_argument("abstractive ROUGE-L must be non-negative");
    report.abstractive_rl = abstractive_rl;
    if (report.lead.rl > 0.0) report.abstractive_over_lead = *abstractive_rl / report.lead.rl;
    if (report.oracle.rl > 0.0) report.abstractive_over_oracle = *abstractive_rl / report.oracle.rl;
  }
  return report;
}

std::string report_json(const BiasReport& report) {
  using nlohmann::json;
  auto triple = [](const RougeTriple& t) { return json{{"rouge_1", t.r1}, {"rouge_2", t.r2}, {"rouge_l", t.rl}}; };
  json novel = json::object();
  for (std::size_t n = 0; n < report.novel_ngram_percent.size(); ++n) {
    novel[std::to_string(n + 1)] = {{"percent", report.novel_ngram_percent[n]}, {"documents", report.novel_ngram_docs[n]}};
  }
  json bins = json::array();
  const auto densities = report.location.densities();
  for (std::size_t b = 0; b < densities.size(); ++b) {
    bins.push_back({{"bin_start", report.location.bin_start(b)}, {"density", densities[b]}});
  }
  json out = {
      {"documents", report.documents},
      {"lead", triple(report.lead)},
      {"ext_oracle", triple(report.oracle)},
      {"novel_ngrams", novel},
      {"location_histogram", {{"bins", bins}, {"matched_bigrams", report.location.total()}, {"empty", report.location.empty()}}},
  };
  if (report.abstractive_rl) out["abstractive_rl"] = *report.abstractive_rl;
  if (report.abstractive_over_lead) out["abstractive_over_lead"] = *report.abstractive_over_lead;
  if (report.abstractive_over_oracle) out["abstractive_over_oracle"] = *report.abstractive_over_oracle;
  return out.dump(2);
}

void write_histogram_csv(std::ostream& out, const LocationHistogram& histogram) {
  out << "bin_start,density\n";
  const auto densities = histogram.densities();
  for (std::size_t b = 0; b < densities.size(); ++b) out << histogram.bin_start(b) << ',' << densities[b] << '\n';
}

}  // namespace mmn
