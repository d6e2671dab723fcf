#pragma once

// Brute-force reference implementations shared by the unit and acceptance
// suites. They avoid the library's maps and dynamic programming on purpose.

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mmn/analytics.hpp"
#include "mmn/optim.hpp"

namespace mmn::oracle {

inline TokenList words(const std::string& s) {
  TokenList out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline TokenList random_tokens(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  TokenList out(rng.below(max_len + 1));
  for (auto& t : out) t = std::string(1, static_cast<char>('a' + rng.below(alphabet)));
  return out;
}

inline std::vector<TokenList> grams(const TokenList& t, std::size_t n) {
  std::vector<TokenList> g;
  for (std::size_t i = 0; i + n <= t.size(); ++i) g.emplace_back(t.begin() + i, t.begin() + i + n);
  return g;
}

// Plain-list n-gram overlap with clipped counts.
inline double overlap(const TokenList& a, const TokenList& b, std::size_t n) {
  const auto ga = grams(a, n);
  const auto gb = grams(b, n);
  std::vector<TokenList> distinct;
  double total = 0.0;
  for (const auto& g : ga) {
    if (std::find(distinct.begin(), distinct.end(), g) != distinct.end()) continue;
    distinct.push_back(g);
    const auto ca = std::count(ga.begin(), ga.end(), g);
    const auto cb = std::count(gb.begin(), gb.end(), g);
    total += static_cast<double>(std::min(ca, cb));
  }
  return total;
}

inline bool is_subsequence(const TokenList& sub, const TokenList& seq) {
  std::size_t j = 0;
  for (const auto& t : seq) {
    if (j < sub.size() && sub[j] == t) ++j;
  }
  return j == sub.size();
}

// Exhaustive LCS over all subsequences of `a` (|a| <= 20).
inline std::size_t lcs(const TokenList& a, const TokenList& b) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    TokenList sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    if (sub.size() > best && is_subsequence(sub, b)) best = sub.size();
  }
  return best;
}

inline double f1_of(double hits, double p_total, double r_total) {
  if (p_total == 0 || r_total == 0 || hits == 0) return 0.0;
  const double p = hits / p_total;
  const double r = hits / r_total;
  return 2 * p * r / (p + r);
}

inline double rouge_n_f1(const TokenList& c, const TokenList& r, std::size_t n) {
  const double pc = c.size() >= n ? double(c.size() - n + 1) : 0.0;
  const double pr = r.size() >= n ? double(r.size() - n + 1) : 0.0;
  return f1_of(overlap(c, r, n), pc, pr);
}

inline double rouge_l_f1(const TokenList& c, const TokenList& r) {
  return f1_of(static_cast<double>(lcs(c, r)), double(c.size()), double(r.size()));
}

// Best single sentence by mean R-1/R-2/R-L F1, earliest on ties.
struct SentenceChoice {
  std::size_t index = 0;
  double score = -1.0;
};

inline SentenceChoice best_sentence(const std::vector<TokenList>& sentences, const TokenList& ref) {
  SentenceChoice best;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    const double sc = (rouge_n_f1(s, ref, 1) + rouge_n_f1(s, ref, 2) + rouge_l_f1(s, ref)) / 3.0;
    if (sc > best.score) best = {i, sc};
  }
  return best;
}

// Fraction of reference n-grams absent from the document, by linear search.
inline double novel_ratio(const TokenList& doc, const TokenList& ref, std::size_t n) {
  const auto dg = grams(doc, n);
  const auto rg = grams(ref, n);
  std::size_t novel = 0;
  for (const auto& g : rg) novel += std::find(dg.begin(), dg.end(), g) == dg.end();
  return static_cast<double>(novel) / static_cast<double>(rg.size());
}

}  // namespace mmn::oracle
