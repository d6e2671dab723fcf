#include "mmn/text.hpp"

#include <array>
#include <cctype>
#include <regex>
#include <utility>

namespace mmn {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

// Common typographic code points folded to ASCII before non-ASCII removal.
constexpr std::array<std::pair<std::string_view, std::string_view>, 10> kUnicodeFolds = {{
    {"\xE2\x80\x98", "'"},    // left single quote
    {"\xE2\x80\x99", "'"},    // right single quote
    {"\xE2\x80\x9C", "\""},   // left double quote
    {"\xE2\x80\x9D", "\""},   // right double quote
    {"\xE2\x80\x93", "-"},    // en dash
    {"\xE2\x80\x94", "-"},    // em dash
    {"\xE2\x80\xA6", "..."},  // ellipsis
    {"\xC2\xA0", " "},        // no-break space
    {"\xE2\x80\x8B", ""},     // zero-width space
    {"\xEF\xBB\xBF", ""},     // byte order mark
}};

std::string fold_unicode(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size();) {
    const auto c = static_cast<unsigned char>(in[i]);
    if (c < 0x80) {
      out += (c < 0x20 || c == 0x7F) ? ' ' : static_cast<char>(c);
      ++i;
      continue;
    }
    bool folded = false;
    for (const auto& [from, to] : kUnicodeFolds) {
      if (in.substr(i, from.size()) == from) {
        out += to;
        i += from.size();
        folded = true;
        break;
      }
    }
    if (folded) continue;
    // Skip the whole UTF-8 sequence.
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    i += len;
  }
  return out;
}

std::string decode_entities(const std::string& in) {
  static const std::array<std::pair<std::string_view, std::string_view>, 7> kNamed = {{
      {"&amp;", "&"}, {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&#39;", "'"}, {"&apos;", "'"}, {"&nbsp;", " "}}};
  static const std::regex kOther(R"(&#?[A-Za-z0-9]+;)");
  std::string out;
  for (std::size_t i = 0; i < in.size();) {
    bool hit = false;
    if (in[i] == '&') {
      for (const auto& [from, to] : kNamed) {
        if (std::string_view(in).substr(i, from.size()) == from) {
          out += to;
          i += from.size();
          hit = true;
          break;
        }
      }
    }
    if (!hit) out += in[i++];
  }
  return std::regex_replace(out, kOther, " ");
}

std::string strip_links(const std::string& in) {
  // [text](target) and ![alt](target) keep only their visible text.
  static const std::regex kLink(R"(!?\[([^\[\]]*)\]\([^()]*\))");
  return std::regex_replace(in, kLink, "$1");
}

std::string strip_urls(const std::string& in) {
  static const std::regex kUrl(R"((https?://|www\.)[^\s]*)", std::regex::icase);
  return std::regex_replace(in, kUrl, " ");
}

std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_name_char(char c) { return is_alnum(c) || c == '_' || c == '-'; }

// Rewrites r/name and u/name (optionally with a leading '/') that start a word.
std::string replace_references(const std::string& in) {
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    std::size_t start = i;
    if (in[i] == '/' && i + 1 < in.size()) start = i + 1;
    const bool boundary = i == 0 || !is_alnum(in[i - 1]);
    if (boundary && start + 2 < in.size() && (in[start] == 'r' || in[start] == 'u') && in[start + 1] == '/' &&
        is_name_char(in[start + 2])) {
      std::size_t end = start + 2;
      while (end < in.size() && is_name_char(in[end])) ++end;
      out += in[start] == 'r' ? "@subreddit" : "@userid";
      i = end;
      continue;
    }
    out += in[i++];
  }
  return out;
}

constexpr std::string_view kMarkupChars = "*_~#<>[]{}|\\^`";

std::string strip_markup(std::string s) {
  // Horizontal rules and setext underlines.
  static const std::regex kRule(R"((-{3,}|={3,}))");
  s = std::regex_replace(s, kRule, " ");
  for (auto& c : s) {
    if (kMarkupChars.find(c) != std::string_view::npos) c = ' ';
  }
  return s;
}

std::string collapse_whitespace(const std::string& in) {
  std::string out;
  out.reserve(in.size());
  for (char c : in) {
    if (is_space(c)) {
      if (!out.empty() && out.back() != ' ') out += ' ';
    } else {
      out += is_digit(c) ? '0' : c;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string normalize_once(std::string_view raw) {
  std::string s = fold_unicode(raw);
  s = decode_entities(s);
  s = strip_links(s);
  s = strip_urls(s);
  s = lowercase(std::move(s));
  s = replace_references(s);
  s = strip_markup(std::move(s));
  return collapse_whitespace(s);
}

}  // namespace

std::string normalize_text(std::string_view raw) {
  // Each rewrite can expose a pattern for an earlier one (an entity spelling
  // out a URL, markup hiding a reference); iterate to the fixpoint.
  std::string current = normalize_once(raw);
  for (int pass = 0; pass < 16; ++pass) {
    std::string next = normalize_once(current);
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

std::vector<std::string> tokenize(std::string_view text) {
  static constexpr std::array<std::string_view, 6> kClitics = {"s", "m", "d", "ll", "re", "ve"};
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '@' && i + 1 < n && is_alnum(text[i + 1])) {
      std::size_t end = i + 1;
      while (end < n && is_alnum(text[end])) ++end;
      tokens.emplace_back(text.substr(i, end - i));
      i = end;
      continue;
    }
    if (is_alnum(c)) {
      std::size_t end = i;
      while (end < n) {
        if (is_alnum(text[end])) {
          ++end;
        } else if ((text[end] == '.' || text[end] == ',') && end + 1 < n && is_digit(text[end + 1]) &&
                   is_digit(text[end - 1])) {
          end += 2;
        } else {
          break;
        }
      }
      std::string_view word = text.substr(i, end - i);
      // Contractions: word + "'" + clitic, where the clitic ends the chunk.
      if (end + 1 < n && text[end] == '\'') {
        std::size_t tail = end + 1;
        while (tail < n && is_alpha(text[tail])) ++tail;
        const std::string_view clitic = text.substr(end + 1, tail - end - 1);
        const bool at_boundary = tail == n || !is_alnum(text[tail]);
        if (at_boundary && clitic == "t" && word.size() > 1 && word.back() == 'n') {
          tokens.emplace_back(word.substr(0, word.size() - 1));
          tokens.emplace_back("n't");
          i = tail;
          continue;
        }
        bool known = false;
        for (auto k : kClitics) known = known || clitic == k;
        if (at_boundary && known) {
          tokens.emplace_back(word);
          tokens.emplace_back("'" + std::string(clitic));
          i = tail;
          continue;
        }
      }
      tokens.emplace_back(word);
      i = end;
      continue;
    }
    if (is_punct(c)) {
      std::size_t end = i + 1;
      while (end < n && text[end] == c) ++end;
      tokens.emplace_back(text.substr(i, end - i));
      i = end;
      continue;
    }
    // Any other byte stands alone.
    tokens.emplace_back(1, c);
    ++i;
  }
  return tokens;
}

namespace {

constexpr std::array<std::string_view, 5> kSummaryPrefixes = {"tl;dr :", "tifu by", "tifu :", "tifu-", "tl;dr"};

// Length of the input consumed when `pattern` matches at the start of `s`, or 0.
// A pattern space matches one or more whitespace characters; whitespace may also surround
// any punctuation mark in the pattern.
std::size_t match_prefix(std::string_view s, std::string_view pattern) {
  std::size_t i = 0;
  char prev = ' ';
  for (char p : pattern) {
    const bool loose = p == ' ' || is_punct(p) || is_punct(prev);
    prev = p;
    if (loose) {
      const std::size_t before = i;
      while (i < s.size() && is_space(s[i])) ++i;
      if (p == ' ') {
        if (i == before) return 0;
        continue;
      }
    }
    if (i >= s.size() || std::tolower(static_cast<unsigned char>(s[i])) != p) return 0;
    ++i;
  }
  if (is_alnum(pattern.back()) && i < s.size() && is_alnum(s[i])) return 0;
  return i;
}

}  // namespace

std::string trim_summary_prefix(std::string_view summary) {
  std::string_view s = summary;
  auto skip_filler = [&] {
    while (!s.empty() && (is_space(s.front()) || s.front() == ':' || s.front() == '-' || s.front() == ',' ||
                          s.front() == ';' || s.front() == '.')) {
      s.remove_prefix(1);
    }
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  for (bool trimmed = true; trimmed;) {
    trimmed = false;
    for (auto pattern : kSummaryPrefixes) {
      if (std::size_t used = match_prefix(s, pattern)) {
        s.remove_prefix(used);
        skip_filler();
        trimmed = true;
        break;
      }
    }
  }
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace mmn
