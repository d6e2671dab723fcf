#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mmn {

// Cleans one raw post field: strips markdown markup, HTML entities, URLs and
// non-ASCII symbols; lowercases; maps every digit to '0'; rewrites subreddit
// references (r/name) to "@subreddit" and user references (u/name) to
// "@userid"; collapses whitespace. normalize_text(normalize_text(x)) ==
// normalize_text(x).
std::string normalize_text(std::string_view raw);

// Whitespace split with punctuation detached. Contractions split at the
// apostrophe ("don't" -> "do", "n't"); "@word" stays one token; numbers keep
// internal '.' and ','; runs of one repeated punctuation mark stay together.
std::vector<std::string> tokenize(std::string_view text);

// Repeatedly removes a leading "tifu by", "tifu-", "tifu :", "tl;dr :" or
// "tl;dr" (case-insensitive, flexible spacing around punctuation) together with
// any punctuation and spaces that follow it.
std::string trim_summary_prefix(std::string_view summary);

// Joins tokens with single spaces.
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace mmn
