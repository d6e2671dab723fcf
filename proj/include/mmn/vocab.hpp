#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmn {

using TokenId = std::uint32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr std::size_t kReservedTokens = 4;
inline constexpr std::size_t kDefaultVocabularySize = 15000;

// Token <-> id map. Ids are contiguous from 0; the first four are <pad>,
// <unk>, <bos>, <eos>; the rest are ordered by descending corpus frequency.
class Vocabulary {
 public:
  Vocabulary();

  // Keeps the `max_size` most frequent tokens; ties go to the earliest first
  // occurrence in corpus order.
  static Vocabulary build(std::span<const std::vector<std::string>> corpus, std::size_t max_size = kDefaultVocabularySize);

  // One token per line; lines 0-3 must hold the reserved literals, so the
  // zero-based line index equals the id.
  static Vocabulary read(std::istream& in);
  static Vocabulary load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;  // kUnkId when absent
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace mmn
