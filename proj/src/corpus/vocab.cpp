#include "mmn/vocab.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace mmn {

namespace {

constexpr std::array<std::string_view, kReservedTokens> kReserved = {"<pad>", "<unk>", "<bos>", "<eos>"};

bool is_reserved(std::string_view token) {
  return std::find(kReserved.begin(), kReserved.end(), token) != kReserved.end();
}

}  // namespace

Vocabulary::Vocabulary() {
  for (auto r : kReserved) add(std::string(r));
}

void Vocabulary::add(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!index_.emplace(token, id).second) throw std::invalid_argument("duplicate vocabulary token: " + token);
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> corpus, std::size_t max_size) {
  if (max_size < 1) throw std::invalid_argument("vocabulary size must be at least 1");
  struct Stat {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Stat> stats;
  std::size_t position = 0;
  for (const auto& sequence : corpus) {
    for (const auto& token : sequence) {
      if (is_reserved(token)) continue;
      auto [it, inserted] = stats.try_emplace(token, Stat{0, position});
      ++it->second.count;
      ++position;
    }
  }
  std::vector<std::pair<const std::string*, Stat>> ranked;
  ranked.reserve(stats.size());
  for (const auto& [token, stat] : stats) ranked.emplace_back(&token, stat);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first < b.second.first;
  });

  Vocabulary vocab;
  const std::size_t keep = std::min(max_size, ranked.size());
  for (std::size_t i = 0; i < keep; ++i) vocab.add(*ranked[i].first);
  return vocab;
}

Vocabulary Vocabulary::read(std::istream& in) {
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no < kReservedTokens) {
      if (line != kReserved[line_no]) {
        throw std::runtime_error("vocabulary line " + std::to_string(line_no + 1) + ": expected reserved token " +
                                 std::string(kReserved[line_no]));
      }
    } else {
      if (line.empty()) throw std::runtime_error("vocabulary line " + std::to_string(line_no + 1) + ": empty token");
      vocab.add(line);
    }
    ++line_no;
  }
  if (line_no < kReservedTokens) throw std::runtime_error("vocabulary file is missing the reserved tokens");
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  return read(in);
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  write(out);
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(token(id));
  return out;
}

}  // namespace mmn
