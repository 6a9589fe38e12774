#include "kgsynth/tokenizer.hpp"

#include <fstream>
#include <limits>

#include "kgsynth/error.hpp"

namespace kgsynth {

std::optional<std::vector<TokenId>> ByteTokenizer::encode(
    std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

std::string ByteTokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t == eos()) continue;
    if (t < 0 || t > 255) throw Error("byte token out of range");
    out.push_back(static_cast<char>(t));
  }
  return out;
}

PieceTokenizer::PieceTokenizer(std::vector<std::string> pieces)
    : pieces_(std::move(pieces)) {
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (pieces_[i].empty()) throw ValidationError("empty vocabulary piece");
    if (!ids_.emplace(pieces_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary piece '" + pieces_[i] + "'");
    }
    max_piece_len_ = std::max(max_piece_len_, pieces_[i].size());
  }
}

PieceTokenizer PieceTokenizer::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vocabulary: " + path.string());
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) pieces.push_back(line);
  }
  return PieceTokenizer(std::move(pieces));
}

std::optional<std::vector<TokenId>> PieceTokenizer::encode(
    std::string_view text) const {
  // cost[i]: fewest pieces covering text[i..]; choice[i]: first piece used.
  const std::size_t n = text.size();
  constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> cost(n + 1, kInf);
  std::vector<TokenId> choice(n + 1, -1);
  std::vector<std::size_t> length(n + 1, 0);
  cost[n] = 0;
  std::string key;
  for (std::size_t i = n; i-- > 0;) {
    const std::size_t longest = std::min(max_piece_len_, n - i);
    for (std::size_t len = longest; len >= 1; --len) {
      if (cost[i + len] == kInf) continue;
      key.assign(text.substr(i, len));
      auto it = ids_.find(key);
      if (it == ids_.end()) continue;
      if (cost[i + len] + 1 < cost[i]) {
        cost[i] = cost[i + len] + 1;
        choice[i] = it->second;
        length[i] = len;
      }
    }
  }
  if (cost[0] == kInf) return std::nullopt;
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < n; i += length[i]) out.push_back(choice[i]);
  return out;
}

std::string PieceTokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (t == eos()) continue;
    out += pieces_.at(static_cast<std::size_t>(t));
  }
  return out;
}

TokenizableFilter filter_tokenizable(std::span<const std::string> catalog,
                                     const Tokenizer& tokenizer) {
  TokenizableFilter out;
  for (const auto& label : catalog) {
    if (label.empty()) {
      out.dropped.push_back({label, "empty label"});
    } else if (tokenizer.encode(label)) {
      out.kept.push_back(label);
    } else {
      out.dropped.push_back({label, "not encodable with the vocabulary"});
    }
  }
  return out;
}

}  // namespace kgsynth
