#include "kgsynth/trie.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "kgsynth/error.hpp"

namespace kgsynth {

CatalogTrie CatalogTrie::build(std::span<const std::string> entries,
                               const Tokenizer& tokenizer) {
  if (entries.empty()) {
    throw ValidationError("cannot build a trie from an empty catalog");
  }
  CatalogTrie trie;
  trie.nodes_.emplace_back();
  for (const auto& entry : entries) {
    auto tokens = tokenizer.encode(entry);
    if (!tokens || tokens->empty()) {
      throw ValidationError("catalog entry '" + entry +
                            "' cannot be tokenized");
    }
    NodeIndex node = trie.root();
    for (TokenId t : *tokens) {
      auto& kids = trie.nodes_[node].children;
      auto it = std::lower_bound(
          kids.begin(), kids.end(), t,
          [](const Child& c, TokenId tok) { return c.token < tok; });
      if (it != kids.end() && it->token == t) {
        node = it->node;
        continue;
      }
      const auto fresh = static_cast<NodeIndex>(trie.nodes_.size());
      kids.insert(it, Child{t, fresh});
      trie.nodes_.emplace_back();
      node = fresh;
    }
    auto& terminal = trie.nodes_[node].terminal;
    if (terminal >= 0) {
      spdlog::warn("trie collision: '{}' tokenizes like '{}'; keeping the first",
                   entry, trie.entries_[terminal]);
      trie.collisions_.push_back({trie.entries_[terminal], entry});
      continue;
    }
    terminal = static_cast<std::int64_t>(trie.entries_.size());
    trie.entries_.push_back(entry);
  }
  return trie;
}

std::span<const CatalogTrie::Child> CatalogTrie::children(
    NodeIndex node) const {
  return nodes_.at(node).children;
}

std::optional<CatalogTrie::NodeIndex> CatalogTrie::child(NodeIndex node,
                                                         TokenId token) const {
  const auto& kids = nodes_.at(node).children;
  auto it = std::lower_bound(
      kids.begin(), kids.end(), token,
      [](const Child& c, TokenId tok) { return c.token < tok; });
  if (it == kids.end() || it->token != token) return std::nullopt;
  return it->node;
}

std::optional<std::size_t> CatalogTrie::terminal(NodeIndex node) const {
  auto t = nodes_.at(node).terminal;
  if (t < 0) return std::nullopt;
  return static_cast<std::size_t>(t);
}

std::vector<std::vector<TokenId>> CatalogTrie::paths() const {
  std::vector<std::vector<TokenId>> out;
  std::vector<TokenId> prefix;
  auto walk = [&](auto&& self, NodeIndex node) -> void {
    if (is_terminal(node)) out.push_back(prefix);
    for (const auto& c : nodes_[node].children) {
      prefix.push_back(c.token);
      self(self, c.node);
      prefix.pop_back();
    }
  };
  walk(walk, root());
  return out;
}

}  // namespace kgsynth
