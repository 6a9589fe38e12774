#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgsynth/tokenizer.hpp"

namespace kgsynth {

// Prefix tree over tokenized catalog entries.
class CatalogTrie {
 public:
  using NodeIndex = std::uint32_t;
  struct Child {
    TokenId token;
    NodeIndex node;
  };
  struct Collision {
    std::string kept;
    std::string dropped;
  };

  // Throws ValidationError for an empty catalog or an entry the tokenizer
  // cannot encode. Entries with identical token sequences keep the first one.
  static CatalogTrie build(std::span<const std::string> entries,
                           const Tokenizer& tokenizer);

  NodeIndex root() const { return 0; }
  std::size_t node_count() const { return nodes_.size(); }
  // Sorted by token id.
  std::span<const Child> children(NodeIndex node) const;
  std::optional<NodeIndex> child(NodeIndex node, TokenId token) const;
  // Index into entries() when a catalog entry ends at `node`.
  std::optional<std::size_t> terminal(NodeIndex node) const;
  bool is_terminal(NodeIndex node) const { return nodes_[node].terminal >= 0; }

  const std::vector<std::string>& entries() const { return entries_; }
  const std::vector<Collision>& collisions() const { return collisions_; }

  // Every root-to-terminal token path, in depth-first token order.
  std::vector<std::vector<TokenId>> paths() const;

 private:
  struct Node {
    std::vector<Child> children;
    std::int64_t terminal = -1;
  };
  std::vector<Node> nodes_;
  std::vector<std::string> entries_;
  std::vector<Collision> collisions_;
};

}  // namespace kgsynth
