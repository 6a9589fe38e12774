#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgsynth/codec.hpp"
#include "kgsynth/tokenizer.hpp"
#include "kgsynth/trie.hpp"

namespace kgsynth {

// Entity and relation tries for one decoding catalog. Entity entries are
// surface forms (underscored), relation entries are labels.
struct DecodingCatalog {
  CatalogTrie entities;
  CatalogTrie relations;
  std::vector<DroppedEntry> dropped;

  // Drops labels the tokenizer cannot encode, then builds both tries.
  static DecodingCatalog build(std::span<const std::string> entity_labels,
                               std::span<const std::string> relation_labels,
                               const Tokenizer& tokenizer);
};

enum class Phase : std::uint8_t {
  kExpectSubject,
  kInSubject,
  kExpectRelation,
  kInRelation,
  kExpectObject,
  kInObject,
  kExpectEnd,
  kAfterEnd,
  kDone,
};

// Delimiters carry their separating spaces so that the concatenated pieces
// reproduce the codec output byte for byte.
enum class Piece : std::uint8_t {
  kFirstSubject,  // "[s] "
  kNextSubject,   // " [s] "
  kRelation,      // " [r] "
  kObject,        // " [o] "
  kEnd,           // " [e]"
};

// One live reading of the prefix. The tokenizer may make the prefix
// ambiguous (a space can continue a label or open a delimiter), so a state
// tracks every consistent reading.
struct Hypothesis {
  Phase phase = Phase::kExpectSubject;
  Piece piece = Piece::kFirstSubject;
  // Token offset inside the delimiter piece, or the trie node while inside a
  // label.
  std::uint32_t position = 0;
  // Entity trie entry of the group subject (collapsed schema), -1 if none.
  std::int32_t last_subject = -1;

  friend auto operator<=>(const Hypothesis&, const Hypothesis&) = default;
};

struct ConstraintState {
  std::vector<Hypothesis> hypotheses;  // sorted, unique, never empty

  bool done() const;
  friend bool operator==(const ConstraintState&,
                         const ConstraintState&) = default;
};

struct AllowedTokens {
  std::vector<TokenId> tokens;  // sorted, excludes end-of-sequence
  bool end_of_sequence = false;

  bool allows(TokenId t) const;
};

// Structural schema crossed with catalog tries.
class ConstraintAutomaton {
 public:
  // Throws ValidationError if a delimiter piece cannot be tokenized. The
  // automaton keeps references to `catalog` and `tokenizer`.
  ConstraintAutomaton(const DecodingCatalog& catalog,
                      const LinearizationSchema& schema,
                      const Tokenizer& tokenizer);

  ConstraintState start() const;
  AllowedTokens allowed_next(const ConstraintState& state) const;
  // Throws Error when `token` is not allowed in `state`.
  ConstraintState advance(const ConstraintState& state, TokenId token) const;
  bool accepts_end(const ConstraintState& state) const;

  // Canonical token sequence for an ordered triplet list (the concatenated
  // pieces of linearize_ordered), or nullopt if a label is not encodable.
  std::optional<std::vector<TokenId>> encode(
      std::span<const LabeledTriplet> ordered) const;

  const LinearizationSchema& schema() const { return schema_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  std::span<const TokenId> piece_tokens(Piece p) const {
    return pieces_[static_cast<std::size_t>(p)];
  }

 private:
  void step(const Hypothesis& h, TokenId token,
            std::vector<Hypothesis>& out) const;
  void collect(const Hypothesis& h, AllowedTokens& out) const;
  Hypothesis enter(Piece piece, std::uint32_t position,
                   std::int32_t last_subject) const;

  const DecodingCatalog& catalog_;
  LinearizationSchema schema_;
  const Tokenizer& tokenizer_;
  std::array<std::vector<TokenId>, 5> pieces_;
};

}  // namespace kgsynth
