#include "kgsynth/constraint.hpp"

#include <algorithm>

#include "kgsynth/error.hpp"

namespace kgsynth {

DecodingCatalog DecodingCatalog::build(
    std::span<const std::string> entity_labels,
    std::span<const std::string> relation_labels, const Tokenizer& tokenizer) {
  std::vector<std::string> surfaces;
  std::vector<DroppedEntry> dropped;
  for (const auto& label : entity_labels) {
    std::string surface = entity_surface(label);
    if (!label.empty() && tokenizer.encode(surface)) {
      surfaces.push_back(std::move(surface));
    } else {
      dropped.push_back({label, "entity surface form not encodable"});
    }
  }
  auto rel = filter_tokenizable(relation_labels, tokenizer);
  dropped.insert(dropped.end(), rel.dropped.begin(), rel.dropped.end());
  return DecodingCatalog{CatalogTrie::build(surfaces, tokenizer),
                         CatalogTrie::build(rel.kept, tokenizer),
                         std::move(dropped)};
}

bool ConstraintState::done() const {
  return !hypotheses.empty() && hypotheses.front().phase == Phase::kDone;
}

bool AllowedTokens::allows(TokenId t) const {
  return std::binary_search(tokens.begin(), tokens.end(), t);
}

ConstraintAutomaton::ConstraintAutomaton(const DecodingCatalog& catalog,
                                         const LinearizationSchema& schema,
                                         const Tokenizer& tokenizer)
    : catalog_(catalog), schema_(schema), tokenizer_(tokenizer) {
  schema_.validate();
  const auto& d = schema_.delimiters;
  const std::array<std::string, 5> texts = {
      d.subject + " ", " " + d.subject + " ", " " + d.relation + " ",
      " " + d.object + " ", " " + d.end};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto tokens = tokenizer_.encode(texts[i]);
    if (!tokens || tokens->empty()) {
      throw ValidationError("delimiter piece '" + texts[i] +
                            "' cannot be tokenized");
    }
    pieces_[i] = std::move(*tokens);
  }
}

namespace {

Phase expect_phase(Piece p) {
  switch (p) {
    case Piece::kFirstSubject:
    case Piece::kNextSubject:
      return Phase::kExpectSubject;
    case Piece::kRelation:
      return Phase::kExpectRelation;
    case Piece::kObject:
      return Phase::kExpectObject;
    case Piece::kEnd:
      return Phase::kExpectEnd;
  }
  return Phase::kExpectEnd;
}

Phase content_phase(Piece p) {
  switch (p) {
    case Piece::kFirstSubject:
    case Piece::kNextSubject:
      return Phase::kInSubject;
    case Piece::kRelation:
      return Phase::kInRelation;
    case Piece::kObject:
      return Phase::kInObject;
    case Piece::kEnd:
      return Phase::kAfterEnd;
  }
  return Phase::kAfterEnd;
}

}  // namespace

Hypothesis ConstraintAutomaton::enter(Piece piece, std::uint32_t position,
                                      std::int32_t last_subject) const {
  if (position < piece_tokens(piece).size()) {
    return Hypothesis{expect_phase(piece), piece, position, last_subject};
  }
  // Trie roots are node 0 for both catalogs.
  return Hypothesis{content_phase(piece), piece, 0, last_subject};
}

ConstraintState ConstraintAutomaton::start() const {
  return ConstraintState{{enter(Piece::kFirstSubject, 0, -1)}};
}

void ConstraintAutomaton::step(const Hypothesis& h, TokenId token,
                               std::vector<Hypothesis>& out) const {
  auto in_label = [&](const CatalogTrie& trie, Piece next,
                      std::int32_t completed_subject) {
    if (auto child = trie.child(h.position, token)) {
      out.push_back(Hypothesis{h.phase, h.piece, *child, h.last_subject});
    }
    if (trie.is_terminal(h.position) && piece_tokens(next).front() == token) {
      out.push_back(enter(next, 1, completed_subject));
    }
  };
  switch (h.phase) {
    case Phase::kExpectSubject:
    case Phase::kExpectRelation:
    case Phase::kExpectObject:
    case Phase::kExpectEnd:
      if (piece_tokens(h.piece)[h.position] == token) {
        out.push_back(enter(h.piece, h.position + 1, h.last_subject));
      }
      break;
    case Phase::kInSubject: {
      auto entry = catalog_.entities.terminal(h.position);
      in_label(catalog_.entities, Piece::kRelation,
               entry ? static_cast<std::int32_t>(*entry) : h.last_subject);
      break;
    }
    case Phase::kInRelation:
      in_label(catalog_.relations, Piece::kObject, h.last_subject);
      break;
    case Phase::kInObject:
      in_label(catalog_.entities, Piece::kEnd, h.last_subject);
      break;
    case Phase::kAfterEnd:
      if (piece_tokens(Piece::kNextSubject).front() == token) {
        out.push_back(enter(Piece::kNextSubject, 1, h.last_subject));
      }
      if (schema_.variant == Linearization::kSubjectCollapsed &&
          piece_tokens(Piece::kRelation).front() == token) {
        out.push_back(enter(Piece::kRelation, 1, h.last_subject));
      }
      if (token == tokenizer_.eos()) {
        out.push_back(Hypothesis{Phase::kDone, h.piece, 0, h.last_subject});
      }
      break;
    case Phase::kDone:
      break;
  }
}

void ConstraintAutomaton::collect(const Hypothesis& h,
                                  AllowedTokens& out) const {
  auto in_label = [&](const CatalogTrie& trie, Piece next) {
    for (const auto& c : trie.children(h.position)) out.tokens.push_back(c.token);
    if (trie.is_terminal(h.position)) {
      out.tokens.push_back(piece_tokens(next).front());
    }
  };
  switch (h.phase) {
    case Phase::kExpectSubject:
    case Phase::kExpectRelation:
    case Phase::kExpectObject:
    case Phase::kExpectEnd:
      out.tokens.push_back(piece_tokens(h.piece)[h.position]);
      break;
    case Phase::kInSubject:
      in_label(catalog_.entities, Piece::kRelation);
      break;
    case Phase::kInRelation:
      in_label(catalog_.relations, Piece::kObject);
      break;
    case Phase::kInObject:
      in_label(catalog_.entities, Piece::kEnd);
      break;
    case Phase::kAfterEnd:
      out.tokens.push_back(piece_tokens(Piece::kNextSubject).front());
      if (schema_.variant == Linearization::kSubjectCollapsed) {
        out.tokens.push_back(piece_tokens(Piece::kRelation).front());
      }
      out.end_of_sequence = true;
      break;
    case Phase::kDone:
      break;
  }
}

AllowedTokens ConstraintAutomaton::allowed_next(
    const ConstraintState& state) const {
  AllowedTokens out;
  for (const auto& h : state.hypotheses) collect(h, out);
  std::sort(out.tokens.begin(), out.tokens.end());
  out.tokens.erase(std::unique(out.tokens.begin(), out.tokens.end()),
                   out.tokens.end());
  return out;
}

ConstraintState ConstraintAutomaton::advance(const ConstraintState& state,
                                             TokenId token) const {
  ConstraintState next;
  for (const auto& h : state.hypotheses) step(h, token, next.hypotheses);
  if (next.hypotheses.empty()) {
    throw Error("token " + std::to_string(token) +
                " is not allowed by the decoding constraints");
  }
  std::sort(next.hypotheses.begin(), next.hypotheses.end());
  next.hypotheses.erase(
      std::unique(next.hypotheses.begin(), next.hypotheses.end()),
      next.hypotheses.end());
  return next;
}

bool ConstraintAutomaton::accepts_end(const ConstraintState& state) const {
  return std::any_of(state.hypotheses.begin(), state.hypotheses.end(),
                     [](const Hypothesis& h) {
                       return h.phase == Phase::kAfterEnd;
                     });
}

std::optional<std::vector<TokenId>> ConstraintAutomaton::encode(
    std::span<const LabeledTriplet> ordered) const {
  std::vector<TokenId> out;
  auto append_piece = [&](Piece p) {
    auto toks = piece_tokens(p);
    out.insert(out.end(), toks.begin(), toks.end());
  };
  auto append_text = [&](const std::string& text) {
    auto toks = tokenizer_.encode(text);
    if (!toks) return false;
    out.insert(out.end(), toks->begin(), toks->end());
    return true;
  };
  auto append_pair = [&](const LabeledTriplet& t) {
    append_piece(Piece::kRelation);
    if (!append_text(t.relation)) return false;
    append_piece(Piece::kObject);
    if (!append_text(entity_surface(t.object))) return false;
    append_piece(Piece::kEnd);
    return true;
  };

  bool first = true;
  if (schema_.variant == Linearization::kFullyExpanded) {
    for (const auto& t : ordered) {
      append_piece(first ? Piece::kFirstSubject : Piece::kNextSubject);
      first = false;
      if (!append_text(entity_surface(t.subject)) || !append_pair(t)) {
        return std::nullopt;
      }
    }
    return out;
  }
  std::vector<const std::string*> subjects;
  for (const auto& t : ordered) {
    if (std::none_of(subjects.begin(), subjects.end(),
                     [&](const std::string* s) { return *s == t.subject; })) {
      subjects.push_back(&t.subject);
    }
  }
  for (const std::string* s : subjects) {
    append_piece(first ? Piece::kFirstSubject : Piece::kNextSubject);
    first = false;
    if (!append_text(entity_surface(*s))) return std::nullopt;
    for (const auto& t : ordered) {
      if (t.subject == *s && !append_pair(t)) return std::nullopt;
    }
  }
  return out;
}

}  // namespace kgsynth
