#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kgsynth/ids.hpp"
#include "kgsynth/kgstore.hpp"

namespace kgsynth {

enum class Linearization {
  kFullyExpanded,     // "fe": one [s] [r] [o] [e] block per triplet
  kSubjectCollapsed,  // "sc": subject written once per group
};

std::string_view to_string(Linearization v);
// Accepts "fe" and "sc"; throws ValidationError otherwise.
Linearization parse_linearization(std::string_view name);

struct Delimiters {
  std::string subject = "[s]";
  std::string relation = "[r]";
  std::string object = "[o]";
  std::string end = "[e]";
};

struct LinearizationSchema {
  Linearization variant = Linearization::kFullyExpanded;
  Delimiters delimiters;

  // Delimiters must be non-empty and none may contain another.
  void validate() const;
};

struct LinearizedTarget {
  std::string text;
  LinearizationSchema schema;
};

// Entity labels are written with spaces replaced by underscores.
std::string entity_surface(std::string_view label);
std::string entity_label_from_surface(std::string_view surface);

// Orders triplets by where their subject, then object, is mentioned in
// `source_text`; remaining ties fall back to lexicographic label order.
std::vector<LabeledTriplet> order_triplets(
    std::span<const LabeledTriplet> triplets, std::string_view source_text);

// Character offset linked to an entity label: exact mention, else the longest
// run of text words found in the label, else 0.
std::size_t mention_position(std::string_view label,
                             std::string_view source_text);

// Orders with order_triplets, then writes the target string. Throws
// ValidationError if a label is empty or contains a delimiter.
LinearizedTarget linearize(std::span<const LabeledTriplet> triplets,
                           const LinearizationSchema& schema,
                           std::string_view source_text = {});
// Writes triplets in the given order.
std::string linearize_ordered(std::span<const LabeledTriplet> triplets,
                              const LinearizationSchema& schema);

// Maps surface forms found in model output back to catalog labels.
class LabelResolver {
 public:
  LabelResolver(const EntityCatalog& entities,
                const RelationCatalog& relations);
  LabelResolver(std::span<const std::string> entity_labels,
                std::span<const std::string> relation_labels);

  const std::string* entity(std::string_view surface) const;
  const std::string* relation(std::string_view surface) const;

 private:
  void add_entity(const std::string& label);
  std::unordered_map<std::string, std::string> entities_;
  std::unordered_set<std::string> relations_;
};

struct ParseDiagnostics {
  std::size_t dropped_fragments = 0;
  std::size_t unresolved = 0;
  std::size_t duplicates = 0;
  std::vector<std::string> notes;

  bool clean() const { return dropped_fragments == 0 && unresolved == 0; }
};

struct ParseResult {
  std::vector<LabeledTriplet> triplets;  // deduplicated, in reading order
  ParseDiagnostics diagnostics;
};

// Lenient left-to-right parse. Never throws on malformed text; problems are
// tallied in the diagnostics.
ParseResult parse(std::string_view text, const LinearizationSchema& schema,
                  const LabelResolver* resolver = nullptr);

}  // namespace kgsynth
