#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kgsynth/ids.hpp"

namespace kgsynth {

struct EntityRef {
  EntityId index;
  std::string external_id;
  std::string label;
};

struct RelationRef {
  RelationId index;
  std::string external_id;
  std::string label;
};

// Label-unique catalog with lookups by external id and by label.
template <typename Ref, typename Id>
class Catalog {
 public:
  Catalog() = default;

  // Throws ValidationError on an empty label, a duplicate label or a
  // duplicate external id.
  Id add(std::string external_id, std::string label);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  bool contains(Id id) const { return id.index() < items_.size(); }
  const Ref& at(Id id) const;
  const Ref& operator[](Id id) const { return items_[id.index()]; }
  std::optional<Id> find_external(std::string_view external_id) const;
  std::optional<Id> find_label(std::string_view label) const;

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  friend bool operator==(const Catalog& a, const Catalog& b) {
    if (a.items_.size() != b.items_.size()) return false;
    for (std::size_t i = 0; i < a.items_.size(); ++i) {
      if (a.items_[i].external_id != b.items_[i].external_id ||
          a.items_[i].label != b.items_[i].label)
        return false;
    }
    return true;
  }

 private:
  std::vector<Ref> items_;
  std::unordered_map<std::string, Id> by_external_;
  std::unordered_map<std::string, Id> by_label_;
};

using EntityCatalog = Catalog<EntityRef, EntityId>;
using RelationCatalog = Catalog<RelationRef, RelationId>;

// Index of an edge in KnowledgeGraph::edges().
using EdgeIndex = std::uint32_t;

// Immutable knowledge graph. Edges are unique; adjacency lists hold edge
// indices sorted by (relation, other endpoint).
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  // Deduplicates `edges`, keeping first appearance. Throws ValidationError if
  // an edge references an index outside the catalogs.
  KnowledgeGraph(EntityCatalog entities, RelationCatalog relations,
                 std::vector<Triplet> edges);

  const EntityCatalog& entities() const { return entities_; }
  const RelationCatalog& relations() const { return relations_; }
  std::span<const Triplet> edges() const { return edges_; }
  const Triplet& edge(EdgeIndex i) const { return edges_[i]; }
  std::size_t duplicates_removed() const { return duplicates_removed_; }

  std::span<const EdgeIndex> out_edges(EntityId e) const;
  std::span<const EdgeIndex> in_edges(EntityId e) const;
  std::span<const EdgeIndex> relation_edges(RelationId r) const;

  // Outgoing (relation, object) pairs sorted by relation then object.
  std::vector<std::pair<RelationId, EntityId>> neighbors(EntityId e) const;
  std::vector<Triplet> triples_of_relation(RelationId r) const;
  // In + out degree.
  std::size_t degree(EntityId e) const;
  bool has_edge(const Triplet& t) const;

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.entities_ == b.entities_ && a.relations_ == b.relations_ &&
           a.edges_ == b.edges_;
  }

 private:
  void check_entity(EntityId e) const;

  EntityCatalog entities_;
  RelationCatalog relations_;
  std::vector<Triplet> edges_;
  std::size_t duplicates_removed_ = 0;

  // CSR layouts: offsets_[e]..offsets_[e+1] into the adjacency arrays.
  std::vector<std::uint32_t> out_offsets_, in_offsets_, rel_offsets_;
  std::vector<EdgeIndex> out_adj_, in_adj_, rel_adj_;
};

struct IngestReport {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t edges = 0;
  std::size_t duplicate_edges = 0;
  std::size_t literal_relations = 0;
  std::size_t literal_edges = 0;
};

// Reads the TSV exports described in the README. Dense indices follow the
// first-appearance order of the label files.
KnowledgeGraph ingest(const std::filesystem::path& edges_file,
                      const std::filesystem::path& entity_labels_file,
                      const std::filesystem::path& relation_labels_file,
                      IngestReport* report = nullptr);

// Removes entities with in+out degree 0 and re-densifies entity indices. The
// edge set is unchanged in label space.
KnowledgeGraph filter_zero_degree(const KnowledgeGraph& graph);

// Normalized index directory: entities.tsv, relations.tsv, edges.tsv.
void write_index(const KnowledgeGraph& graph,
                 const std::filesystem::path& dir);
KnowledgeGraph load_index(const std::filesystem::path& dir);

}  // namespace kgsynth
