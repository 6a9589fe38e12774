#include "kgsynth/kgstore.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "kgsynth/error.hpp"
#include "text_util.hpp"

namespace kgsynth {

template <typename Ref, typename Id>
Id Catalog<Ref, Id>::add(std::string external_id, std::string label) {
  if (label.empty()) {
    throw ValidationError("empty label for id '" + external_id + "'");
  }
  if (by_label_.contains(label)) {
    throw ValidationError("duplicate label '" + label + "'");
  }
  if (by_external_.contains(external_id)) {
    throw ValidationError("duplicate external id '" + external_id + "'");
  }
  Id id{items_.size()};
  by_external_.emplace(external_id, id);
  by_label_.emplace(label, id);
  items_.push_back(Ref{id, std::move(external_id), std::move(label)});
  return id;
}

template <typename Ref, typename Id>
const Ref& Catalog<Ref, Id>::at(Id id) const {
  if (!contains(id)) {
    throw Error("catalog index " + std::to_string(id.value) +
                " out of range (size " + std::to_string(items_.size()) + ")");
  }
  return items_[id.index()];
}

template <typename Ref, typename Id>
std::optional<Id> Catalog<Ref, Id>::find_external(
    std::string_view external_id) const {
  auto it = by_external_.find(std::string(external_id));
  if (it == by_external_.end()) return std::nullopt;
  return it->second;
}

template <typename Ref, typename Id>
std::optional<Id> Catalog<Ref, Id>::find_label(std::string_view label) const {
  auto it = by_label_.find(std::string(label));
  if (it == by_label_.end()) return std::nullopt;
  return it->second;
}

template class Catalog<EntityRef, EntityId>;
template class Catalog<RelationRef, RelationId>;

namespace {

// Builds a CSR index: bucket(edge) selects the list, the comparator orders
// edges inside a list.
template <typename Bucket, typename Less>
void build_csr(std::span<const Triplet> edges, std::size_t buckets,
               Bucket bucket, Less less, std::vector<std::uint32_t>& offsets,
               std::vector<EdgeIndex>& adj) {
  offsets.assign(buckets + 1, 0);
  for (const auto& t : edges) ++offsets[bucket(t) + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  adj.assign(edges.size(), 0);
  std::vector<std::uint32_t> fill(offsets.begin(), offsets.end() - 1);
  for (EdgeIndex i = 0; i < edges.size(); ++i) {
    adj[fill[bucket(edges[i])]++] = i;
  }
  for (std::size_t b = 0; b < buckets; ++b) {
    std::sort(adj.begin() + offsets[b], adj.begin() + offsets[b + 1],
              [&](EdgeIndex x, EdgeIndex y) {
                return less(edges[x], edges[y]) ||
                       (!less(edges[y], edges[x]) && x < y);
              });
  }
}

}  // namespace

KnowledgeGraph::KnowledgeGraph(EntityCatalog entities,
                               RelationCatalog relations,
                               std::vector<Triplet> edges)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
  std::unordered_set<Triplet, TripletHash> seen;
  seen.reserve(edges.size());
  edges_.reserve(edges.size());
  for (const auto& t : edges) {
    if (!entities_.contains(t.subject) || !entities_.contains(t.object) ||
        !relations_.contains(t.relation)) {
      throw ValidationError("edge references an index outside the catalogs");
    }
    if (seen.insert(t).second) {
      edges_.push_back(t);
    } else {
      ++duplicates_removed_;
    }
  }

  build_csr(
      edges_, entities_.size(), [](const Triplet& t) { return t.subject.index(); },
      [](const Triplet& a, const Triplet& b) {
        return std::tie(a.relation, a.object) < std::tie(b.relation, b.object);
      },
      out_offsets_, out_adj_);
  build_csr(
      edges_, entities_.size(), [](const Triplet& t) { return t.object.index(); },
      [](const Triplet& a, const Triplet& b) {
        return std::tie(a.relation, a.subject) <
               std::tie(b.relation, b.subject);
      },
      in_offsets_, in_adj_);
  build_csr(
      edges_, relations_.size(),
      [](const Triplet& t) { return t.relation.index(); },
      [](const Triplet&, const Triplet&) { return false; }, rel_offsets_,
      rel_adj_);
}

void KnowledgeGraph::check_entity(EntityId e) const {
  if (!entities_.contains(e)) {
    throw Error("entity index " + std::to_string(e.value) + " out of range");
  }
}

std::span<const EdgeIndex> KnowledgeGraph::out_edges(EntityId e) const {
  check_entity(e);
  return std::span(out_adj_).subspan(
      out_offsets_[e.index()], out_offsets_[e.index() + 1] - out_offsets_[e.index()]);
}

std::span<const EdgeIndex> KnowledgeGraph::in_edges(EntityId e) const {
  check_entity(e);
  return std::span(in_adj_).subspan(
      in_offsets_[e.index()], in_offsets_[e.index() + 1] - in_offsets_[e.index()]);
}

std::span<const EdgeIndex> KnowledgeGraph::relation_edges(RelationId r) const {
  if (!relations_.contains(r)) {
    throw Error("relation index " + std::to_string(r.value) + " out of range");
  }
  return std::span(rel_adj_).subspan(
      rel_offsets_[r.index()], rel_offsets_[r.index() + 1] - rel_offsets_[r.index()]);
}

std::vector<std::pair<RelationId, EntityId>> KnowledgeGraph::neighbors(
    EntityId e) const {
  std::vector<std::pair<RelationId, EntityId>> out;
  for (EdgeIndex i : out_edges(e)) {
    out.emplace_back(edges_[i].relation, edges_[i].object);
  }
  return out;
}

std::vector<Triplet> KnowledgeGraph::triples_of_relation(RelationId r) const {
  std::vector<Triplet> out;
  for (EdgeIndex i : relation_edges(r)) out.push_back(edges_[i]);
  return out;
}

std::size_t KnowledgeGraph::degree(EntityId e) const {
  return out_edges(e).size() + in_edges(e).size();
}

bool KnowledgeGraph::has_edge(const Triplet& t) const {
  if (!entities_.contains(t.subject) || !entities_.contains(t.object) ||
      !relations_.contains(t.relation))
    return false;
  auto out = out_edges(t.subject);
  auto key = std::pair(t.relation, t.object);
  auto it = std::lower_bound(out.begin(), out.end(), key,
                             [this](EdgeIndex i, const auto& k) {
                               return std::pair(edges_[i].relation,
                                                edges_[i].object) < k;
                             });
  return it != out.end() && edges_[*it] == t;
}

namespace {

struct LabelRow {
  std::string external_id;
  std::string label;
  bool literal = false;
};

std::vector<LabelRow> read_label_file(const std::filesystem::path& path) {
  auto in = detail::open_input(path.string());
  std::vector<LabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = detail::strip_cr(line);
    if (detail::trim(view).empty()) continue;
    auto cols = detail::split(view, '\t');
    if (cols.size() < 2) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": expected external_id<TAB>label");
    }
    LabelRow row{std::string(cols[0]), std::string(cols[1]), false};
    for (std::size_t c = 2; c < cols.size(); ++c) {
      for (auto flag : detail::split(cols[c], ',')) {
        if (detail::trim(flag) == "literal") row.literal = true;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

KnowledgeGraph ingest(const std::filesystem::path& edges_file,
                      const std::filesystem::path& entity_labels_file,
                      const std::filesystem::path& relation_labels_file,
                      IngestReport* report) {
  IngestReport rep;
  EntityCatalog entities;
  for (auto& row : read_label_file(entity_labels_file)) {
    try {
      entities.add(std::move(row.external_id), std::move(row.label));
    } catch (const ValidationError& e) {
      throw ValidationError(entity_labels_file.string() + ": " + e.what());
    }
  }

  RelationCatalog relations;
  std::unordered_set<std::string> literal_ids;
  std::unordered_set<std::string> seen_relation_labels;
  for (auto& row : read_label_file(relation_labels_file)) {
    if (!seen_relation_labels.insert(row.label).second) {
      throw ValidationError(relation_labels_file.string() +
                            ": duplicate label '" + row.label + "'");
    }
    if (row.literal) {
      spdlog::warn("dropping literal-valued relation {} ({})", row.external_id,
                   row.label);
      literal_ids.insert(row.external_id);
      ++rep.literal_relations;
      continue;
    }
    try {
      relations.add(std::move(row.external_id), std::move(row.label));
    } catch (const ValidationError& e) {
      throw ValidationError(relation_labels_file.string() + ": " + e.what());
    }
  }

  auto in = detail::open_input(edges_file.string());
  std::vector<Triplet> edges;
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] {
    return edges_file.string() + ":" + std::to_string(line_no) + ": ";
  };
  while (std::getline(in, line)) {
    ++line_no;
    auto view = detail::strip_cr(line);
    if (detail::trim(view).empty()) continue;
    auto cols = detail::split(view, '\t');
    if (cols.size() != 3) {
      throw ValidationError(where() + "expected 3 tab-separated columns");
    }
    auto s = entities.find_external(cols[0]);
    if (!s) {
      throw ValidationError(where() + "unknown entity '" +
                            std::string(cols[0]) + "'");
    }
    auto o = entities.find_external(cols[2]);
    if (!o) {
      throw ValidationError(where() + "unknown entity '" +
                            std::string(cols[2]) + "'");
    }
    auto r = relations.find_external(cols[1]);
    if (!r) {
      if (literal_ids.contains(std::string(cols[1]))) {
        ++rep.literal_edges;
        continue;
      }
      throw ValidationError(where() + "unknown relation '" +
                            std::string(cols[1]) + "'");
    }
    edges.push_back(Triplet{*s, *r, *o});
  }

  KnowledgeGraph graph(std::move(entities), std::move(relations),
                       std::move(edges));
  rep.entities = graph.entities().size();
  rep.relations = graph.relations().size();
  rep.edges = graph.edges().size();
  rep.duplicate_edges = graph.duplicates_removed();
  spdlog::debug("ingested {} entities, {} relations, {} edges ({} duplicates)",
               rep.entities, rep.relations, rep.edges, rep.duplicate_edges);
  if (report) *report = rep;
  return graph;
}

KnowledgeGraph filter_zero_degree(const KnowledgeGraph& graph) {
  const auto& old_entities = graph.entities();
  std::vector<std::uint32_t> remap(old_entities.size(), UINT32_MAX);
  EntityCatalog entities;
  for (const auto& ref : old_entities) {
    if (graph.degree(ref.index) == 0) continue;
    remap[ref.index.index()] = entities.add(ref.external_id, ref.label).value;
  }
  if (entities.size() == old_entities.size()) return graph;

  std::vector<Triplet> edges;
  edges.reserve(graph.edges().size());
  for (const auto& t : graph.edges()) {
    edges.push_back(Triplet{EntityId{remap[t.subject.index()]}, t.relation,
                            EntityId{remap[t.object.index()]}});
  }
  return KnowledgeGraph(std::move(entities), graph.relations(),
                        std::move(edges));
}

void write_index(const KnowledgeGraph& graph,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw Error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("entities.tsv");
    for (const auto& e : graph.entities()) {
      out << e.external_id << '\t' << e.label << '\n';
    }
  }
  {
    auto out = open("relations.tsv");
    for (const auto& r : graph.relations()) {
      out << r.external_id << '\t' << r.label << '\n';
    }
  }
  {
    auto out = open("edges.tsv");
    for (const auto& t : graph.edges()) {
      out << t.subject.value << '\t' << t.relation.value << '\t'
          << t.object.value << '\n';
    }
  }
}

KnowledgeGraph load_index(const std::filesystem::path& dir) {
  EntityCatalog entities;
  for (auto& row : read_label_file(dir / "entities.tsv")) {
    entities.add(std::move(row.external_id), std::move(row.label));
  }
  RelationCatalog relations;
  for (auto& row : read_label_file(dir / "relations.tsv")) {
    relations.add(std::move(row.external_id), std::move(row.label));
  }
  auto in = detail::open_input((dir / "edges.tsv").string());
  std::vector<Triplet> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto cols = detail::split(detail::strip_cr(line), '\t');
    if (cols.size() != 3) {
      throw ValidationError((dir / "edges.tsv").string() + ":" +
                            std::to_string(line_no) + ": malformed index row");
    }
    auto num = [](std::string_view v) {
      return static_cast<std::uint32_t>(std::stoul(std::string(v)));
    };
    edges.push_back(Triplet{EntityId{num(cols[0])}, RelationId{num(cols[1])},
                            EntityId{num(cols[2])}});
  }
  return KnowledgeGraph(std::move(entities), std::move(relations),
                        std::move(edges));
}

}  // namespace kgsynth
