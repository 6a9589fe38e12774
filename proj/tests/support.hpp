#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "kgsynth/kgstore.hpp"

namespace kgsynth::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("kgsynth-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, std::string_view body) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << body;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Graph over entities "E0".."E{n-1}" and relations "R0".."R{m-1}" from
// (subject, relation, object) index triples.
inline KnowledgeGraph make_graph(
    std::size_t n_entities, std::size_t n_relations,
    const std::vector<std::array<std::uint32_t, 3>>& edges) {
  EntityCatalog entities;
  for (std::size_t i = 0; i < n_entities; ++i) {
    entities.add("Q" + std::to_string(i), "E" + std::to_string(i));
  }
  RelationCatalog relations;
  for (std::size_t i = 0; i < n_relations; ++i) {
    relations.add("P" + std::to_string(i), "R" + std::to_string(i));
  }
  std::vector<Triplet> ts;
  for (const auto& [s, r, o] : edges) {
    ts.push_back({EntityId{s}, RelationId{r}, EntityId{o}});
  }
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(ts));
}

}  // namespace kgsynth::testing
