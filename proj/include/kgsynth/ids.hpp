#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

namespace kgsynth {

// Dense catalog index tagged with the catalog it belongs to.
template <typename Tag>
struct DenseId {
  std::uint32_t value = 0;

  constexpr DenseId() = default;
  constexpr explicit DenseId(std::uint32_t v) : value(v) {}
  constexpr explicit DenseId(std::size_t v)
      : value(static_cast<std::uint32_t>(v)) {}

  constexpr std::size_t index() const { return value; }
  friend constexpr auto operator<=>(DenseId, DenseId) = default;
};

struct EntityTag {};
struct RelationTag {};
using EntityId = DenseId<EntityTag>;
using RelationId = DenseId<RelationTag>;

struct Triplet {
  EntityId subject;
  RelationId relation;
  EntityId object;

  friend constexpr auto operator<=>(const Triplet&, const Triplet&) = default;
};

// A triplet expressed with surface labels; the currency of file formats and
// of the linearization codec.
struct LabeledTriplet {
  std::string subject;
  std::string relation;
  std::string object;

  friend auto operator<=>(const LabeledTriplet&,
                          const LabeledTriplet&) = default;
};

struct TripletHash {
  std::size_t operator()(const Triplet& t) const noexcept {
    std::uint64_t h = t.subject.value;
    h = h * 0x9E3779B97F4A7C15ULL ^ t.relation.value;
    h = h * 0x9E3779B97F4A7C15ULL ^ t.object.value;
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

struct LabeledTripletHash {
  std::size_t operator()(const LabeledTriplet& t) const noexcept {
    std::hash<std::string> hs;
    std::size_t h = hs(t.subject);
    h = h * 31 + hs(t.relation);
    h = h * 31 + hs(t.object);
    return h;
  }
};

}  // namespace kgsynth

template <typename Tag>
struct std::hash<kgsynth::DenseId<Tag>> {
  std::size_t operator()(kgsynth::DenseId<Tag> id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
