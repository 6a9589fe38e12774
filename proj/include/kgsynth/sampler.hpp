#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "kgsynth/ids.hpp"
#include "kgsynth/kgstore.hpp"

namespace kgsynth {

enum class StartStrategy { kEntityCentric, kRelationCentric, kMixed };

// How an entity's rank inside the current set is determined for the
// coherence bias.
enum class CoherenceRank {
  kFirstAppearance,  // 1 = entity that entered the set first
  kRecency,          // 1 = entity seen most recently
};

struct SamplerConfig {
  double poisson_mean = 3.0;
  double bias_factor = 7.0;
  double dampening = 0.01;
  std::uint64_t reweight_interval = 20000;
  StartStrategy strategy = StartStrategy::kMixed;
  CoherenceRank rank_mode = CoherenceRank::kFirstAppearance;
  std::uint64_t seed = 0;
  // Walk steps allowed per requested triplet before a partial set is
  // accepted.
  std::size_t attempts_per_triplet = 10;

  // Throws ValidationError when a field is out of range.
  void validate() const;
};

struct TripletSet {
  std::vector<Triplet> triplets;
  std::vector<EntityId> distinct_entities;  // by first appearance
  bool partial = false;

  bool contains(const Triplet& t) const;
  // Position (0-based) of `e` in distinct_entities, or -1.
  std::ptrdiff_t rank_of(EntityId e) const;
  void add(const Triplet& t);
};

using WalkStart = std::variant<EntityId, Triplet>;

// (N + 1 - r)^bf for an entity with 1-based rank r among the N distinct
// entities of the set, 1 for entities outside the set.
double coherence_weight(EntityId entity, const TripletSet& set,
                        double bias_factor);
// Natural log of coherence_weight; finite even when the weight overflows.
double log_coherence_weight(EntityId entity, const TripletSet& set,
                            double bias_factor,
                            CoherenceRank mode = CoherenceRank::kFirstAppearance);

// Normalized weights (f_i + epsilon)^(-dampening) where f_i are empirical
// frequencies of `counts`. All-zero counts give the uniform distribution.
std::vector<double> inverse_frequency_distribution(
    std::span<const std::uint64_t> counts, double dampening, double epsilon);

struct SamplerState {
  std::vector<std::uint64_t> entity_counts;
  std::vector<std::uint64_t> relation_counts;
  std::uint64_t sets_sampled = 0;
  std::uint64_t reweights = 0;
  std::vector<double> entity_distribution;
  std::vector<double> relation_distribution;
  StartStrategy active_strategy = StartStrategy::kEntityCentric;
};

// Biased random walk sampler with periodic coverage reweighting. Sequential:
// every emitted set updates the counts that drive the next reweighting.
class Sampler {
 public:
  Sampler(const KnowledgeGraph& graph, SamplerConfig config);

  const SamplerState& state() const { return state_; }
  const SamplerConfig& config() const { return config_; }

  // Zero-truncated Poisson draw.
  std::size_t sample_set_size();
  WalkStart sample_start();
  // Runs one walk and records its triplets in the occurrence counts.
  TripletSet sample_triplet_set(const WalkStart& start, std::size_t target);
  // Recomputes both distributions from the current counts.
  void reweight();
  // Installs explicit distributions (e.g. restored from a checkpoint). Each
  // must match its catalog size, be non-negative and sum to 1.
  void set_distributions(std::vector<double> entity,
                         std::vector<double> relation);
  // Strategy, start, size, walk, then the reweighting schedule.
  TripletSet next();

  // Strategy in effect for the set with 0-based index `set_index`.
  StartStrategy strategy_for(std::uint64_t set_index) const;

 private:
  EntityId draw_entity();
  RelationId draw_relation();
  // `dead` holds subjects already found to have no unused incident edge.
  std::optional<EntityId> draw_subject(const TripletSet& set,
                                       const std::vector<EntityId>& dead);
  std::optional<Triplet> draw_incident(EntityId subject, const TripletSet& set);
  double log_bias(EntityId e, const TripletSet& set) const;
  void rebuild_tables();

  const KnowledgeGraph& graph_;
  SamplerConfig config_;
  SamplerState state_;
  std::mt19937_64 rng_;
  std::vector<double> entity_cdf_;
  std::vector<double> relation_cdf_;
};

// Emits `n_sets` sets through `sink`; returns the final state.
SamplerState sample_dataset(const KnowledgeGraph& graph,
                            const SamplerConfig& config, std::size_t n_sets,
                            const std::function<void(std::size_t,
                                                     const TripletSet&)>& sink);

}  // namespace kgsynth
