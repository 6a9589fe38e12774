#include "kgsynth/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kgsynth/error.hpp"

namespace kgsynth {

void SamplerConfig::validate() const {
  if (!(poisson_mean > 0)) {
    throw ValidationError("sampler.poisson_mean must be positive");
  }
  if (!(bias_factor >= 0) || !std::isfinite(bias_factor)) {
    throw ValidationError("sampler.bias_factor must be a finite value >= 0");
  }
  if (!(dampening > 0 && dampening <= 1)) {
    throw ValidationError("sampler.dampening must lie in (0, 1]");
  }
  if (reweight_interval == 0) {
    throw ValidationError("sampler.reweight_interval must be positive");
  }
  if (attempts_per_triplet == 0) {
    throw ValidationError("sampler.attempts_per_triplet must be positive");
  }
}

bool TripletSet::contains(const Triplet& t) const {
  return std::find(triplets.begin(), triplets.end(), t) != triplets.end();
}

std::ptrdiff_t TripletSet::rank_of(EntityId e) const {
  auto it = std::find(distinct_entities.begin(), distinct_entities.end(), e);
  return it == distinct_entities.end() ? -1 : it - distinct_entities.begin();
}

void TripletSet::add(const Triplet& t) {
  triplets.push_back(t);
  for (EntityId e : {t.subject, t.object}) {
    if (rank_of(e) < 0) distinct_entities.push_back(e);
  }
}

namespace {

// 0-based rank under the requested mode, -1 if absent.
std::ptrdiff_t rank_in(EntityId e, const TripletSet& set, CoherenceRank mode) {
  if (mode == CoherenceRank::kFirstAppearance) return set.rank_of(e);
  std::vector<EntityId> order;
  for (auto it = set.triplets.rbegin(); it != set.triplets.rend(); ++it) {
    for (EntityId x : {it->object, it->subject}) {
      if (std::find(order.begin(), order.end(), x) == order.end()) {
        order.push_back(x);
      }
    }
  }
  auto it = std::find(order.begin(), order.end(), e);
  return it == order.end() ? -1 : it - order.begin();
}

double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Draws an index with probability proportional to exp(log_weights[i]).
std::size_t draw_log_weighted(std::span<const double> log_weights,
                              std::mt19937_64& rng) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : log_weights) m = std::max(m, x);
  std::vector<double> w(log_weights.size());
  double total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(log_weights[i] - m);
    total += w[i];
  }
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

std::size_t draw_cdf(const std::vector<double>& cdf, std::mt19937_64& rng) {
  double u = std::uniform_real_distribution<double>(0.0, cdf.back())(rng);
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
}

std::vector<double> cumulative(const std::vector<double>& p) {
  std::vector<double> cdf(p.size());
  std::partial_sum(p.begin(), p.end(), cdf.begin());
  return cdf;
}

}  // namespace

double log_coherence_weight(EntityId entity, const TripletSet& set,
                            double bias_factor, CoherenceRank mode) {
  auto r0 = rank_in(entity, set, mode);
  if (r0 < 0 || bias_factor == 0) return 0.0;
  const auto n = static_cast<double>(set.distinct_entities.size());
  const double r = static_cast<double>(r0) + 1.0;
  return bias_factor * std::log(n + 1.0 - r);
}

double coherence_weight(EntityId entity, const TripletSet& set,
                        double bias_factor) {
  return std::exp(log_coherence_weight(entity, set, bias_factor));
}

std::vector<double> inverse_frequency_distribution(
    std::span<const std::uint64_t> counts, double dampening, double epsilon) {
  std::vector<double> out(counts.size());
  if (counts.empty()) return out;
  const double total =
      static_cast<double>(std::accumulate(counts.begin(), counts.end(),
                                          std::uint64_t{0}));
  if (total == 0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  double norm = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double f = static_cast<double>(counts[i]) / total;
    out[i] = std::pow(f + epsilon, -dampening);
    norm += out[i];
  }
  for (double& w : out) w /= norm;
  return out;
}

Sampler::Sampler(const KnowledgeGraph& graph, SamplerConfig config)
    : graph_(graph), config_(config), rng_(config.seed) {
  config_.validate();
  if (graph_.entities().empty() || graph_.edges().empty()) {
    throw ValidationError("sampler needs a graph with at least one edge");
  }
  state_.entity_counts.assign(graph_.entities().size(), 0);
  state_.relation_counts.assign(graph_.relations().size(), 0);
  state_.active_strategy = strategy_for(0);
  reweight();
  state_.reweights = 0;
}

void Sampler::reweight() {
  state_.entity_distribution = inverse_frequency_distribution(
      state_.entity_counts, config_.dampening,
      1.0 / static_cast<double>(state_.entity_counts.size()));
  state_.relation_distribution = inverse_frequency_distribution(
      state_.relation_counts, config_.dampening,
      1.0 / static_cast<double>(std::max<std::size_t>(
                state_.relation_counts.size(), 1)));
  ++state_.reweights;
  rebuild_tables();
}

void Sampler::set_distributions(std::vector<double> entity,
                                std::vector<double> relation) {
  auto check = [](const std::vector<double>& d, std::size_t n,
                  const char* what) {
    if (d.size() != n) {
      throw ValidationError(std::string(what) + " distribution has " +
                            std::to_string(d.size()) + " entries, expected " +
                            std::to_string(n));
    }
    double sum = 0;
    for (double x : d) {
      if (!(x >= 0)) {
        throw ValidationError(std::string(what) + " weights must be >= 0");
      }
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ValidationError(std::string(what) + " distribution must sum to 1");
    }
  };
  check(entity, state_.entity_counts.size(), "entity");
  check(relation, state_.relation_counts.size(), "relation");
  state_.entity_distribution = std::move(entity);
  state_.relation_distribution = std::move(relation);
  rebuild_tables();
}

void Sampler::rebuild_tables() {
  entity_cdf_ = cumulative(state_.entity_distribution);
  // Relations without edges can never start a walk.
  std::vector<double> rel = state_.relation_distribution;
  for (std::size_t r = 0; r < rel.size(); ++r) {
    if (graph_.relation_edges(RelationId{r}).empty()) rel[r] = 0;
  }
  relation_cdf_ = cumulative(rel);
}

StartStrategy Sampler::strategy_for(std::uint64_t set_index) const {
  if (config_.strategy != StartStrategy::kMixed) return config_.strategy;
  return (set_index / config_.reweight_interval) % 2 == 0
             ? StartStrategy::kEntityCentric
             : StartStrategy::kRelationCentric;
}

std::size_t Sampler::sample_set_size() {
  std::poisson_distribution<std::size_t> poisson(config_.poisson_mean);
  std::size_t n = 0;
  while (n == 0) n = poisson(rng_);
  return n;
}

EntityId Sampler::draw_entity() { return EntityId{draw_cdf(entity_cdf_, rng_)}; }

RelationId Sampler::draw_relation() {
  if (relation_cdf_.empty() || relation_cdf_.back() <= 0) {
    throw Error("no relation has edges to start a walk from");
  }
  return RelationId{draw_cdf(relation_cdf_, rng_)};
}

WalkStart Sampler::sample_start() {
  if (state_.active_strategy == StartStrategy::kEntityCentric) {
    return draw_entity();
  }
  const RelationId r = draw_relation();
  auto edges = graph_.relation_edges(r);
  std::vector<double> w(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    w[i] = state_.entity_distribution[graph_.edge(edges[i]).subject.index()];
  }
  std::vector<double> cdf = cumulative(w);
  return graph_.edge(edges[draw_cdf(cdf, rng_)]);
}

double Sampler::log_bias(EntityId e, const TripletSet& set) const {
  return log_coherence_weight(e, set, config_.bias_factor, config_.rank_mode) +
         std::log(state_.entity_distribution[e.index()]);
}

std::optional<EntityId> Sampler::draw_subject(const TripletSet& set,
                                              const std::vector<EntityId>& dead) {
  auto is_dead = [&](EntityId e) {
    return std::find(dead.begin(), dead.end(), e) != dead.end();
  };
  // Mass splits into the live set members (explicitly weighted) and everyone
  // else (weight 1 each, drawn from the reweighted distribution by rejection).
  std::vector<EntityId> members;
  std::vector<double> member_logw;
  double excluded_mass = 0;
  for (EntityId m : set.distinct_entities) {
    excluded_mass += state_.entity_distribution[m.index()];
    if (is_dead(m)) continue;
    members.push_back(m);
    member_logw.push_back(log_bias(m, set));
  }
  for (EntityId d : dead) {
    if (set.rank_of(d) < 0) excluded_mass += state_.entity_distribution[d.index()];
  }
  const double rest = std::max(0.0, 1.0 - excluded_mass);
  double p_member = 1.0;
  if (members.empty()) {
    p_member = 0.0;
  } else if (rest > 0) {
    const double log_members = log_sum_exp(member_logw);
    p_member = 1.0 / (1.0 + std::exp(std::log(rest) - log_members));
  }
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  if (u < p_member) return members[draw_log_weighted(member_logw, rng_)];

  for (int tries = 0; tries < 256; ++tries) {
    EntityId e = draw_entity();
    if (set.rank_of(e) < 0 && !is_dead(e)) return e;
  }
  std::vector<double> w(state_.entity_distribution);
  for (EntityId m : set.distinct_entities) w[m.index()] = 0;
  for (EntityId d : dead) w[d.index()] = 0;
  std::vector<double> cdf = cumulative(w);
  if (cdf.back() > 0) return EntityId{draw_cdf(cdf, rng_)};
  if (!members.empty()) return members[draw_log_weighted(member_logw, rng_)];
  return std::nullopt;
}

std::optional<Triplet> Sampler::draw_incident(EntityId subject,
                                              const TripletSet& set) {
  std::vector<Triplet> candidates;
  std::vector<double> logw;
  auto consider = [&](EdgeIndex i) {
    const Triplet& t = graph_.edge(i);
    if (set.contains(t)) return;
    const EntityId other = t.subject == subject ? t.object : t.subject;
    candidates.push_back(t);
    logw.push_back(log_bias(other, set));
  };
  for (EdgeIndex i : graph_.out_edges(subject)) consider(i);
  for (EdgeIndex i : graph_.in_edges(subject)) {
    // Self-loops were already seen through the outgoing list.
    if (graph_.edge(i).subject != subject) consider(i);
  }
  if (candidates.empty()) return std::nullopt;
  return candidates[draw_log_weighted(logw, rng_)];
}

TripletSet Sampler::sample_triplet_set(const WalkStart& start,
                                       std::size_t target) {
  if (target == 0) throw Error("target set size must be positive");
  TripletSet set;
  std::optional<EntityId> forced_subject;
  if (const auto* t = std::get_if<Triplet>(&start)) {
    if (!graph_.has_edge(*t)) throw Error("walk start is not an edge");
    set.add(*t);
  } else {
    forced_subject = std::get<EntityId>(start);
    if (!graph_.entities().contains(*forced_subject)) {
      throw Error("walk start entity out of range");
    }
  }

  const std::size_t max_attempts = config_.attempts_per_triplet * target;
  std::size_t attempts = 0;
  std::vector<EntityId> dead;
  while (set.triplets.size() < target && attempts < max_attempts) {
    ++attempts;
    std::optional<EntityId> subject = forced_subject;
    if (!subject) subject = draw_subject(set, dead);
    forced_subject.reset();
    if (!subject) break;
    // A subject without unused incident edges is a dead end; it stays one as
    // the set grows, so the walk backtracks and never draws it again.
    if (auto t = draw_incident(*subject, set)) {
      set.add(*t);
    } else {
      dead.push_back(*subject);
    }
  }
  if (set.triplets.empty()) {
    throw Error("random walk produced no triplet within " +
                std::to_string(max_attempts) + " attempts");
  }
  set.partial = set.triplets.size() < target;

  for (const auto& t : set.triplets) {
    ++state_.entity_counts[t.subject.index()];
    ++state_.entity_counts[t.object.index()];
    ++state_.relation_counts[t.relation.index()];
  }
  return set;
}

TripletSet Sampler::next() {
  state_.active_strategy = strategy_for(state_.sets_sampled);
  WalkStart start = sample_start();
  std::size_t target = sample_set_size();
  TripletSet set = sample_triplet_set(start, target);
  ++state_.sets_sampled;
  if (state_.sets_sampled % config_.reweight_interval == 0) reweight();
  return set;
}

SamplerState sample_dataset(
    const KnowledgeGraph& graph, const SamplerConfig& config,
    std::size_t n_sets,
    const std::function<void(std::size_t, const TripletSet&)>& sink) {
  if (n_sets == 0) throw ValidationError("n_sets must be at least 1");
  Sampler sampler(graph, config);
  for (std::size_t i = 0; i < n_sets; ++i) sink(i, sampler.next());
  return sampler.state();
}

}  // namespace kgsynth
