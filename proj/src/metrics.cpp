#include "kgsynth/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <random>
#include <thread>

#include "kgsynth/error.hpp"

namespace kgsynth {

EvalPair EvalPair::make(std::string id, std::vector<Triplet> predicted,
                        std::vector<Triplet> gold) {
  auto norm = [](std::vector<Triplet>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  norm(predicted);
  norm(gold);
  return EvalPair{std::move(id), std::move(predicted), std::move(gold)};
}

double f1_score(double precision, double recall) {
  return precision + recall == 0 ? 0.0
                                 : 2 * precision * recall / (precision + recall);
}

Scores scores_from_counts(std::uint64_t tp, std::uint64_t predicted,
                          std::uint64_t gold) {
  Scores s;
  if (predicted == 0 && gold == 0) {
    s.precision = s.recall = 1.0;
  } else {
    s.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / predicted;
    s.recall = gold == 0 ? 0.0 : static_cast<double>(tp) / gold;
  }
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

namespace {

std::uint64_t intersection_size(const std::vector<Triplet>& a,
                                const std::vector<Triplet>& b) {
  std::uint64_t n = 0;
  auto i = a.begin(), j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

}  // namespace

Scores micro_scores(std::span<const EvalPair> pairs) {
  std::uint64_t tp = 0, np = 0, ng = 0;
  for (const auto& p : pairs) {
    tp += intersection_size(p.predicted, p.gold);
    np += p.predicted.size();
    ng += p.gold.size();
  }
  return scores_from_counts(tp, np, ng);
}

std::vector<RelationScore> per_relation_scores(
    std::span<const EvalPair> pairs) {
  std::map<RelationId, RelationScore> rows;
  auto row = [&](RelationId r) -> RelationScore& {
    auto [it, inserted] = rows.try_emplace(r);
    if (inserted) it->second.relation = r;
    return it->second;
  };
  for (const auto& p : pairs) {
    for (const auto& t : p.predicted) ++row(t.relation).predicted;
    for (const auto& t : p.gold) ++row(t.relation).gold;
    auto i = p.predicted.begin(), j = p.gold.begin();
    while (i != p.predicted.end() && j != p.gold.end()) {
      if (*i < *j) {
        ++i;
      } else if (*j < *i) {
        ++j;
      } else {
        ++row(i->relation).true_positives;
        ++i;
        ++j;
      }
    }
  }
  std::vector<RelationScore> out;
  out.reserve(rows.size());
  for (auto& [r, s] : rows) {
    s.scores = scores_from_counts(s.true_positives, s.predicted, s.gold);
    out.push_back(s);
  }
  return out;
}

Scores macro_scores(std::span<const EvalPair> pairs, MacroF1 mode) {
  const auto rows = per_relation_scores(pairs);
  if (rows.empty()) return scores_from_counts(0, 0, 0);
  Scores s;
  for (const auto& r : rows) {
    s.precision += r.scores.precision;
    s.recall += r.scores.recall;
    s.f1 += r.scores.f1;
  }
  const double n = static_cast<double>(rows.size());
  s.precision /= n;
  s.recall /= n;
  s.f1 = mode == MacroF1::kMeanOfF1 ? s.f1 / n : f1_score(s.precision, s.recall);
  return s;
}

Interval bootstrap_ci(std::span<const EvalPair> pairs, const MetricFn& metric,
                      std::size_t n_samples, double level, std::uint64_t seed,
                      unsigned threads) {
  if (pairs.empty()) throw Error("bootstrap needs at least one document");
  if (n_samples == 0) throw ValidationError("bootstrap needs n_samples >= 1");
  if (!(level > 0 && level < 1)) {
    throw ValidationError("confidence level must lie in (0, 1)");
  }
  Interval out;
  out.point = metric(pairs);

  std::vector<double> values(n_samples);
  auto replicate = [&](std::size_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(b >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
    std::vector<EvalPair> sample;
    sample.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      sample.push_back(pairs[pick(rng)]);
    }
    values[b] = metric(sample);
  };
  threads = std::max(1u, std::min<unsigned>(threads, n_samples));
  if (threads == 1) {
    for (std::size_t b = 0; b < n_samples; ++b) replicate(b);
  } else {
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < threads; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t b = w; b < n_samples; b += threads) replicate(b);
      });
    }
  }

  std::sort(values.begin(), values.end());
  const double alpha = (1.0 - level) / 2.0;
  auto nearest_rank = [&](double q) {
    const double rank = std::ceil(q * static_cast<double>(n_samples));
    const auto idx = static_cast<std::size_t>(std::max(rank, 1.0)) - 1;
    return values[std::min(idx, n_samples - 1)];
  };
  out.lower = nearest_rank(alpha);
  out.upper = nearest_rank(1.0 - alpha);
  return out;
}

int bucketize(std::uint64_t count) {
  if (count == 0) return kUnseenBucket;
  return static_cast<int>(std::bit_width(count)) - 1;
}

std::vector<BucketRow> per_bucket_f1(
    std::span<const EvalPair> pairs,
    const std::unordered_map<RelationId, std::uint64_t>& train_counts,
    std::size_t n_samples, double level, std::uint64_t seed) {
  auto bucket_of = [&](RelationId r) {
    auto it = train_counts.find(r);
    return bucketize(it == train_counts.end() ? 0 : it->second);
  };
  std::map<int, std::vector<RelationId>> members;
  for (const auto& row : per_relation_scores(pairs)) {
    members[bucket_of(row.relation)].push_back(row.relation);
  }

  std::vector<BucketRow> out;
  for (const auto& [bucket, relations] : members) {
    std::vector<EvalPair> restricted;
    restricted.reserve(pairs.size());
    auto keep = [&, b = bucket](const std::vector<Triplet>& v) {
      std::vector<Triplet> kept;
      for (const auto& t : v) {
        if (bucket_of(t.relation) == b) kept.push_back(t);
      }
      return kept;
    };
    for (const auto& p : pairs) {
      restricted.push_back(EvalPair{p.id, keep(p.predicted), keep(p.gold)});
    }
    BucketRow row;
    row.bucket = bucket;
    row.relations = relations.size();
    row.micro = micro_scores(restricted);
    row.f1 = bootstrap_ci(
        restricted,
        [](std::span<const EvalPair> s) { return micro_scores(s).f1; },
        n_samples, level, seed);
    out.push_back(row);
  }
  return out;
}

double quantile(std::span<const std::uint64_t> sorted, double q) {
  if (sorted.empty()) throw Error("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) +
         frac * (static_cast<double>(sorted[hi]) -
                 static_cast<double>(sorted[lo]));
}

RelationStats relation_stats_from_counts(std::vector<std::uint64_t> counts) {
  if (counts.empty()) throw Error("relation statistics of an empty dataset");
  RelationStats stats;
  for (std::size_t r = 0; r < counts.size(); ++r) {
    stats.counts.emplace_back(RelationId{r}, counts[r]);
  }
  std::sort(counts.begin(), counts.end());
  stats.summary = FiveNumberSummary{
      static_cast<double>(counts.front()), quantile(counts, 0.25),
      quantile(counts, 0.5), quantile(counts, 0.75),
      static_cast<double>(counts.back())};
  const double n = static_cast<double>(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i + 1 == counts.size() || counts[i + 1] != counts[i]) {
      stats.cdf.emplace_back(counts[i], static_cast<double>(i + 1) / n);
    }
  }
  return stats;
}

RelationStats relation_stats(std::span<const std::vector<Triplet>> dataset,
                             std::optional<std::size_t> catalog_size) {
  std::map<RelationId, std::uint64_t> counts;
  if (catalog_size) {
    for (std::size_t r = 0; r < *catalog_size; ++r) counts[RelationId{r}] = 0;
  }
  for (const auto& point : dataset) {
    for (const auto& t : point) ++counts[t.relation];
  }
  if (counts.empty()) throw Error("relation statistics of an empty dataset");
  std::vector<std::uint64_t> values;
  values.reserve(counts.size());
  for (const auto& [r, c] : counts) values.push_back(c);
  RelationStats stats = relation_stats_from_counts(values);
  std::size_t i = 0;
  for (const auto& [r, c] : counts) stats.counts[i++] = {r, c};
  return stats;
}

MetricsReport evaluate(
    std::span<const EvalPair> pairs, const MetricsOptions& options,
    const std::unordered_map<RelationId, std::uint64_t>* train_counts) {
  MetricsReport report;
  report.options = options;
  report.documents = pairs.size();
  report.micro = micro_scores(pairs);
  report.macro = macro_scores(pairs, options.macro_f1);
  report.per_relation = per_relation_scores(pairs);
  if (pairs.empty()) return report;

  auto ci = [&](MetricFn fn) {
    return bootstrap_ci(pairs, fn, options.n_bootstrap, options.level,
                        options.seed, options.threads);
  };
  const MacroF1 mode = options.macro_f1;
  report.micro_precision =
      ci([](std::span<const EvalPair> s) { return micro_scores(s).precision; });
  report.micro_recall =
      ci([](std::span<const EvalPair> s) { return micro_scores(s).recall; });
  report.micro_f1 =
      ci([](std::span<const EvalPair> s) { return micro_scores(s).f1; });
  report.macro_precision = ci([mode](std::span<const EvalPair> s) {
    return macro_scores(s, mode).precision;
  });
  report.macro_recall = ci([mode](std::span<const EvalPair> s) {
    return macro_scores(s, mode).recall;
  });
  report.macro_f1 = ci(
      [mode](std::span<const EvalPair> s) { return macro_scores(s, mode).f1; });
  if (train_counts) {
    report.per_bucket = per_bucket_f1(pairs, *train_counts, options.n_bootstrap,
                                      options.level, options.seed);
  }
  return report;
}

}  // namespace kgsynth
