#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kgsynth/ids.hpp"

namespace kgsynth {

// Predicted and gold facts of one document. Use make() so both sides are
// sorted and deduplicated; the metric functions rely on it.
struct EvalPair {
  std::string id;
  std::vector<Triplet> predicted;
  std::vector<Triplet> gold;

  static EvalPair make(std::string id, std::vector<Triplet> predicted,
                       std::vector<Triplet> gold);
};

struct Scores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// Precision/recall from raw counts. A zero denominator gives 0 while the
// other side is non-empty; with nothing predicted and nothing expected both
// are 1.
Scores scores_from_counts(std::uint64_t true_positives, std::uint64_t predicted,
                          std::uint64_t gold);
double f1_score(double precision, double recall);

Scores micro_scores(std::span<const EvalPair> pairs);

enum class MacroF1 {
  kMeanOfF1,         // average of per-relation F1
  kHarmonicOfMeans,  // F1 of macro precision and macro recall
};

struct RelationScore {
  RelationId relation;
  std::uint64_t true_positives = 0;
  std::uint64_t predicted = 0;
  std::uint64_t gold = 0;
  Scores scores;
};

// One row per relation occurring in any gold or predicted set, by relation id.
std::vector<RelationScore> per_relation_scores(std::span<const EvalPair> pairs);

// Averages over relations occurring in gold or predictions; relations absent
// from both are not part of the average.
Scores macro_scores(std::span<const EvalPair> pairs,
                    MacroF1 mode = MacroF1::kMeanOfF1);

struct Interval {
  double point = 0;
  double lower = 0;
  double upper = 0;
};

using MetricFn = std::function<double(std::span<const EvalPair>)>;

// Percentile bootstrap over documents. Bounds are nearest-rank percentiles of
// the replicate values. Replicate b draws from its own generator seeded with
// (seed, b), so the result does not depend on `threads`.
Interval bootstrap_ci(std::span<const EvalPair> pairs, const MetricFn& metric,
                      std::size_t n_samples = 50, double level = 0.95,
                      std::uint64_t seed = 0, unsigned threads = 1);

inline constexpr int kUnseenBucket = -1;

// floor(log2(count)) for count >= 1, kUnseenBucket for 0.
int bucketize(std::uint64_t count);

struct BucketRow {
  int bucket = kUnseenBucket;
  std::size_t relations = 0;
  Scores micro;
  Interval f1;
};

// Micro scores restricted to the relations of each training-frequency
// bucket. Relations missing from `train_counts` fall in the unseen bucket.
std::vector<BucketRow> per_bucket_f1(
    std::span<const EvalPair> pairs,
    const std::unordered_map<RelationId, std::uint64_t>& train_counts,
    std::size_t n_samples = 50, double level = 0.95, std::uint64_t seed = 0);

struct FiveNumberSummary {
  double min = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
  double max = 0;
};

// Linear interpolation between order statistics; `sorted` must be ascending
// and non-empty.
double quantile(std::span<const std::uint64_t> sorted, double q);

struct RelationStats {
  std::vector<std::pair<RelationId, std::uint64_t>> counts;
  FiveNumberSummary summary;
  // (count x, fraction of relations with count <= x) for every distinct x.
  std::vector<std::pair<std::uint64_t, double>> cdf;
};

// Occurrence counts over every triplet of every datapoint. With
// `catalog_size`, relations that never occur enter the statistics with count
// 0; otherwise only occurring relations are counted.
RelationStats relation_stats(std::span<const std::vector<Triplet>> dataset,
                             std::optional<std::size_t> catalog_size = {});
RelationStats relation_stats_from_counts(std::vector<std::uint64_t> counts);

struct MetricsOptions {
  std::size_t n_bootstrap = 50;
  double level = 0.95;
  std::uint64_t seed = 0;
  MacroF1 macro_f1 = MacroF1::kMeanOfF1;
  unsigned threads = 1;
};

struct MetricsReport {
  Scores micro;
  Scores macro;
  Interval micro_precision, micro_recall, micro_f1;
  Interval macro_precision, macro_recall, macro_f1;
  std::vector<RelationScore> per_relation;
  std::vector<BucketRow> per_bucket;
  std::size_t documents = 0;
  MetricsOptions options;
};

MetricsReport evaluate(
    std::span<const EvalPair> pairs, const MetricsOptions& options,
    const std::unordered_map<RelationId, std::uint64_t>* train_counts = nullptr);

}  // namespace kgsynth
