// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "kgsynth/beam_search.hpp"
#include "kgsynth/codec.hpp"
#include "kgsynth/constraint.hpp"
#include "kgsynth/kgstore.hpp"
#include "kgsynth/metrics.hpp"
#include "kgsynth/pipeline.hpp"
#include "kgsynth/rate_limiter.hpp"
#include "kgsynth/sampler.hpp"
#include "kgsynth/textgen.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace kgsynth;
using namespace kgsynth::testing;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

// Collects failed expectations for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ |= !ok;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool failed() const { return failed_; }
  std::string describe() const {
    std::string out;
    for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + ("failed: " + f);
    return out;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

const std::vector<LabeledTriplet> kLanning{
    {"Mount Lanning", "instance of", "Mountain"},
    {"Mount Lanning", "mountain range", "Sentinel Range"},
    {"Newcomer Glacier", "mountain range", "Sentinel Range"},
};

void golden_codec(Checks& c) {
  const std::string fe =
      "[s] Mount_Lanning [r] instance of [o] Mountain [e] "
      "[s] Mount_Lanning [r] mountain range [o] Sentinel_Range [e] "
      "[s] Newcomer_Glacier [r] mountain range [o] Sentinel_Range [e]";
  const std::string sc =
      "[s] Mount_Lanning [r] instance of [o] Mountain [e] "
      "[r] mountain range [o] Sentinel_Range [e] "
      "[s] Newcomer_Glacier [r] mountain range [o] Sentinel_Range [e]";
  const auto fe_schema = schema_of(Linearization::kFullyExpanded);
  const auto sc_schema = schema_of(Linearization::kSubjectCollapsed);
  c.expect(linearize(kLanning, fe_schema).text == fe, "FE golden string");
  c.expect(linearize(kLanning, sc_schema).text == sc, "SC golden string");
  auto pf = parse(fe, fe_schema);
  auto ps = parse(sc, sc_schema);
  c.expect(pf.triplets == kLanning && pf.diagnostics.clean(), "FE round trip");
  c.expect(ps.triplets == kLanning && ps.diagnostics.clean(), "SC round trip");
}

void codec_properties(Checks& c) {
  RandomSets gen(20240101);
  LabelResolver resolver(gen.entities(), gen.relations());
  const auto fe_schema = schema_of(Linearization::kFullyExpanded);
  const auto sc_schema = schema_of(Linearization::kSubjectCollapsed);
  std::size_t identity = 0, shorter_or_equal = 0;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    auto set = gen.next();
    const std::set<LabeledTriplet> expected(set.begin(), set.end());
    auto fe = linearize(set, fe_schema).text;
    auto sc = linearize(set, sc_schema).text;
    auto pf = parse(fe, fe_schema, &resolver);
    auto ps = parse(sc, sc_schema, &resolver);
    const bool ok = std::set<LabeledTriplet>(pf.triplets.begin(), pf.triplets.end()) == expected &&
                    std::set<LabeledTriplet>(ps.triplets.begin(), ps.triplets.end()) == expected &&
                    pf.diagnostics.clean() && ps.diagnostics.clean();
    identity += ok;
    shorter_or_equal += sc.size() <= fe.size();
  }
  c.note(std::to_string(n) + " sets");
  c.expect(identity == n, "parse(linearize(x)) == x in " + std::to_string(identity) + "/" + std::to_string(n));
  c.expect(shorter_or_equal == n, "|SC| <= |FE| in " + std::to_string(shorter_or_equal) + "/" + std::to_string(n));
}

void metrics_oracle(Checks& c) {
  std::mt19937_64 rng(777);
  std::size_t exact = 0;
  const std::size_t n = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    auto pairs = random_instance(rng);
    auto m = micro_scores(pairs);
    auto om = oracle::micro(pairs);
    bool ok = m.precision == om.precision && m.recall == om.recall && m.f1 == om.f1;
    for (auto mode : {MacroF1::kMeanOfF1, MacroF1::kHarmonicOfMeans}) {
      auto a = macro_scores(pairs, mode);
      auto o = oracle::macro(pairs, 5, mode);
      ok = ok && a.precision == o.precision && a.recall == o.recall && a.f1 == o.f1;
    }
    exact += ok;
  }
  c.expect(exact == n, "exact agreement in " + std::to_string(exact) + "/" + std::to_string(n));
}

void bootstrap(Checks& c) {
  const MetricsOptions defaults;
  c.expect(defaults.n_bootstrap == 50, "default sample count is 50");
  c.expect(defaults.level == 0.95, "default level is 0.95");

  std::mt19937_64 rng(5);
  std::vector<EvalPair> pairs;
  for (int i = 0; i < 40; ++i) {
    auto inst = random_instance(rng);
    for (auto& p : inst) {
      p.id = "doc" + std::to_string(pairs.size());
      pairs.push_back(std::move(p));
    }
  }
  auto micro_f1 = [](std::span<const EvalPair> p) { return micro_scores(p).f1; };
  auto a = bootstrap_ci(pairs, micro_f1, 50, 0.95, 42);
  auto b = bootstrap_ci(pairs, micro_f1, 50, 0.95, 42);
  auto threaded = bootstrap_ci(pairs, micro_f1, 50, 0.95, 42, 4);
  auto other = bootstrap_ci(pairs, micro_f1, 50, 0.95, 43);
  c.expect(a.lower == b.lower && a.upper == b.upper && a.point == b.point,
           "same seed gives identical interval");
  c.expect(a.lower == threaded.lower && a.upper == threaded.upper,
           "interval independent of thread count");
  c.expect(a.lower <= a.point && a.point <= a.upper, "point inside interval");
  c.expect(a.lower != other.lower || a.upper != other.upper, "seed changes the replicates");
  c.note("micro F1 " + fmt(a.point) + " [" + fmt(a.lower) + ", " + fmt(a.upper) + "]");

  std::vector<EvalPair> flat;
  for (int i = 0; i < 30; ++i) {
    flat.push_back(EvalPair::make("f" + std::to_string(i), {T(0, 0, 1), T(2, 1, 3)},
                                  {T(0, 0, 1), T(2, 2, 3)}));
  }
  auto z = bootstrap_ci(flat, micro_f1, 50, 0.95, 9);
  c.expect(z.lower == z.point && z.upper == z.point, "zero-variance fixture has zero width");
}

void bucketing(Checks& c) {
  c.expect(bucketize(34) == 5, "34 -> 5");
  c.expect(bucketize(32) == 5, "32 -> 5");
  c.expect(bucketize(1) == 0, "1 -> 0");
  c.expect(bucketize(0) == kUnseenBucket, "0 -> unseen");
  for (int i = 1; i < 20; ++i) {
    const std::uint64_t lo = std::uint64_t{1} << i;
    c.expect(bucketize(lo) == i && bucketize(lo - 1) == i - 1,
             "boundary 2^" + std::to_string(i));
  }
  int prev = bucketize(1);
  bool monotone = true;
  for (std::uint64_t x = 1; x <= 1'000'000; x = x < 100 ? x + 1 : x + x / 37) {
    const int b = bucketize(x);
    monotone = monotone && b >= prev;
    prev = b;
  }
  c.expect(monotone && bucketize(1'000'000) == 19, "monotone over the grid");

  // Sort-based linear-interpolation quantiles.
  auto oracle_summary = [](std::vector<std::uint64_t> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
      const double pos = p * static_cast<double>(v.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, v.size() - 1);
      return static_cast<double>(v[lo]) +
             (pos - static_cast<double>(lo)) *
                 (static_cast<double>(v[hi]) - static_cast<double>(v[lo]));
    };
    return FiveNumberSummary{static_cast<double>(v.front()), q(0.25), q(0.5), q(0.75),
                             static_cast<double>(v.back())};
  };
  auto same = [](const FiveNumberSummary& a, const FiveNumberSummary& b) {
    auto eq = [](double x, double y) { return std::abs(x - y) <= 1e-9 * std::max(1.0, std::abs(y)); };
    return eq(a.min, b.min) && eq(a.q1, b.q1) && eq(a.median, b.median) &&
           eq(a.q3, b.q3) && eq(a.max, b.max);
  };
  const std::vector<std::uint64_t> table{716679, 34, 1, 432, 4};
  const auto s = relation_stats_from_counts(table).summary;
  c.expect(s.min == 1 && s.q1 == 4 && s.median == 34 && s.q3 == 432 && s.max == 716679,
           "five-number summary 1/4/34/432/716679");
  c.expect(same(s, oracle_summary(table)), "table fixture matches sort oracle");
  std::mt19937_64 rng(11);
  std::size_t agree = 0;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::uint64_t> v(1 + rng() % 40);
    for (auto& x : v) x = 1 + rng() % (1 + (rng() % 2 ? 50 : 100000));
    agree += same(relation_stats_from_counts(v).summary, oracle_summary(v));
  }
  c.expect(agree == 200, "random summaries match oracle in " + std::to_string(agree) + "/200");
}

// 10k entities, 200 relations. Endpoints follow a Zipf law over a shuffled
// entity order, relation edge counts follow a Zipf law with a floor of 20,
// and every entity gets at least one edge.
KnowledgeGraph zipf_graph(std::uint64_t seed) {
  constexpr std::size_t kEntities = 10000, kRelations = 200;
  std::mt19937_64 rng(seed);
  std::vector<double> entity_weights(kEntities);
  for (std::size_t i = 0; i < kEntities; ++i) entity_weights[i] = 1.0 / static_cast<double>(i + 1);
  std::discrete_distribution<std::uint32_t> zipf_entity(entity_weights.begin(),
                                                        entity_weights.end());
  std::vector<std::uint32_t> perm(kEntities);
  for (std::uint32_t i = 0; i < kEntities; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);

  std::set<std::array<std::uint32_t, 3>> edges;
  auto add = [&](std::uint32_t s, std::uint32_t r, std::uint32_t o) {
    if (s != o) edges.insert({s, r, o});
  };
  for (std::uint32_t r = 0; r < kRelations; ++r) {
    const std::size_t target = 20 + static_cast<std::size_t>(4000.0 / (r + 1));
    std::size_t added = 0;
    while (added < target) {
      const auto before = edges.size();
      add(perm[zipf_entity(rng)], r, perm[zipf_entity(rng)]);
      added += edges.size() > before;
    }
  }
  std::discrete_distribution<std::uint32_t> zipf_relation(entity_weights.begin(),
                                                          entity_weights.begin() + kRelations);
  for (std::uint32_t e = 0; e < kEntities; ++e) {
    add(e, zipf_relation(rng), perm[zipf_entity(rng)]);
  }
  std::vector<std::array<std::uint32_t, 3>> list(edges.begin(), edges.end());
  return make_graph(kEntities, kRelations, list);
}

double coefficient_of_variation(const std::vector<std::uint64_t>& counts) {
  double mean = 0, var = 0;
  for (auto x : counts) mean += static_cast<double>(x);
  mean /= static_cast<double>(counts.size());
  for (auto x : counts) var += (static_cast<double>(x) - mean) * (static_cast<double>(x) - mean);
  var /= static_cast<double>(counts.size());
  return std::sqrt(var) / mean;
}

void sampler_statistics(Checks& c) {
  const auto graph = zipf_graph(1);
  std::vector<std::size_t> per_relation(graph.relations().size());
  for (const auto& t : graph.edges()) ++per_relation[t.relation.index()];
  c.expect(*std::min_element(per_relation.begin(), per_relation.end()) >= 20,
           "fixture has >= 20 edges per relation");

  constexpr std::size_t kSets = 20000;
  SamplerConfig tuned;  // shipped seed
  tuned.strategy = StartStrategy::kMixed;
  tuned.bias_factor = 7;
  tuned.dampening = 1;
  tuned.reweight_interval = 2000;

  SamplerConfig baseline = tuned;
  baseline.strategy = StartStrategy::kEntityCentric;
  baseline.bias_factor = 0;
  baseline.reweight_interval = kSets + 1;

  std::vector<double> sizes;
  std::size_t partial = 0;
  const auto state = sample_dataset(graph, tuned, kSets, [&](std::size_t, const TripletSet& s) {
    sizes.push_back(static_cast<double>(s.triplets.size()));
    partial += s.partial;
  });
  const auto base = sample_dataset(graph, baseline, kSets, [](std::size_t, const TripletSet&) {});

  const auto covered = std::count_if(state.relation_counts.begin(), state.relation_counts.end(),
                                     [](std::uint64_t x) { return x > 0; });
  c.expect(covered == static_cast<std::ptrdiff_t>(graph.relations().size()),
           "every relation sampled (" + std::to_string(covered) + "/200)");

  const double cv = coefficient_of_variation(state.relation_counts);
  const double cv_base = coefficient_of_variation(base.relation_counts);
  c.note("relation-count CV " + fmt(cv) + " vs baseline " + fmt(cv_base) + " (" +
         fmt(100 * (1 - cv / cv_base), 3) + "% lower)");
  c.expect(cv <= 0.7 * cv_base, "CV at least 30% below baseline");

  double mean = 0, var = 0;
  for (double s : sizes) mean += s;
  mean /= static_cast<double>(sizes.size());
  for (double s : sizes) var += (s - mean) * (s - mean);
  var /= static_cast<double>(sizes.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(sizes.size()));
  const double expected = 3.0 / (1.0 - std::exp(-3.0));
  c.note("mean set size " + fmt(mean) + " (expected " + fmt(expected) + ", se " + fmt(se, 2) +
         ", " + std::to_string(partial) + " partial)");
  c.expect(std::abs(mean - expected) <= 3 * se, "set-size mean within 3 standard errors");
}

void sampler_determinism(Checks& c) {
  TempDir dir;
  const auto graph = zipf_graph(2);
  write_index(graph, dir / "index");
  PipelineConfig config;
  config.paths.index_dir = dir / "index";
  config.set_seed(1234);
  cmd_sample(config, 3000, dir / "a");
  cmd_sample(config, 3000, dir / "b");
  const auto a = read_file(dir / "a/sets.jsonl");
  c.expect(!a.empty(), "output written");
  c.expect(a == read_file(dir / "b/sets.jsonl"), "byte-identical sets.jsonl");
  c.expect(read_file(dir / "a/manifest.json") == read_file(dir / "b/manifest.json"),
           "byte-identical manifest");
  c.note(std::to_string(std::count(a.begin(), a.end(), '\n')) + " sets, " +
         std::to_string(a.size()) + " bytes");
}

void decoder_soundness(Checks& c) {
  c.expect(DecodeParams{}.num_beams == 10, "10 beams by default");
  c.expect(DecodeParams::defaults_for(Linearization::kFullyExpanded).length_penalty == 0.8,
           "FE length penalty 0.8");
  c.expect(DecodeParams::defaults_for(Linearization::kSubjectCollapsed).length_penalty == 0.6,
           "SC length penalty 0.6");

  const auto w = five_by_three();
  const auto triplets = w.all_triplets();
  std::size_t reachable = 0, total = 0;
  for (auto v : {Linearization::kFullyExpanded, Linearization::kSubjectCollapsed}) {
    const auto schema = schema_of(v);
    ConstraintAutomaton a(w.catalog, schema, w.tokenizer);
    auto check = [&](const std::vector<LabeledTriplet>& set) {
      ++total;
      auto tokens = w.tokenizer.encode(linearize(set, schema).text);
      reachable += tokens && replays(a, *tokens);
    };
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      check({triplets[i]});
      for (std::size_t j = i + 1; j < triplets.size(); ++j) check({triplets[i], triplets[j]});
    }
  }
  c.expect(reachable == total, "reachable linearizations " + std::to_string(reachable) + "/" +
                                   std::to_string(total));

  const std::set<LabeledTriplet> catalog(triplets.begin(), triplets.end());
  const std::size_t vocab = w.tokenizer.vocab_size();
  const TokenId eos = w.tokenizer.eos();
  std::size_t runs = 0, sound = 0;
  for (auto v : {Linearization::kFullyExpanded, Linearization::kSubjectCollapsed}) {
    const auto schema = schema_of(v);
    ConstraintAutomaton a(w.catalog, schema, w.tokenizer);
    const auto params = DecodeParams::defaults_for(v);
    for (std::uint64_t salt = 0; salt < 5000; ++salt) {
      std::unique_ptr<Scorer> scorer;
      switch (salt % 4) {
        case 0:
          scorer = std::make_unique<UniformScorer>(vocab);
          break;
        case 1:
          scorer = std::make_unique<CallbackScorer>(
              [=](std::string_view, const std::vector<TokenId>& p) {
                return hashed_logprobs(p, vocab, salt);
              });
          break;
        case 2:
          // Mass on a byte the catalog never allows at this point.
          scorer = std::make_unique<CallbackScorer>(
              [=](std::string_view, const std::vector<TokenId>& p) {
                auto lp = hashed_logprobs(p, vocab, salt);
                for (TokenId t : {TokenId{'Z'}, TokenId{'x'}, TokenId{'['}, TokenId{'\n'}}) lp[t] = 0.0;
                return lp;
              });
          break;
        default:
          // Prefers ending immediately.
          scorer = std::make_unique<CallbackScorer>(
              [=](std::string_view, const std::vector<TokenId>& p) {
                auto lp = hashed_logprobs(p, vocab, salt);
                lp[eos] = 0.0;
                return lp;
              });
      }
      const auto best = constrained_beam_search(*scorer, "context", a, params);
      ++runs;
      if (best.empty() || best.front().truncated) continue;
      const auto text = w.tokenizer.decode(best.front().tokens);
      const auto parsed = parse(text, schema, &w.resolver);
      bool ok = parsed.diagnostics.clean() && !parsed.triplets.empty();
      for (const auto& t : parsed.triplets) ok = ok && catalog.count(t);
      sound += ok;
    }
  }
  c.expect(sound == runs, "catalog-valid parseable outputs " + std::to_string(sound) + "/" +
                              std::to_string(runs));
}

// Completions endpoint with scripted faults. Every prompt with hash % 7 == 0
// gets one 429, hash % 5 == 0 one 500 and hash % 50 == 1 is always rejected.
class MockEndpoint {
 public:
  explicit MockEndpoint(const Clock& clock) : clock_(clock) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/completions"; }

  // Number of 200 responses after which `stop` is raised.
  void stop_after(std::size_t n, std::atomic<bool>* stop) {
    std::lock_guard lock(mu_);
    stop_after_ = n;
    stop_ = stop;
  }
  std::map<std::string, int> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  void reset_counts() {
    std::lock_guard lock(mu_);
    requests_.clear();
  }
  std::string last_auth() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body);
    const std::string prompt = body["prompt"];
    const std::size_t h = std::hash<std::string>{}(prompt);
    int call;
    {
      std::lock_guard lock(mu_);
      call = attempts_[prompt]++;
      ++requests_[prompt];
      auth_ = req.get_header_value("Authorization");
    }
    if (h % 50 == 1) {
      res.status = 400;
      res.set_content(R"({"error": "rejected"})", "application/json");
      return;
    }
    if (h % 7 == 0 && call == 0) {
      res.status = 429;
      res.set_header("Retry-After", "3");
      return;
    }
    if (h % 5 == 0 && call <= 1) {
      res.status = 500;
      return;
    }
    const std::uint64_t prompt_tokens = (prompt.size() + 3) / 4;
    const std::uint64_t completion_tokens = 40;
    json out{{"choices", {{{"text", " Generated text for " + std::to_string(h % 1000) + ".\n"},
                           {"finish_reason", "stop"}}}},
             {"usage",
              {{"prompt_tokens", prompt_tokens},
               {"completion_tokens", completion_tokens},
               {"total_tokens", prompt_tokens + completion_tokens}}}};
    res.status = 200;
    res.set_content(out.dump(), "application/json");
    std::lock_guard lock(mu_);
    if (stop_ && ++served_ >= stop_after_) stop_->store(true);
  }

  const Clock& clock_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mu_;
  std::map<std::string, int> attempts_;
  std::map<std::string, int> requests_;
  std::string auth_;
  std::size_t served_ = 0;
  std::size_t stop_after_ = 0;
  std::atomic<bool>* stop_ = nullptr;
};

// Largest number of admissions and settled tokens in any window ending at an
// admission.
std::pair<std::size_t, std::uint64_t> peak_window(std::vector<RateLimiter::Admission> history,
                                                  Nanos window) {
  std::sort(history.begin(), history.end(),
            [](const auto& a, const auto& b) { return a.at < b.at; });
  std::size_t peak_requests = 0, lo = 0;
  std::uint64_t peak_tokens = 0, tokens = 0;
  for (std::size_t hi = 0; hi < history.size(); ++hi) {
    tokens += history[hi].tokens;
    while (history[lo].at + window <= history[hi].at) tokens -= history[lo++].tokens;
    peak_requests = std::max(peak_requests, hi - lo + 1);
    peak_tokens = std::max(peak_tokens, tokens);
  }
  return {peak_requests, peak_tokens};
}

void generation_client(Checks& c) {
  c.expect(std::abs(estimate_cost(11'177'500, 0.02) - 223.55) < 1e-9,
           "estimate_cost(11,177,500 tokens, $0.02/1K) == $223.55");

  ::setenv(kApiKeyEnv, "acceptance-key", 1);
  SimulatedClock clock;
  MockEndpoint endpoint(clock);
  HttpTransport transport(endpoint.url(), 10s);

  std::vector<PromptJob> jobs;
  for (int i = 0; i < 500; ++i) {
    jobs.push_back({"set-" + std::to_string(i),
                    "Write one sentence stating: item " + std::to_string(i) +
                        " | part of | collection " + std::to_string(i % 17) + "\nText:"});
  }
  GenerateOptions options;
  options.model = "mock";
  options.params = GenerationParams::preset("text");
  options.concurrency = 8;
  options.retry.max_attempts = 6;
  const RateLimits limits;  // 20 requests / 150k tokens per minute

  TempDir dir;
  const auto log_path = dir / "generations.jsonl";
  std::atomic<bool> stop{false};
  endpoint.stop_after(240, &stop);
  GenerateSummary first;
  std::vector<RateLimiter::Admission> history;
  {
    RecordLog log(log_path);
    RateLimiter limiter(limits, clock);
    first = generate(jobs, options, transport, limiter, clock, log, &stop);
    history = limiter.history();
  }
  c.expect(first.stopped, "first run interrupted");
  // The kill lands mid-write.
  {
    std::ofstream out(log_path, std::ios::app | std::ios::binary);
    out << R"({"set_id": "set-499", "status": "o)";
  }
  std::set<std::string> completed;
  for (const auto& r : RecordLog::read(log_path)) {
    if (r.status == RecordStatus::kOk) completed.insert(r.set_id);
  }
  std::map<std::string, std::string> prompt_of;
  for (const auto& j : jobs) prompt_of[j.set_id] = j.prompt;

  endpoint.reset_counts();
  endpoint.stop_after(0, nullptr);
  GenerateSummary second;
  std::vector<RateLimiter::Admission> resumed_history;
  {
    RecordLog log(log_path);
    RateLimiter limiter(limits, clock);
    second = generate(jobs, options, transport, limiter, clock, log);
    resumed_history = limiter.history();
  }
  const auto resent = endpoint.requests();
  std::size_t rebilled = 0;
  for (const auto& id : completed) rebilled += resent.count(prompt_of[id]);
  c.note("interrupted after " + std::to_string(completed.size()) + " completions");
  c.expect(rebilled == 0, std::to_string(rebilled) + " completed prompts re-sent");
  c.expect(second.skipped == completed.size(), "resume skips every completed prompt");

  std::size_t ok = 0, failed = 0;
  std::set<std::string> seen;
  for (const auto& r : RecordLog::read(log_path)) {
    seen.insert(r.set_id);
    ok += r.status == RecordStatus::kOk;
    failed += r.status == RecordStatus::kFailed;
  }
  c.note(std::to_string(ok) + " ok, " + std::to_string(failed) + " flagged");
  c.expect(seen.size() == jobs.size() && ok + failed == jobs.size(),
           "every prompt resolved or flagged");
  std::size_t expected_failures = 0;
  for (const auto& j : jobs) expected_failures += std::hash<std::string>{}(j.prompt) % 50 == 1;
  c.expect(failed == expected_failures, "only permanently rejected prompts are flagged");

  // Each run owns one limiter; the restart begins with an empty window.
  for (const auto* h : {&history, &resumed_history}) {
    const auto [peak_requests, peak_tokens] = peak_window(*h, limits.window);
    c.note("peak " + std::to_string(peak_requests) + " requests / " +
           std::to_string(peak_tokens) + " tokens per window");
    c.expect(peak_requests <= limits.requests_per_window, "request budget respected");
    c.expect(peak_tokens <= limits.tokens_per_window, "token budget respected");
  }
  c.note(fmt(std::chrono::duration<double>(clock.now()).count() / 60, 3) + " simulated min");
  c.expect(endpoint.last_auth() == "Bearer acceptance-key", "credential sent from environment");
  ::unsetenv(kApiKeyEnv);
}

DataPointRecord datapoint(std::string id, std::size_t text_bytes,
                          std::vector<LabeledTriplet> triplets) {
  DataPointRecord p;
  p.id = std::move(id);
  p.text = std::string(text_bytes, 't');
  p.triplets = std::move(triplets);
  p.provenance = Provenance::kGenerated;
  return p;
}

void prepare_filter(Checks& c) {
  // With 1-byte relation and object labels one triplet linearizes to
  // 20 + |subject| bytes; two triplets sharing a subject to 41 + 2|subject|
  // (FE) and 36 + |subject| (SC).
  auto one = [](std::size_t target_bytes) {
    return std::vector<LabeledTriplet>{{std::string(target_bytes - 20, 'a'), "r", "o"}};
  };
  const std::string shared(110, 'b');
  const std::vector<DataPointRecord> points{
      datapoint("input-255", 255, one(30)),   datapoint("input-256", 256, one(30)),
      datapoint("input-257", 257, one(30)),   datapoint("input-300", 300, one(30)),
      datapoint("target-255", 10, one(255)),  datapoint("target-256", 10, one(256)),
      datapoint("target-257", 10, one(257)),
      datapoint("fe-261-sc-146", 10, {{shared, "r", "o"}, {shared, "q", "o"}}),
  };
  const std::set<std::string> expected_kept{"input-255", "input-256", "target-255", "target-256"};
  const auto fe = schema_of(Linearization::kFullyExpanded);
  const auto sc = schema_of(Linearization::kSubjectCollapsed);
  c.expect(linearize(points[4].triplets, fe).text.size() == 255 &&
               linearize(points[6].triplets, fe).text.size() == 257,
           "fixture target lengths");
  c.expect(linearize(points[7].triplets, fe).text.size() == 261 &&
               linearize(points[7].triplets, sc).text.size() == 146,
           "fixture FE/SC split");

  TempDir dir;
  write_datapoints(dir / "datapoints.jsonl", points);
  PipelineConfig config;
  auto result = cmd_prepare(config, dir / "datapoints.jsonl", dir / "out");
  auto ids = [&](const std::string& file) {
    std::set<std::string> out;
    std::ifstream in(dir / "out" / file);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) out.insert(json::parse(line)["id"].get<std::string>());
    }
    return out;
  };
  const auto fe_ids = ids("fe.jsonl");
  const auto sc_ids = ids("sc.jsonl");
  c.expect(fe_ids == expected_kept, "FE survivors match the 256-token rule");
  c.expect(sc_ids == fe_ids, "FE and SC outputs hold the same datapoints");
  c.expect(result.summary["dropped_input_length"] == 2 &&
               result.summary["dropped_target_length"] == 2,
           "drop counts 2 input / 2 target");
}

struct Criterion {
  int number;
  std::string name;
  std::function<void(Checks&)> run;
  double budget_seconds;  // 0: no runtime bound
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "codec golden strings", golden_codec, 1},
      {2, "codec round-trip properties", codec_properties, 30},
      {3, "metrics oracle equivalence", metrics_oracle, 30},
      {4, "bootstrap determinism and degeneracy", bootstrap, 0},
      {5, "frequency buckets and summaries", bucketing, 0},
      {6, "sampler coverage statistics", sampler_statistics, 300},
      {7, "sampler determinism", sampler_determinism, 0},
      {8, "constrained decoding soundness", decoder_soundness, 120},
      {9, "generation client", generation_client, 0},
      {10, "prepare length filter", prepare_filter, 0},
  };
  int failures = 0;
  for (const auto& crit : criteria) {
    Checks checks;
    const auto start = std::chrono::steady_clock::now();
    try {
      crit.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (crit.budget_seconds > 0) {
      checks.expect(secs < crit.budget_seconds,
                    "runtime under " + fmt(crit.budget_seconds, 3) + "s");
    }
    const bool pass = !checks.failed();
    failures += !pass;
    std::cout << "criterion " << crit.number << " (" << crit.name << "): "
              << (pass ? "PASS" : "FAIL") << " [" << fmt(secs, 3) << "s] "
              << checks.describe() << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
