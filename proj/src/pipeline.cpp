#include "kgsynth/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "kgsynth/constraint.hpp"
#include "kgsynth/hash.hpp"
#include "kgsynth/kgstore.hpp"
#include "kgsynth/process_scorer.hpp"
#include "text_util.hpp"

namespace kgsynth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) {
    throw ValidationError("config section '" + section + "' must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "api_key" || key == "credential" || key == "token") {
      throw ValidationError(std::string("credentials are read from ") +
                            kApiKeyEnv + " only, not from the config");
    }
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) {
      throw ValidationError("unknown config key '" +
                            (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config key '") + key +
                          "' has the wrong type");
  }
}

void read_path(const json& j, const char* key, fs::path& out,
               const fs::path& base) {
  std::string s;
  read(j, key, s);
  if (s.empty()) return;
  fs::path p(s);
  out = (p.is_relative() && !base.empty()) ? base / p : p;
}

StartStrategy parse_strategy(const std::string& s) {
  if (s == "entity") return StartStrategy::kEntityCentric;
  if (s == "relation") return StartStrategy::kRelationCentric;
  if (s == "mixed") return StartStrategy::kMixed;
  throw ValidationError("sampler.strategy must be entity, relation or mixed");
}

const char* strategy_name(StartStrategy s) {
  switch (s) {
    case StartStrategy::kEntityCentric: return "entity";
    case StartStrategy::kRelationCentric: return "relation";
    case StartStrategy::kMixed: return "mixed";
  }
  return "mixed";
}

double to_seconds(Nanos d) { return std::chrono::duration<double>(d).count(); }
Nanos from_seconds(double s) {
  return std::chrono::duration_cast<Nanos>(std::chrono::duration<double>(s));
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) throw ValidationError("output directory not set");
  fs::create_directories(dir);
}

std::ofstream open_output(const fs::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  return out;
}

std::string set_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "set-%08zu", i);
  return buf;
}

std::vector<fs::path> index_files(const fs::path& dir) {
  return {dir / "entities.tsv", dir / "relations.tsv", dir / "edges.tsv"};
}

// Dense ids for labels seen while reading JSONL datasets.
template <typename Id>
class Interner {
 public:
  Id operator()(const std::string& label) {
    auto [it, inserted] = ids_.try_emplace(label, Id{names_.size()});
    if (inserted) names_.push_back(label);
    return it->second;
  }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::unordered_map<std::string, Id> ids_;
  std::vector<std::string> names_;
};

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base) {
  check_keys(j, "", {"seed", "paths", "sampler", "generation", "schema",
                     "tokenizer", "prepare", "metrics", "decode"});
  PipelineConfig c;
  read(j, "seed", c.seed);
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, "paths", {"edges", "entity_labels", "relation_labels",
                            "index_dir", "template", "demonstrations", "vocab"});
    read_path(p, "edges", c.paths.edges, base);
    read_path(p, "entity_labels", c.paths.entity_labels, base);
    read_path(p, "relation_labels", c.paths.relation_labels, base);
    read_path(p, "index_dir", c.paths.index_dir, base);
    read_path(p, "template", c.paths.template_file, base);
    read_path(p, "demonstrations", c.paths.demonstrations, base);
    read_path(p, "vocab", c.paths.vocab, base);
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    check_keys(s, "sampler",
               {"poisson_mean", "bias_factor", "dampening", "reweight_interval",
                "strategy", "rank", "attempts_per_triplet"});
    read(s, "poisson_mean", c.sampler.poisson_mean);
    read(s, "bias_factor", c.sampler.bias_factor);
    read(s, "dampening", c.sampler.dampening);
    read(s, "reweight_interval", c.sampler.reweight_interval);
    read(s, "attempts_per_triplet", c.sampler.attempts_per_triplet);
    std::string strategy, rank;
    read(s, "strategy", strategy);
    if (!strategy.empty()) c.sampler.strategy = parse_strategy(strategy);
    read(s, "rank", rank);
    if (rank == "recency") {
      c.sampler.rank_mode = CoherenceRank::kRecency;
    } else if (!rank.empty() && rank != "first_appearance") {
      throw ValidationError("sampler.rank must be first_appearance or recency");
    }
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    check_keys(g, "generation",
               {"preset", "endpoint", "model", "concurrency", "price_per_1k",
                "requests_per_minute", "tokens_per_minute", "max_attempts",
                "initial_backoff_s", "params"});
    read(g, "preset", c.generation.preset);
    c.generation.params = GenerationParams::preset(c.generation.preset);
    read(g, "endpoint", c.generation.endpoint);
    read(g, "model", c.generation.model);
    read(g, "concurrency", c.generation.concurrency);
    read(g, "price_per_1k", c.generation.price_per_1k);
    read(g, "requests_per_minute", c.generation.limits.requests_per_window);
    read(g, "tokens_per_minute", c.generation.limits.tokens_per_window);
    read(g, "max_attempts", c.generation.retry.max_attempts);
    double backoff = to_seconds(c.generation.retry.initial_backoff);
    read(g, "initial_backoff_s", backoff);
    c.generation.retry.initial_backoff = from_seconds(backoff);
    if (g.contains("params")) {
      const auto& p = g["params"];
      check_keys(p, "generation.params",
                 {"max_tokens", "temperature", "top_p", "frequency_penalty",
                  "presence_penalty", "stop", "n", "best_of"});
      auto& gp = c.generation.params;
      read(p, "max_tokens", gp.max_tokens);
      read(p, "temperature", gp.temperature);
      read(p, "top_p", gp.top_p);
      read(p, "frequency_penalty", gp.frequency_penalty);
      read(p, "presence_penalty", gp.presence_penalty);
      read(p, "stop", gp.stop);
      read(p, "n", gp.n);
      read(p, "best_of", gp.best_of);
    }
  }
  std::string schema;
  read(j, "schema", schema);
  if (!schema.empty()) c.schema = parse_linearization(schema);
  read(j, "tokenizer", c.tokenizer);
  if (j.contains("prepare")) {
    const auto& p = j["prepare"];
    check_keys(p, "prepare", {"max_input_tokens", "max_target_tokens"});
    read(p, "max_input_tokens", c.prepare.max_input_tokens);
    read(p, "max_target_tokens", c.prepare.max_target_tokens);
  }
  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    check_keys(m, "metrics", {"n_bootstrap", "level", "macro_f1", "threads"});
    read(m, "n_bootstrap", c.metrics.n_bootstrap);
    read(m, "level", c.metrics.level);
    read(m, "threads", c.metrics.threads);
    std::string mode;
    read(m, "macro_f1", mode);
    if (mode == "harmonic") {
      c.metrics.macro_f1 = MacroF1::kHarmonicOfMeans;
    } else if (!mode.empty() && mode != "mean") {
      throw ValidationError("metrics.macro_f1 must be mean or harmonic");
    }
  }
  if (j.contains("decode")) {
    const auto& d = j["decode"];
    check_keys(d, "decode",
               {"num_beams", "length_penalty", "max_length", "top_k"});
    read(d, "num_beams", c.decode.num_beams);
    read(d, "max_length", c.decode.max_length);
    read(d, "top_k", c.decode.top_k_returned);
    if (d.contains("length_penalty")) {
      double lp = 0;
      read(d, "length_penalty", lp);
      c.length_penalty = lp;
    }
  }
  c.set_seed(c.seed);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
  auto in = detail::open_input(file);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError(file.string() + ": invalid JSON");
  return from_json(j, file.parent_path());
}

json PipelineConfig::to_json() const {
  const auto& gp = generation.params;
  return json{
      {"seed", seed},
      {"paths",
       {{"edges", paths.edges.string()},
        {"entity_labels", paths.entity_labels.string()},
        {"relation_labels", paths.relation_labels.string()},
        {"index_dir", paths.index_dir.string()},
        {"template", paths.template_file.string()},
        {"demonstrations", paths.demonstrations.string()},
        {"vocab", paths.vocab.string()}}},
      {"sampler",
       {{"poisson_mean", sampler.poisson_mean},
        {"bias_factor", sampler.bias_factor},
        {"dampening", sampler.dampening},
        {"reweight_interval", sampler.reweight_interval},
        {"strategy", strategy_name(sampler.strategy)},
        {"rank", sampler.rank_mode == CoherenceRank::kRecency
                     ? "recency"
                     : "first_appearance"},
        {"attempts_per_triplet", sampler.attempts_per_triplet}}},
      {"generation",
       {{"preset", generation.preset},
        {"endpoint", generation.endpoint},
        {"model", generation.model},
        {"concurrency", generation.concurrency},
        {"price_per_1k", generation.price_per_1k},
        {"requests_per_minute", generation.limits.requests_per_window},
        {"tokens_per_minute", generation.limits.tokens_per_window},
        {"max_attempts", generation.retry.max_attempts},
        {"initial_backoff_s", to_seconds(generation.retry.initial_backoff)},
        {"params",
         {{"max_tokens", gp.max_tokens},
          {"temperature", gp.temperature},
          {"top_p", gp.top_p},
          {"frequency_penalty", gp.frequency_penalty},
          {"presence_penalty", gp.presence_penalty},
          {"stop", gp.stop},
          {"n", gp.n},
          {"best_of", gp.best_of}}}}},
      {"schema", to_string(schema)},
      {"tokenizer", tokenizer},
      {"prepare",
       {{"max_input_tokens", prepare.max_input_tokens},
        {"max_target_tokens", prepare.max_target_tokens}}},
      {"metrics",
       {{"n_bootstrap", metrics.n_bootstrap},
        {"level", metrics.level},
        {"macro_f1",
         metrics.macro_f1 == MacroF1::kMeanOfF1 ? "mean" : "harmonic"},
        {"threads", metrics.threads}}},
      {"decode",
       {{"num_beams", decode.num_beams},
        {"length_penalty", decode_params().length_penalty},
        {"max_length", decode.max_length},
        {"top_k", decode.top_k_returned}}},
  };
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  sampler.seed = s;
  metrics.seed = s;
}

DecodeParams PipelineConfig::decode_params() const {
  DecodeParams p = decode;
  p.length_penalty = length_penalty.value_or(
      DecodeParams::defaults_for(schema).length_penalty);
  return p;
}

void PipelineConfig::validate() const {
  sampler.validate();
  generation.params.validate();
  generation.limits.validate();
  decode_params().validate();
  if (tokenizer != "byte" && tokenizer != "pieces") {
    throw ValidationError("tokenizer must be byte or pieces");
  }
  if (generation.concurrency == 0) {
    throw ValidationError("generation.concurrency must be at least 1");
  }
  if (metrics.n_bootstrap == 0) {
    throw ValidationError("metrics.n_bootstrap must be at least 1");
  }
  if (!(metrics.level > 0 && metrics.level < 1)) {
    throw ValidationError("metrics.level must lie in (0, 1)");
  }
}

void require_path(const fs::path& path, std::string_view what) {
  if (path.empty()) {
    throw ValidationError("config does not set " + std::string(what));
  }
  if (!fs::exists(path)) {
    throw ValidationError("no such file: " + path.string() + " (" +
                          std::string(what) + ")");
  }
}

std::unique_ptr<Tokenizer> make_tokenizer(const PipelineConfig& config) {
  if (config.tokenizer == "pieces") {
    require_path(config.paths.vocab, "paths.vocab");
    return std::make_unique<PieceTokenizer>(
        PieceTokenizer::from_file(config.paths.vocab));
  }
  return std::make_unique<ByteTokenizer>();
}

json Manifest::to_json() const {
  json in = json::array();
  for (const auto& p : inputs) {
    in.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
  }
  return json{{"command", command},
              {"version", kVersion},
              {"inputs", std::move(in)},
              {"config", config},
              {"counts", counts}};
}

void Manifest::write(const fs::path& out_dir) const {
  auto out = open_output(out_dir / "manifest.json");
  out << to_json().dump(2) << "\n";
}

CommandResult cmd_ingest(const PipelineConfig& config, const fs::path& out_dir) {
  const auto& p = config.paths;
  require_path(p.edges, "paths.edges");
  require_path(p.entity_labels, "paths.entity_labels");
  require_path(p.relation_labels, "paths.relation_labels");
  IngestReport report;
  const KnowledgeGraph raw =
      ingest(p.edges, p.entity_labels, p.relation_labels, &report);
  const KnowledgeGraph graph = filter_zero_degree(raw);
  ensure_dir(out_dir);
  write_index(graph, out_dir);

  CommandResult result;
  result.summary = {
      {"entities", graph.entities().size()},
      {"relations", graph.relations().size()},
      {"edges", graph.edges().size()},
      {"zero_degree_removed",
       raw.entities().size() - graph.entities().size()},
      {"duplicate_edges", report.duplicate_edges},
      {"literal_relations", report.literal_relations},
      {"literal_edges", report.literal_edges},
  };
  Manifest{"ingest", {p.edges, p.entity_labels, p.relation_labels},
           config.to_json(), result.summary}
      .write(out_dir);
  return result;
}

CommandResult cmd_sample(const PipelineConfig& config, std::size_t n_sets,
                         const fs::path& out_dir) {
  require_path(config.paths.index_dir, "paths.index_dir");
  const KnowledgeGraph graph = load_index(config.paths.index_dir);
  ensure_dir(out_dir);
  auto out = open_output(out_dir / "sets.jsonl");

  std::size_t partial = 0, triplets = 0;
  const auto state = sample_dataset(
      graph, config.sampler, n_sets, [&](std::size_t i, const TripletSet& set) {
        DataPointRecord r;
        r.id = set_id(i);
        r.provenance = Provenance::kSampled;
        r.partial = set.partial;
        for (const auto& t : set.triplets) {
          r.triplets.push_back({graph.entities()[t.subject].label,
                                graph.relations()[t.relation].label,
                                graph.entities()[t.object].label});
        }
        partial += set.partial;
        triplets += set.triplets.size();
        out << to_jsonl_line(r);
      });
  if (!out) throw Error("write to sets.jsonl failed");

  std::size_t relations_covered = 0, entities_covered = 0;
  double mean = 0, var = 0;
  for (auto c : state.relation_counts) {
    relations_covered += c > 0;
    mean += static_cast<double>(c);
  }
  for (auto c : state.entity_counts) entities_covered += c > 0;
  const double nr = static_cast<double>(state.relation_counts.size());
  mean /= nr;
  for (auto c : state.relation_counts) {
    var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  }
  var /= nr;

  CommandResult result;
  result.summary = {
      {"sets", n_sets},
      {"triplets", triplets},
      {"partial_sets", partial},
      {"mean_set_size", n_sets ? static_cast<double>(triplets) / n_sets : 0.0},
      {"relations_covered", relations_covered},
      {"relations_total", state.relation_counts.size()},
      {"entities_covered", entities_covered},
      {"entities_total", state.entity_counts.size()},
      {"relation_count_cv", mean > 0 ? std::sqrt(var) / mean : 0.0},
      {"reweights", state.reweights},
  };
  Manifest{"sample", index_files(config.paths.index_dir), config.to_json(),
           result.summary}
      .write(out_dir);
  return result;
}

CommandResult cmd_generate(const PipelineConfig& config,
                           const fs::path& sets_file, const fs::path& out_dir,
                           Transport* transport, Clock* clock,
                           const std::atomic<bool>* stop) {
  require_path(sets_file, "sets file");
  require_path(config.paths.template_file, "paths.template");
  const auto sets = read_datapoints(sets_file);
  const PromptTemplate tmpl = PromptTemplate::load(config.paths.template_file);
  std::vector<fs::path> inputs{sets_file, config.paths.template_file};

  std::vector<Demonstration> demos;
  if (tmpl.num_demonstrations > 0) {
    require_path(config.paths.demonstrations, "paths.demonstrations");
    demos = load_demonstrations(config.paths.demonstrations);
    if (demos.size() < tmpl.num_demonstrations) {
      throw ValidationError("template needs " +
                            std::to_string(tmpl.num_demonstrations) +
                            " demonstrations, file has " +
                            std::to_string(demos.size()));
    }
    demos.resize(tmpl.num_demonstrations);
    inputs.push_back(config.paths.demonstrations);
  }

  std::vector<PromptJob> jobs;
  jobs.reserve(sets.size());
  for (const auto& s : sets) {
    jobs.push_back({s.id, build_prompt(s.triplets, tmpl, demos)});
  }

  std::unique_ptr<Transport> owned_transport;
  if (!transport) {
    if (config.generation.endpoint.empty()) {
      throw ValidationError("config does not set generation.endpoint");
    }
    owned_transport = std::make_unique<HttpTransport>(config.generation.endpoint);
    transport = owned_transport.get();
  }
  SystemClock system_clock;
  if (!clock) clock = &system_clock;

  ensure_dir(out_dir);
  const fs::path log_path = out_dir / "generations.jsonl";
  GenerateSummary run;
  {
    RecordLog log(log_path);
    RateLimiter limiter(config.generation.limits, *clock);
    GenerateOptions options;
    options.model = config.generation.model;
    options.params = config.generation.params;
    options.retry = config.generation.retry;
    options.concurrency = config.generation.concurrency;
    options.price_per_1k = config.generation.price_per_1k;
    options.seed = config.seed;
    run = generate(jobs, options, *transport, limiter, *clock, log, stop);
  }

  std::unordered_map<std::string, GenerationRecord> by_id;
  for (auto& r : RecordLog::read(log_path)) by_id.emplace(r.set_id, std::move(r));
  std::vector<DataPointRecord> points;
  std::size_t missing = 0;
  for (const auto& s : sets) {
    auto it = by_id.find(s.id);
    if (it == by_id.end() || it->second.status != RecordStatus::kOk) {
      ++missing;
      continue;
    }
    DataPointRecord p = s;
    p.text = std::string(detail::trim(it->second.completion));
    p.provenance = Provenance::kGenerated;
    points.push_back(std::move(p));
  }
  write_datapoints(out_dir / "datapoints.jsonl", points);

  CommandResult result;
  result.summary = {
      {"prompts", jobs.size()},
      {"ok", run.ok},
      {"failed", run.failed},
      {"skipped_completed", run.skipped},
      {"requests", run.requests},
      {"tokens", run.tokens},
      {"cost", run.cost},
      {"datapoints", points.size()},
      {"unresolved", missing},
      {"stopped", run.stopped},
  };
  if (missing > 0) result.exit_code = kExitPartial;
  Manifest{"generate", inputs, config.to_json(), result.summary}.write(out_dir);
  return result;
}

PrepareOutcome prepare_datapoints(const std::vector<DataPointRecord>& points,
                                  const Tokenizer& tokenizer,
                                  const PrepareConfig& limits) {
  LinearizationSchema fe_schema, sc_schema;
  sc_schema.variant = Linearization::kSubjectCollapsed;
  PrepareOutcome out;
  for (const auto& p : points) {
    const auto input = tokenizer.encode(p.text);
    if (!input) {
      ++out.dropped_unencodable;
      continue;
    }
    if (input->size() > limits.max_input_tokens) {
      ++out.dropped_input;
      continue;
    }
    std::string fe, sc;
    try {
      fe = linearize(p.triplets, fe_schema, p.text).text;
      sc = linearize(p.triplets, sc_schema, p.text).text;
    } catch (const ValidationError&) {
      ++out.dropped_invalid;
      continue;
    }
    // The fully expanded target decides for both outputs.
    const auto target = tokenizer.encode(fe);
    if (!target) {
      ++out.dropped_unencodable;
      continue;
    }
    if (target->size() > limits.max_target_tokens) {
      ++out.dropped_target;
      continue;
    }
    out.fe.push_back({p.id, p.text, std::move(fe)});
    out.sc.push_back({p.id, p.text, std::move(sc)});
    ++out.kept;
  }
  return out;
}

namespace {

void write_rows(const fs::path& file, const std::vector<PrepareRow>& rows) {
  auto out = open_output(file);
  for (const auto& r : rows) {
    out << json{{"id", r.id}, {"input", r.input}, {"target", r.target}}.dump()
        << "\n";
  }
  if (!out) throw Error("write to " + file.string() + " failed");
}

}  // namespace

CommandResult cmd_prepare(const PipelineConfig& config,
                          const fs::path& datapoints, const fs::path& out_dir) {
  require_path(datapoints, "datapoints file");
  const auto points = read_datapoints(datapoints);
  const auto tokenizer = make_tokenizer(config);
  const auto outcome = prepare_datapoints(points, *tokenizer, config.prepare);
  ensure_dir(out_dir);
  write_rows(out_dir / "fe.jsonl", outcome.fe);
  write_rows(out_dir / "sc.jsonl", outcome.sc);

  CommandResult result;
  result.summary = {
      {"datapoints", points.size()},
      {"kept", outcome.kept},
      {"dropped_input_length", outcome.dropped_input},
      {"dropped_target_length", outcome.dropped_target},
      {"dropped_unencodable", outcome.dropped_unencodable},
      {"dropped_invalid_labels", outcome.dropped_invalid},
  };
  std::vector<fs::path> inputs{datapoints};
  if (config.tokenizer == "pieces") inputs.push_back(config.paths.vocab);
  Manifest{"prepare", inputs, config.to_json(), result.summary}.write(out_dir);
  return result;
}

CommandResult cmd_encode(const PipelineConfig& config,
                         const fs::path& datapoints, const fs::path& out_dir) {
  require_path(datapoints, "datapoints file");
  LinearizationSchema schema;
  schema.variant = config.schema;
  std::vector<PrepareRow> rows;
  read_datapoints(datapoints, [&](DataPointRecord&& p) {
    try {
      rows.push_back({p.id, p.text, linearize(p.triplets, schema, p.text).text});
    } catch (const ValidationError& e) {
      throw ValidationError("datapoint " + p.id + ": " + e.what());
    }
  });
  ensure_dir(out_dir);
  write_rows(out_dir / "encoded.jsonl", rows);
  CommandResult result;
  result.summary = {{"rows", rows.size()}, {"schema", to_string(config.schema)}};
  Manifest{"encode", {datapoints}, config.to_json(), result.summary}.write(
      out_dir);
  return result;
}

CommandResult cmd_decode(const PipelineConfig& config, const fs::path& rows_file,
                         const fs::path& out_dir,
                         const std::optional<std::string>& scorer_command) {
  require_path(rows_file, "rows file");
  LinearizationSchema schema;
  schema.variant = config.schema;

  std::optional<KnowledgeGraph> graph;
  std::optional<LabelResolver> resolver;
  std::vector<fs::path> inputs{rows_file};
  if (scorer_command || !config.paths.index_dir.empty()) {
    require_path(config.paths.index_dir, "paths.index_dir");
    graph = load_index(config.paths.index_dir);
    resolver.emplace(graph->entities(), graph->relations());
    for (auto& f : index_files(config.paths.index_dir)) inputs.push_back(f);
  }

  std::unique_ptr<Tokenizer> tokenizer;
  std::optional<DecodingCatalog> catalog;
  std::optional<ConstraintAutomaton> automaton;
  std::unique_ptr<ProcessScorer> scorer;
  if (scorer_command) {
    tokenizer = make_tokenizer(config);
    std::vector<std::string> entity_labels, relation_labels;
    for (const auto& e : graph->entities()) entity_labels.push_back(e.label);
    for (const auto& r : graph->relations()) relation_labels.push_back(r.label);
    catalog = DecodingCatalog::build(entity_labels, relation_labels, *tokenizer);
    automaton.emplace(*catalog, schema, *tokenizer);
    scorer = std::make_unique<ProcessScorer>(*scorer_command,
                                             tokenizer->vocab_size());
  }
  const DecodeParams params = config.decode_params();

  std::vector<DataPointRecord> out;
  ParseDiagnostics totals;
  std::size_t truncated = 0;
  auto in = detail::open_input(rows_file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto where = [&] {
      return rows_file.string() + ":" + std::to_string(lineno);
    };
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object() || !row.contains("id")) {
      throw ValidationError(where() + ": expected an object with an id");
    }
    DataPointRecord rec;
    rec.id = row["id"].is_string() ? row["id"].get<std::string>()
                                   : row["id"].dump();
    rec.provenance = Provenance::kGenerated;
    std::string output;
    if (scorer) {
      if (!row.contains("input") || !row["input"].is_string()) {
        throw ValidationError(where() + ": row has no input text");
      }
      rec.text = row["input"].get<std::string>();
      const auto best =
          constrained_beam_search(*scorer, rec.text, *automaton, params);
      output = tokenizer->decode(best.front().tokens);
      rec.truncated = best.front().truncated;
      truncated += rec.truncated;
    } else {
      if (!row.contains("output") || !row["output"].is_string()) {
        throw ValidationError(where() + ": row has no output text");
      }
      output = row["output"].get<std::string>();
      if (row.contains("input") && row["input"].is_string()) {
        rec.text = row["input"].get<std::string>();
      }
    }
    auto parsed = parse(output, schema, resolver ? &*resolver : nullptr);
    totals.dropped_fragments += parsed.diagnostics.dropped_fragments;
    totals.unresolved += parsed.diagnostics.unresolved;
    totals.duplicates += parsed.diagnostics.duplicates;
    rec.triplets = std::move(parsed.triplets);
    out.push_back(std::move(rec));
  }
  ensure_dir(out_dir);
  write_datapoints(out_dir / "predictions.jsonl", out);

  CommandResult result;
  result.summary = {
      {"rows", out.size()},
      {"mode", scorer ? "constrained_beam_search" : "parse"},
      {"dropped_fragments", totals.dropped_fragments},
      {"unresolved", totals.unresolved},
      {"duplicates", totals.duplicates},
      {"truncated", truncated},
  };
  if (truncated > 0) result.exit_code = kExitPartial;
  Manifest{"decode", inputs, config.to_json(), result.summary}.write(out_dir);
  return result;
}

json metrics_report_json(const MetricsReport& report,
                         const std::vector<std::string>* names) {
  auto interval = [](const Interval& i) {
    return json{{"value", i.point}, {"lower", i.lower}, {"upper", i.upper}};
  };
  auto name_of = [&](RelationId r) -> json {
    if (names && r.index() < names->size()) return (*names)[r.index()];
    return r.value;
  };
  json per_relation = json::array();
  for (const auto& r : report.per_relation) {
    per_relation.push_back({{"relation", name_of(r.relation)},
                            {"true_positives", r.true_positives},
                            {"predicted", r.predicted},
                            {"gold", r.gold},
                            {"precision", r.scores.precision},
                            {"recall", r.scores.recall},
                            {"f1", r.scores.f1}});
  }
  json buckets = json::array();
  for (const auto& b : report.per_bucket) {
    json row{{"bucket", b.bucket},
             {"relations", b.relations},
             {"precision", b.micro.precision},
             {"recall", b.micro.recall},
             {"f1", interval(b.f1)}};
    if (b.bucket == kUnseenBucket) {
      row["range"] = {0, 1};
    } else {
      row["range"] = {std::uint64_t{1} << b.bucket,
                      std::uint64_t{1} << (b.bucket + 1)};
    }
    buckets.push_back(std::move(row));
  }
  const auto& o = report.options;
  return json{
      {"documents", report.documents},
      {"micro",
       {{"precision", interval(report.micro_precision)},
        {"recall", interval(report.micro_recall)},
        {"f1", interval(report.micro_f1)}}},
      {"macro",
       {{"precision", interval(report.macro_precision)},
        {"recall", interval(report.macro_recall)},
        {"f1", interval(report.macro_f1)}}},
      {"macro_f1_mode",
       o.macro_f1 == MacroF1::kMeanOfF1 ? "mean_of_f1" : "harmonic_of_means"},
      {"bootstrap",
       {{"samples", o.n_bootstrap},
        {"level", o.level},
        {"seed", o.seed},
        {"unit", "document"},
        {"interval", "percentile, nearest rank"}}},
      {"conventions",
       {{"zero_denominator",
         "precision or recall is 0 when its denominator is 0 and the other "
         "side is non-empty; 1 when nothing is predicted nor expected"},
        {"macro_relations",
         "relations occurring in gold or predictions"}}},
      {"per_relation", std::move(per_relation)},
      {"buckets", std::move(buckets)},
  };
}

CommandResult cmd_eval(const PipelineConfig& config, const fs::path& predictions,
                       const fs::path& gold, const fs::path& out_dir,
                       const std::optional<fs::path>& train) {
  require_path(predictions, "predictions file");
  require_path(gold, "gold file");
  if (train) require_path(*train, "training set");

  Interner<EntityId> entity_ids;
  Interner<RelationId> relation_ids;
  auto to_ids = [&](const std::vector<LabeledTriplet>& ts) {
    std::vector<Triplet> out;
    out.reserve(ts.size());
    for (const auto& t : ts) {
      out.push_back({entity_ids(t.subject), relation_ids(t.relation),
                     entity_ids(t.object)});
    }
    return out;
  };

  std::unordered_map<std::string, std::vector<Triplet>> predicted;
  read_datapoints(predictions, [&](DataPointRecord&& p) {
    if (!predicted.emplace(p.id, to_ids(p.triplets)).second) {
      throw ValidationError("duplicate prediction id " + p.id);
    }
  });
  std::vector<EvalPair> pairs;
  std::unordered_set<std::string> gold_ids;
  read_datapoints(gold, [&](DataPointRecord&& g) {
    if (!gold_ids.insert(g.id).second) {
      throw ValidationError("duplicate gold id " + g.id);
    }
    auto it = predicted.find(g.id);
    std::vector<Triplet> pred;
    if (it != predicted.end()) pred = it->second;
    pairs.push_back(EvalPair::make(g.id, std::move(pred), to_ids(g.triplets)));
  });
  std::size_t unmatched = 0;
  for (const auto& [id, _] : predicted) unmatched += !gold_ids.count(id);

  std::unordered_map<RelationId, std::uint64_t> train_counts;
  std::vector<fs::path> inputs{predictions, gold};
  if (train) {
    read_datapoints(*train, [&](DataPointRecord&& p) {
      for (const auto& t : p.triplets) ++train_counts[relation_ids(t.relation)];
    });
    inputs.push_back(*train);
  }

  const MetricsReport report =
      evaluate(pairs, config.metrics, train ? &train_counts : nullptr);
  ensure_dir(out_dir);
  {
    auto out = open_output(out_dir / "metrics.json");
    out << metrics_report_json(report, &relation_ids.names()).dump(2) << "\n";
  }
  {
    auto out = open_output(out_dir / "per_relation.tsv");
    out << "relation\ttrue_positives\tpredicted\tgold\tprecision\trecall\tf1\n";
    for (const auto& r : report.per_relation) {
      out << relation_ids.names()[r.relation.index()] << '\t'
          << r.true_positives << '\t' << r.predicted << '\t' << r.gold << '\t'
          << r.scores.precision << '\t' << r.scores.recall << '\t'
          << r.scores.f1 << '\n';
    }
  }
  if (train) {
    auto out = open_output(out_dir / "buckets.tsv");
    out << "bucket\trelations\tprecision\trecall\tf1\tf1_lower\tf1_upper\n";
    for (const auto& b : report.per_bucket) {
      out << (b.bucket == kUnseenBucket ? std::string("unseen")
                                        : std::to_string(b.bucket))
          << '\t' << b.relations << '\t' << b.micro.precision << '\t'
          << b.micro.recall << '\t' << b.f1.point << '\t' << b.f1.lower << '\t'
          << b.f1.upper << '\n';
    }
  }

  CommandResult result;
  result.summary = {
      {"documents", pairs.size()},
      {"unmatched_predictions", unmatched},
      {"micro_f1", report.micro.f1},
      {"macro_f1", report.macro.f1},
  };
  Manifest{"eval", inputs, config.to_json(), result.summary}.write(out_dir);
  return result;
}

CommandResult cmd_stats(const PipelineConfig& config, const fs::path& dataset,
                        const fs::path& out_dir) {
  require_path(dataset, "dataset file");
  Interner<RelationId> relation_ids;
  std::vector<fs::path> inputs{dataset};
  if (!config.paths.index_dir.empty()) {
    require_path(config.paths.index_dir, "paths.index_dir");
    const KnowledgeGraph graph = load_index(config.paths.index_dir);
    for (const auto& r : graph.relations()) relation_ids(r.label);
    for (auto& f : index_files(config.paths.index_dir)) inputs.push_back(f);
  }
  std::vector<std::uint64_t> counts(relation_ids.names().size(), 0);
  std::size_t datapoints = 0, triplets = 0;
  read_datapoints(dataset, [&](DataPointRecord&& p) {
    ++datapoints;
    for (const auto& t : p.triplets) {
      const auto id = relation_ids(t.relation);
      if (id.index() >= counts.size()) counts.resize(id.index() + 1, 0);
      ++counts[id.index()];
      ++triplets;
    }
  });
  if (counts.empty()) throw ValidationError("dataset holds no triplets");
  const RelationStats stats = relation_stats_from_counts(counts);

  ensure_dir(out_dir);
  json cdf = json::array();
  for (const auto& [x, frac] : stats.cdf) cdf.push_back({x, frac});
  const auto& s = stats.summary;
  json doc{{"datapoints", datapoints},
           {"triplets", triplets},
           {"relations", counts.size()},
           {"summary",
            {{"min", s.min},
             {"q1", s.q1},
             {"median", s.median},
             {"q3", s.q3},
             {"max", s.max}}},
           {"cdf", std::move(cdf)}};
  {
    auto out = open_output(out_dir / "stats.json");
    out << doc.dump(2) << "\n";
  }
  {
    std::vector<std::pair<std::uint64_t, std::string>> rows;
    for (const auto& [r, c] : stats.counts) {
      rows.emplace_back(c, relation_ids.names()[r.index()]);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    auto out = open_output(out_dir / "counts.tsv");
    out << "relation\tcount\n";
    for (const auto& [c, name] : rows) out << name << '\t' << c << '\n';
  }
  {
    auto out = open_output(out_dir / "cdf.tsv");
    out << "count\tfraction\n";
    for (const auto& [x, frac] : stats.cdf) out << x << '\t' << frac << '\n';
  }

  CommandResult result;
  result.summary = {{"datapoints", datapoints},
                    {"triplets", triplets},
                    {"relations", counts.size()},
                    {"median_count", s.median}};
  Manifest{"stats", inputs, config.to_json(), result.summary}.write(out_dir);
  return result;
}

}  // namespace kgsynth
