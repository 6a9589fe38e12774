#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kgsynth/error.hpp"
#include "kgsynth/pipeline.hpp"

namespace {

using kgsynth::CommandResult;
using kgsynth::PipelineConfig;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "pipeline config (JSON)");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "output directory")->required();
}

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg =
      c.config.empty() ? PipelineConfig{} : PipelineConfig::load(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgsynth: synthetic closed-IE data from knowledge graphs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kgsynth::kVersion));

  Common common;
  std::size_t n_sets = 0;
  std::string input, gold, train, scorer_cmd, schema;
  std::string edges, entity_labels, relation_labels, index_dir;

  auto* ingest = app.add_subcommand("ingest", "build the graph index");
  add_common(ingest, common);
  ingest->add_option("--edges", edges);
  ingest->add_option("--entities", entity_labels);
  ingest->add_option("--relations", relation_labels);

  auto* sample = app.add_subcommand("sample", "sample triplet sets");
  add_common(sample, common);
  sample->add_option("-n,--count", n_sets, "number of sets")->required();
  sample->add_option("--index", index_dir);

  auto* generate = app.add_subcommand("generate", "generate text for sets");
  add_common(generate, common);
  generate->add_option("--sets", input, "sets JSONL")->required();

  auto* prepare = app.add_subcommand("prepare", "filter and linearize");
  add_common(prepare, common);
  prepare->add_option("--datapoints", input)->required();

  auto* encode = app.add_subcommand("encode", "linearize datapoints");
  add_common(encode, common);
  encode->add_option("--datapoints", input)->required();
  encode->add_option("--schema", schema, "fe or sc");

  auto* decode = app.add_subcommand("decode", "parse or decode model outputs");
  add_common(decode, common);
  decode->add_option("--rows", input)->required();
  decode->add_option("--schema", schema, "fe or sc");
  decode->add_option("--index", index_dir);
  decode->add_option("--scorer-cmd", scorer_cmd,
                     "scorer process for constrained beam search");

  auto* eval = app.add_subcommand("eval", "score predictions");
  add_common(eval, common);
  eval->add_option("--predictions", input)->required();
  eval->add_option("--gold", gold)->required();
  eval->add_option("--train", train, "training set for frequency buckets");

  auto* stats = app.add_subcommand("stats", "relation frequency statistics");
  add_common(stats, common);
  stats->add_option("--dataset", input)->required();
  stats->add_option("--index", index_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg = load_config(common);
    if (!edges.empty()) cfg.paths.edges = edges;
    if (!entity_labels.empty()) cfg.paths.entity_labels = entity_labels;
    if (!relation_labels.empty()) cfg.paths.relation_labels = relation_labels;
    if (!index_dir.empty()) cfg.paths.index_dir = index_dir;
    if (!schema.empty()) cfg.schema = kgsynth::parse_linearization(schema);

    CommandResult result;
    if (*ingest) {
      result = kgsynth::cmd_ingest(cfg, common.out);
    } else if (*sample) {
      result = kgsynth::cmd_sample(cfg, n_sets, common.out);
    } else if (*generate) {
      result = kgsynth::cmd_generate(cfg, input, common.out);
    } else if (*prepare) {
      result = kgsynth::cmd_prepare(cfg, input, common.out);
    } else if (*encode) {
      result = kgsynth::cmd_encode(cfg, input, common.out);
    } else if (*decode) {
      std::optional<std::string> cmd;
      if (!scorer_cmd.empty()) cmd = scorer_cmd;
      result = kgsynth::cmd_decode(cfg, input, common.out, cmd);
    } else if (*eval) {
      std::optional<std::filesystem::path> t;
      if (!train.empty()) t = train;
      result = kgsynth::cmd_eval(cfg, input, gold, common.out, t);
    } else if (*stats) {
      result = kgsynth::cmd_stats(cfg, input, common.out);
    }
    std::cout << result.summary.dump(2) << std::endl;
    return result.exit_code;
  } catch (const kgsynth::ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kgsynth::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kgsynth::kExitRuntime;
  }
}
