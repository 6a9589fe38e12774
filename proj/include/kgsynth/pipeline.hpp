#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/beam_search.hpp"
#include "kgsynth/codec.hpp"
#include "kgsynth/jsonl.hpp"
#include "kgsynth/metrics.hpp"
#include "kgsynth/sampler.hpp"
#include "kgsynth/textgen.hpp"
#include "kgsynth/tokenizer.hpp"

namespace kgsynth {

inline constexpr std::string_view kVersion = "0.3.0";

struct PathsConfig {
  std::filesystem::path edges;
  std::filesystem::path entity_labels;
  std::filesystem::path relation_labels;
  std::filesystem::path index_dir;
  std::filesystem::path template_file;
  std::filesystem::path demonstrations;
  std::filesystem::path vocab;  // piece tokenizer vocabulary
};

struct GenerationConfig {
  std::string preset = "code";
  std::string endpoint;
  std::string model;
  GenerationParams params = GenerationParams::preset("code");
  RateLimits limits;
  RetryPolicy retry;
  unsigned concurrency = 4;
  double price_per_1k = 0.02;
};

struct PrepareConfig {
  std::size_t max_input_tokens = 256;
  std::size_t max_target_tokens = 256;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  PathsConfig paths;
  SamplerConfig sampler;
  GenerationConfig generation;
  Linearization schema = Linearization::kFullyExpanded;
  std::string tokenizer = "byte";  // "byte" or "pieces"
  PrepareConfig prepare;
  MetricsOptions metrics;
  DecodeParams decode;
  // Unset: the default for the configured schema.
  std::optional<double> length_penalty;

  // Missing keys keep their defaults; unknown keys are rejected. Relative
  // paths are resolved against `base_dir`.
  static PipelineConfig from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& file);
  nlohmann::json to_json() const;

  // Pushes the global seed into every stochastic component.
  void set_seed(std::uint64_t s);
  void validate() const;
  DecodeParams decode_params() const;
};

// Throws ValidationError naming `what` when `path` is unset or absent.
void require_path(const std::filesystem::path& path, std::string_view what);

std::unique_ptr<Tokenizer> make_tokenizer(const PipelineConfig& config);

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitRuntime = 2,
  kExitPartial = 3,
};

struct CommandResult {
  int exit_code = kExitOk;
  nlohmann::json summary;
};

// Manifest written next to every command's outputs. It holds no
// timestamps, so an unchanged re-run writes identical bytes.
struct Manifest {
  std::string command;
  std::vector<std::filesystem::path> inputs;
  nlohmann::json config;
  nlohmann::json counts;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& out_dir) const;
};

CommandResult cmd_ingest(const PipelineConfig& config,
                         const std::filesystem::path& out_dir);

CommandResult cmd_sample(const PipelineConfig& config, std::size_t n_sets,
                         const std::filesystem::path& out_dir);

// `transport` replaces the HTTP client (tests); `stop` lets a caller halt
// the run between prompts.
CommandResult cmd_generate(const PipelineConfig& config,
                           const std::filesystem::path& sets_file,
                           const std::filesystem::path& out_dir,
                           Transport* transport = nullptr,
                           Clock* clock = nullptr,
                           const std::atomic<bool>* stop = nullptr);

struct PrepareRow {
  std::string id;
  std::string input;
  std::string target;
};

struct PrepareOutcome {
  std::vector<PrepareRow> fe;
  std::vector<PrepareRow> sc;
  std::size_t kept = 0;
  std::size_t dropped_input = 0;
  std::size_t dropped_target = 0;
  std::size_t dropped_unencodable = 0;
  std::size_t dropped_invalid = 0;  // labels the codec rejects
};

// Keeps datapoints whose text and fully expanded target both fit the token
// limits, then writes both linearizations of every survivor.
PrepareOutcome prepare_datapoints(const std::vector<DataPointRecord>& points,
                                  const Tokenizer& tokenizer,
                                  const PrepareConfig& limits);

CommandResult cmd_prepare(const PipelineConfig& config,
                          const std::filesystem::path& datapoints,
                          const std::filesystem::path& out_dir);

CommandResult cmd_encode(const PipelineConfig& config,
                         const std::filesystem::path& datapoints,
                         const std::filesystem::path& out_dir);

// Without `scorer_command`, rows {"id", "output"} are parsed. With it, rows
// {"id", "input"} are decoded by constrained beam search against the
// catalogs of the index directory.
CommandResult cmd_decode(const PipelineConfig& config,
                         const std::filesystem::path& rows,
                         const std::filesystem::path& out_dir,
                         const std::optional<std::string>& scorer_command);

CommandResult cmd_eval(const PipelineConfig& config,
                       const std::filesystem::path& predictions,
                       const std::filesystem::path& gold,
                       const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& train = {});

CommandResult cmd_stats(const PipelineConfig& config,
                        const std::filesystem::path& dataset,
                        const std::filesystem::path& out_dir);

// `relation_names[id]` labels per-relation rows when given.
nlohmann::json metrics_report_json(
    const MetricsReport& report,
    const std::vector<std::string>* relation_names = nullptr);

}  // namespace kgsynth
