#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgsynth/error.hpp"
#include "kgsynth/ids.hpp"
#include "kgsynth/rate_limiter.hpp"

namespace kgsynth {

struct GenerationParams {
  std::uint32_t max_tokens = 100;
  double temperature = 0.7;
  double top_p = 1.0;
  double frequency_penalty = 0.2;
  double presence_penalty = 0.0;
  std::string stop = "\n";
  std::uint32_t n = 1;
  std::uint32_t best_of = 5;

  // "code" or "text".
  static GenerationParams preset(std::string_view name);
  void validate() const;
};

// Renders triplets as "(subject; relation; object)" joined by single spaces.
std::string render_triplets(std::span<const LabeledTriplet> triplets);

struct Demonstration {
  std::vector<LabeledTriplet> triplets;
  std::string text;
};

struct PromptTemplate {
  static constexpr std::string_view kTripletsSlot = "{triplets}";
  static constexpr std::string_view kTextSlot = "{text}";

  std::string instruction;
  // Must hold kTripletsSlot once, followed later by kTextSlot once.
  std::string demonstration_format = "triplets: {triplets}\ntext: {text}";
  std::string separator = "\n\n";
  std::size_t num_demonstrations = 0;

  void validate() const;
  static PromptTemplate from_json(const nlohmann::json& j);
  static PromptTemplate load(const std::filesystem::path& file);
};

// Instruction, separator, each demonstration, then the query rendered with
// the same format and cut right before the text slot.
std::string build_prompt(std::span<const LabeledTriplet> query,
                         const PromptTemplate& tmpl,
                         std::span<const Demonstration> demonstrations);

// One JSON object per line: {"triplets": [{"s", "r", "o"}, ...], "text": ".."}.
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& file);

double estimate_cost(std::uint64_t tokens, double price_per_1k);

// Characters / 4, rounded up.
std::uint64_t estimate_tokens(std::string_view text);

class CostLedger {
 public:
  explicit CostLedger(double price_per_1k = 0.02);
  void record_request() { ++requests_; }
  void record_tokens(std::uint64_t tokens) { tokens_ += tokens; }
  std::uint64_t tokens_consumed() const { return tokens_.load(); }
  std::uint64_t requests_sent() const { return requests_.load(); }
  double price_per_1k() const { return price_; }
  double cost() const { return estimate_cost(tokens_consumed(), price_); }

 private:
  double price_;
  std::atomic<std::uint64_t> tokens_{0};
  std::atomic<std::uint64_t> requests_{0};
};

enum class RecordStatus { kOk, kFailed };

struct GenerationRecord {
  std::string set_id;
  std::string prompt;
  std::string completion;
  std::string finish_reason;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  std::uint64_t total_tokens = 0;
  double timestamp = 0;
  RecordStatus status = RecordStatus::kOk;
  std::string error;
  std::uint32_t attempts = 0;

  nlohmann::json to_json() const;
  static GenerationRecord from_json(const nlohmann::json& j);
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::optional<double> retry_after_seconds;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // Throws TransportError when no HTTP response arrives.
  virtual HttpResponse post(const std::string& json_body) = 0;
};

// Environment variable holding the endpoint credential.
inline constexpr const char* kApiKeyEnv = "KGSYNTH_API_KEY";

// POSTs to an http(s) URL with a bearer token read from kApiKeyEnv.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::string url,
                         std::chrono::seconds timeout = std::chrono::seconds(60));
  HttpResponse post(const std::string& json_body) override;

 private:
  std::string origin_;
  std::string path_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

struct RetryPolicy {
  std::uint32_t max_attempts = 5;
  Nanos initial_backoff = std::chrono::seconds(2);
  Nanos max_backoff = std::chrono::seconds(64);
};

struct PromptJob {
  std::string set_id;
  std::string prompt;
};

struct GenerateOptions {
  std::string model;
  GenerationParams params;
  RetryPolicy retry;
  unsigned concurrency = 4;
  double price_per_1k = 0.02;
  std::uint64_t seed = 0;
};

struct GenerateSummary {
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;
  std::uint64_t requests = 0;
  std::uint64_t tokens = 0;
  double cost = 0;
  bool stopped = false;
};

// Completions request body for one prompt.
std::string completion_request_body(const std::string& model,
                                    const std::string& prompt,
                                    const GenerationParams& params);

// Append-only JSONL store of generation records. Opening drops a truncated
// trailing line left by an interrupted run.
class RecordLog {
 public:
  explicit RecordLog(std::filesystem::path path);
  ~RecordLog();
  RecordLog(const RecordLog&) = delete;
  RecordLog& operator=(const RecordLog&) = delete;

  void append(const GenerationRecord& record);
  const std::unordered_set<std::string>& completed() const { return completed_; }

  // Last record per set_id, in first-appearance order.
  static std::vector<GenerationRecord> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  std::FILE* out_ = nullptr;
  std::mutex mu_;
  std::unordered_set<std::string> completed_;
};

// Sends every job whose set_id is not already completed in `log`. Workers
// stop picking new jobs once `stop` becomes true.
GenerateSummary generate(std::span<const PromptJob> jobs,
                         const GenerateOptions& options, Transport& transport,
                         RateLimiter& limiter, Clock& clock, RecordLog& log,
                         const std::atomic<bool>* stop = nullptr);

}  // namespace kgsynth
