#include "kgsynth/textgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "kgsynth/jsonl.hpp"
#include "text_util.hpp"

namespace kgsynth {

using nlohmann::json;

GenerationParams GenerationParams::preset(std::string_view name) {
  GenerationParams p;
  if (name == "code") return p;
  if (name == "text") {
    p.max_tokens = 50;
    p.best_of = 1;
    return p;
  }
  throw ValidationError("unknown generation preset '" + std::string(name) +
                        "' (expected code or text)");
}

void GenerationParams::validate() const {
  if (max_tokens == 0) throw ValidationError("max_tokens must be positive");
  if (!(temperature >= 0)) throw ValidationError("temperature must be >= 0");
  if (!(top_p > 0 && top_p <= 1)) {
    throw ValidationError("top_p must lie in (0, 1]");
  }
  if (n < 1 || best_of < n) {
    throw ValidationError("need best_of >= n >= 1");
  }
}

std::string render_triplets(std::span<const LabeledTriplet> triplets) {
  std::string out;
  for (const auto& t : triplets) {
    if (!out.empty()) out += ' ';
    out += '(' + t.subject + "; " + t.relation + "; " + t.object + ')';
  }
  return out;
}

namespace {

std::size_t count_of(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string fill(std::string_view format, std::string_view slot,
                 std::string_view value) {
  std::string out(format);
  const auto pos = out.find(slot);
  out.replace(pos, slot.size(), value);
  return out;
}

}  // namespace

void PromptTemplate::validate() const {
  if (count_of(demonstration_format, kTripletsSlot) != 1) {
    throw ValidationError(
        "demonstration_format must contain {triplets} exactly once");
  }
  if (count_of(demonstration_format, kTextSlot) != 1) {
    throw ValidationError("demonstration_format must contain {text} exactly once");
  }
  if (demonstration_format.find(kTripletsSlot) >
      demonstration_format.find(kTextSlot)) {
    throw ValidationError("{triplets} must come before {text}");
  }
}

PromptTemplate PromptTemplate::from_json(const json& j) {
  PromptTemplate t;
  t.instruction = j.value("instruction", std::string{});
  t.demonstration_format =
      j.value("demonstration_format", t.demonstration_format);
  t.separator = j.value("separator", t.separator);
  t.num_demonstrations = j.value("num_demonstrations", std::size_t{0});
  t.validate();
  return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& file) {
  auto in = detail::open_input(file);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError(file.string() + ": not a JSON object");
  }
  return from_json(j);
}

std::string build_prompt(std::span<const LabeledTriplet> query,
                         const PromptTemplate& tmpl,
                         std::span<const Demonstration> demonstrations) {
  tmpl.validate();
  if (demonstrations.size() != tmpl.num_demonstrations) {
    throw ValidationError("template expects " +
                          std::to_string(tmpl.num_demonstrations) +
                          " demonstrations, got " +
                          std::to_string(demonstrations.size()));
  }
  std::string out = tmpl.instruction;
  auto append_block = [&](const std::string& block) {
    if (!out.empty()) out += tmpl.separator;
    out += block;
  };
  for (const auto& d : demonstrations) {
    std::string block =
        fill(tmpl.demonstration_format, PromptTemplate::kTripletsSlot,
             render_triplets(d.triplets));
    append_block(fill(block, PromptTemplate::kTextSlot, d.text));
  }
  std::string query_block =
      fill(tmpl.demonstration_format, PromptTemplate::kTripletsSlot,
           render_triplets(query));
  query_block.resize(query_block.find(PromptTemplate::kTextSlot));
  append_block(query_block);
  return out;
}

std::vector<Demonstration> load_demonstrations(
    const std::filesystem::path& file) {
  auto in = detail::open_input(file);
  std::vector<Demonstration> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto where = [&] { return file.string() + ":" + std::to_string(lineno); };
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("triplets") || !j.contains("text")) {
      throw ValidationError(where() + ": expected {\"triplets\", \"text\"}");
    }
    Demonstration d;
    d.text = j["text"].get<std::string>();
    try {
      for (const auto& t : j["triplets"]) {
        d.triplets.push_back(triplet_from_json(t));
      }
    } catch (const ValidationError& e) {
      throw ValidationError(where() + ": " + e.what());
    }
    out.push_back(std::move(d));
  }
  return out;
}

double estimate_cost(std::uint64_t tokens, double price_per_1k) {
  if (price_per_1k < 0) throw ValidationError("price must be non-negative");
  return static_cast<double>(tokens) / 1000.0 * price_per_1k;
}

std::uint64_t estimate_tokens(std::string_view text) {
  return (text.size() + 3) / 4;
}

CostLedger::CostLedger(double price_per_1k) : price_(price_per_1k) {
  if (price_per_1k < 0) throw ValidationError("price must be non-negative");
}

json GenerationRecord::to_json() const {
  return json{{"set_id", set_id},
              {"status", status == RecordStatus::kOk ? "ok" : "failed"},
              {"prompt", prompt},
              {"completion", completion},
              {"finish_reason", finish_reason},
              {"token_counts",
               {{"prompt", prompt_tokens},
                {"completion", completion_tokens},
                {"total", total_tokens}}},
              {"timestamp", timestamp},
              {"attempts", attempts},
              {"error", error}};
}

GenerationRecord GenerationRecord::from_json(const json& j) {
  GenerationRecord r;
  r.set_id = j.at("set_id").get<std::string>();
  r.status = j.value("status", "failed") == "ok" ? RecordStatus::kOk
                                                 : RecordStatus::kFailed;
  r.prompt = j.value("prompt", "");
  r.completion = j.value("completion", "");
  r.finish_reason = j.value("finish_reason", "");
  if (j.contains("token_counts")) {
    const auto& c = j["token_counts"];
    r.prompt_tokens = c.value("prompt", std::uint64_t{0});
    r.completion_tokens = c.value("completion", std::uint64_t{0});
    r.total_tokens = c.value("total", std::uint64_t{0});
  }
  r.timestamp = j.value("timestamp", 0.0);
  r.attempts = j.value("attempts", 0u);
  r.error = j.value("error", "");
  return r;
}

std::string completion_request_body(const std::string& model,
                                    const std::string& prompt,
                                    const GenerationParams& p) {
  return json{{"model", model},
              {"prompt", prompt},
              {"max_tokens", p.max_tokens},
              {"temperature", p.temperature},
              {"top_p", p.top_p},
              {"frequency_penalty", p.frequency_penalty},
              {"presence_penalty", p.presence_penalty},
              {"stop", p.stop},
              {"n", p.n},
              {"best_of", p.best_of}}
      .dump();
}

namespace {

// Parses `path` line by line; a final line without its newline is reported
// through `complete_bytes` so the caller can cut it off.
std::vector<GenerationRecord> scan_records(const std::filesystem::path& path,
                                           std::uintmax_t* complete_bytes) {
  std::vector<GenerationRecord> out;
  std::ifstream in(path, std::ios::binary);
  std::uintmax_t good = 0;
  std::string line;
  while (std::getline(in, line)) {
    const bool has_newline = !in.eof();
    if (!has_newline) break;
    good += line.size() + 1;
    if (detail::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("set_id")) {
      throw ValidationError(path.string() + ": corrupt record at byte " +
                            std::to_string(good - line.size() - 1));
    }
    out.push_back(GenerationRecord::from_json(j));
  }
  if (complete_bytes) *complete_bytes = good;
  return out;
}

}  // namespace

RecordLog::RecordLog(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    std::uintmax_t good = 0;
    for (const auto& r : scan_records(path_, &good)) {
      if (r.status == RecordStatus::kOk) completed_.insert(r.set_id);
    }
    if (good != std::filesystem::file_size(path_)) {
      std::filesystem::resize_file(path_, good);
    }
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_ = std::fopen(path_.c_str(), "ab");
  if (!out_) throw Error("cannot open " + path_.string() + " for appending");
}

RecordLog::~RecordLog() {
  if (out_) std::fclose(out_);
}

void RecordLog::append(const GenerationRecord& record) {
  const std::string line = record.to_json().dump() + "\n";
  std::lock_guard lock(mu_);
  if (std::fwrite(line.data(), 1, line.size(), out_) != line.size() ||
      std::fflush(out_) != 0) {
    throw Error("write to " + path_.string() + " failed");
  }
  if (record.status == RecordStatus::kOk) completed_.insert(record.set_id);
}

std::vector<GenerationRecord> RecordLog::read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("no such file: " + path.string());
  }
  std::vector<GenerationRecord> ordered;
  std::unordered_map<std::string, std::size_t> where;
  for (auto& r : scan_records(path, nullptr)) {
    auto [it, inserted] = where.try_emplace(r.set_id, ordered.size());
    if (inserted) {
      ordered.push_back(std::move(r));
    } else {
      ordered[it->second] = std::move(r);
    }
  }
  return ordered;
}

namespace {

bool retryable(int status) { return status == 429 || status >= 500; }

struct Outcome {
  GenerationRecord record;
  std::uint64_t requests = 0;
};

Outcome run_job(const PromptJob& job, std::size_t job_index,
                const GenerateOptions& options, Transport& transport,
                RateLimiter& limiter, Clock& clock, CostLedger& ledger) {
  const auto& params = options.params;
  const std::string body =
      completion_request_body(options.model, job.prompt, params);
  const std::uint64_t reserve =
      estimate_tokens(job.prompt) +
      std::uint64_t{params.max_tokens} * std::max(params.n, params.best_of);

  std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                    static_cast<std::uint32_t>(options.seed >> 32),
                    static_cast<std::uint32_t>(job_index),
                    static_cast<std::uint32_t>(job_index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> jitter(1.0, 1.5);

  Outcome out;
  GenerationRecord& rec = out.record;
  rec.set_id = job.set_id;
  rec.prompt = job.prompt;
  rec.status = RecordStatus::kFailed;

  for (std::uint32_t attempt = 1; attempt <= options.retry.max_attempts;
       ++attempt) {
    rec.attempts = attempt;
    const auto admission = limiter.acquire(reserve);
    ++out.requests;
    ledger.record_request();

    std::optional<double> retry_after;
    try {
      HttpResponse resp = transport.post(body);
      retry_after = resp.retry_after_seconds;
      if (resp.status == 200) {
        json j = json::parse(resp.body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") ||
            !j["choices"].is_array() || j["choices"].empty() ||
            !j["choices"][0].contains("text") ||
            !j["choices"][0]["text"].is_string()) {
          rec.error = "malformed response";
          limiter.settle(admission, 0);
          break;
        }
        const auto& choice = j["choices"][0];
        rec.completion = choice["text"].get<std::string>();
        if (!params.stop.empty()) {
          const auto cut = rec.completion.find(params.stop);
          if (cut != std::string::npos) rec.completion.resize(cut);
        }
        if (choice.contains("finish_reason") &&
            choice["finish_reason"].is_string()) {
          rec.finish_reason = choice["finish_reason"].get<std::string>();
        }
        if (j.contains("usage") && j["usage"].is_object()) {
          const auto& u = j["usage"];
          rec.prompt_tokens = u.value("prompt_tokens", std::uint64_t{0});
          rec.completion_tokens = u.value("completion_tokens", std::uint64_t{0});
          rec.total_tokens = u.value("total_tokens",
                                     rec.prompt_tokens + rec.completion_tokens);
          limiter.settle(admission, rec.total_tokens);
        } else {
          rec.prompt_tokens = estimate_tokens(job.prompt);
          std::uint64_t completion_chars = 0;
          for (const auto& c : j["choices"]) {
            if (c.contains("text") && c["text"].is_string()) {
              completion_chars += c["text"].get<std::string>().size();
            }
          }
          rec.completion_tokens = (completion_chars + 3) / 4;
          rec.total_tokens = rec.prompt_tokens + rec.completion_tokens;
        }
        ledger.record_tokens(rec.total_tokens);
        rec.status = RecordStatus::kOk;
        rec.error.clear();
        break;
      }
      limiter.settle(admission, 0);
      rec.error = "HTTP " + std::to_string(resp.status);
      if (!retryable(resp.status)) break;
    } catch (const TransportError& e) {
      rec.error = e.what();
    }
    if (attempt == options.retry.max_attempts) break;

    const double base =
        std::chrono::duration<double>(options.retry.initial_backoff).count() *
        std::pow(2.0, attempt - 1);
    double delay = std::min(
        base, std::chrono::duration<double>(options.retry.max_backoff).count());
    delay *= jitter(rng);
    if (retry_after) delay = std::max(delay, *retry_after);
    clock.sleep_for(std::chrono::duration_cast<Nanos>(
        std::chrono::duration<double>(delay)));
  }
  if (rec.status == RecordStatus::kFailed &&
      rec.attempts == options.retry.max_attempts) {
    rec.error = "gave up after " + std::to_string(rec.attempts) +
                " attempts: " + rec.error;
  }
  rec.timestamp = clock.wall_seconds();
  return out;
}

}  // namespace

GenerateSummary generate(std::span<const PromptJob> jobs,
                         const GenerateOptions& options, Transport& transport,
                         RateLimiter& limiter, Clock& clock, RecordLog& log,
                         const std::atomic<bool>* stop) {
  options.params.validate();
  if (options.retry.max_attempts == 0) {
    throw ValidationError("max_attempts must be at least 1");
  }
  const auto done_before = log.completed();
  std::vector<std::size_t> pending;
  GenerateSummary summary;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (done_before.count(jobs[i].set_id)) {
      ++summary.skipped;
    } else {
      pending.push_back(i);
    }
  }

  CostLedger ledger(options.price_per_1k);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> ok{0}, failed{0};
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (;;) {
      if (stop && stop->load()) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const std::size_t i = pending[k];
      try {
        auto outcome =
            run_job(jobs[i], i, options, transport, limiter, clock, ledger);
        log.append(outcome.record);
        (outcome.record.status == RecordStatus::kOk ? ok : failed)++;
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const unsigned n_workers = std::max(
      1u, std::min<unsigned>(options.concurrency,
                             static_cast<unsigned>(pending.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  summary.ok = ok;
  summary.failed = failed;
  summary.requests = ledger.requests_sent();
  summary.tokens = ledger.tokens_consumed();
  summary.cost = ledger.cost();
  summary.stopped = stop && stop->load() && next.load() < pending.size();
  return summary;
}

}  // namespace kgsynth
