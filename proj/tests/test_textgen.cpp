#include <gtest/gtest.h>

#include <cstdlib>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "kgsynth/error.hpp"
#include "kgsynth/rate_limiter.hpp"
#include "kgsynth/textgen.hpp"
#include "support.hpp"

using namespace kgsynth;
using kgsynth::testing::read_file;
using kgsynth::testing::TempDir;
using kgsynth::testing::write_file;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

// Thread-safe scripted endpoint.
class FakeTransport : public Transport {
 public:
  using Handler = std::function<HttpResponse(const json& request, int call)>;
  explicit FakeTransport(Handler h) : handler_(std::move(h)) {}

  HttpResponse post(const std::string& body) override {
    json request = json::parse(body);
    int call;
    {
      std::lock_guard lock(mu_);
      call = calls_[request["prompt"].get<std::string>()]++;
      ++total_;
    }
    return handler_(request, call);
  }

  int calls(const std::string& prompt) {
    std::lock_guard lock(mu_);
    return calls_[prompt];
  }
  int total() {
    std::lock_guard lock(mu_);
    return total_;
  }

 private:
  Handler handler_;
  std::mutex mu_;
  std::map<std::string, int> calls_;
  int total_ = 0;
};

HttpResponse ok_response(const std::string& text, std::uint64_t prompt_tokens = 10,
                         std::uint64_t completion_tokens = 5) {
  json j{{"choices", {{{"text", text}, {"finish_reason", "stop"}}}},
         {"usage",
          {{"prompt_tokens", prompt_tokens},
           {"completion_tokens", completion_tokens},
           {"total_tokens", prompt_tokens + completion_tokens}}}};
  return {200, j.dump(), std::nullopt};
}

std::vector<PromptJob> make_jobs(std::size_t n) {
  std::vector<PromptJob> jobs;
  for (std::size_t i = 0; i < n; ++i) {
    jobs.push_back({"set-" + std::to_string(i), "prompt " + std::to_string(i)});
  }
  return jobs;
}

GenerateOptions fast_options() {
  GenerateOptions o;
  o.model = "test-model";
  o.params = GenerationParams::preset("text");
  o.concurrency = 4;
  return o;
}

}  // namespace

TEST(Params, CodePreset) {
  auto p = GenerationParams::preset("code");
  EXPECT_EQ(p.max_tokens, 100u);
  EXPECT_DOUBLE_EQ(p.temperature, 0.7);
  EXPECT_DOUBLE_EQ(p.top_p, 1.0);
  EXPECT_DOUBLE_EQ(p.frequency_penalty, 0.2);
  EXPECT_DOUBLE_EQ(p.presence_penalty, 0.0);
  EXPECT_EQ(p.stop, "\n");
  EXPECT_EQ(p.n, 1u);
  EXPECT_EQ(p.best_of, 5u);
}

TEST(Params, TextPreset) {
  auto p = GenerationParams::preset("text");
  EXPECT_EQ(p.max_tokens, 50u);
  EXPECT_EQ(p.best_of, 1u);
  EXPECT_DOUBLE_EQ(p.temperature, 0.7);
  EXPECT_DOUBLE_EQ(p.frequency_penalty, 0.2);
  EXPECT_EQ(p.stop, "\n");
  EXPECT_THROW(GenerationParams::preset("other"), ValidationError);
}

TEST(Params, Validation) {
  GenerationParams p;
  p.top_p = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.n = 3;
  p.best_of = 2;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.temperature = -0.1;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Params, RequestBodyFields) {
  auto body = json::parse(
      completion_request_body("m", "hello", GenerationParams::preset("code")));
  for (const char* key : {"model", "prompt", "max_tokens", "temperature", "top_p",
                          "frequency_penalty", "presence_penalty", "stop", "n",
                          "best_of"}) {
    EXPECT_TRUE(body.contains(key)) << key;
  }
  EXPECT_EQ(body["best_of"], 5);
  EXPECT_EQ(body["stop"], "\n");
}

TEST(Prompt, ZeroShot) {
  PromptTemplate t;
  t.instruction = "Write a sentence.";
  std::vector<LabeledTriplet> q{{"Ann", "knows", "Bo"}};
  EXPECT_EQ(build_prompt(q, t, {}),
            "Write a sentence.\n\ntriplets: (Ann; knows; Bo)\ntext: ");
}

TEST(Prompt, DemonstrationsInOrderAndDeterministic) {
  PromptTemplate t;
  t.instruction = "I";
  t.num_demonstrations = 3;
  std::vector<Demonstration> demos{
      {{{"A", "r", "B"}}, "first"}, {{{"C", "r", "D"}}, "second"},
      {{{"E", "r", "F"}, {"E", "s", "G"}}, "third"}};
  std::vector<LabeledTriplet> q{{"X", "r", "Y"}};
  auto prompt = build_prompt(q, t, demos);
  EXPECT_EQ(prompt, build_prompt(q, t, demos));
  EXPECT_EQ(prompt,
            "I\n\ntriplets: (A; r; B)\ntext: first\n\n"
            "triplets: (C; r; D)\ntext: second\n\n"
            "triplets: (E; r; F) (E; s; G)\ntext: third\n\n"
            "triplets: (X; r; Y)\ntext: ");
}

TEST(Prompt, Errors) {
  PromptTemplate t;
  t.demonstration_format = "no slot here {text}";
  EXPECT_THROW(t.validate(), ValidationError);
  t.demonstration_format = "{triplets} {triplets} {text}";
  EXPECT_THROW(t.validate(), ValidationError);
  t.demonstration_format = "{text} {triplets}";
  EXPECT_THROW(t.validate(), ValidationError);
  PromptTemplate ok;
  ok.num_demonstrations = 2;
  std::vector<LabeledTriplet> q{{"X", "r", "Y"}};
  EXPECT_THROW(build_prompt(q, ok, {}), ValidationError);
}

TEST(Prompt, LoadTemplateAndDemonstrations) {
  TempDir dir;
  write_file(dir / "t.json",
             R"({"instruction": "Go", "num_demonstrations": 1, "separator": "\n"})");
  write_file(dir / "d.jsonl",
             R"({"triplets": [{"s": "A", "r": "r", "o": "B"}], "text": "A r B."})"
             "\n\n");
  auto t = PromptTemplate::load(dir / "t.json");
  auto d = load_demonstrations(dir / "d.jsonl");
  ASSERT_EQ(d.size(), 1u);
  std::vector<LabeledTriplet> q{{"X", "r", "Y"}};
  EXPECT_EQ(build_prompt(q, t, d),
            "Go\ntriplets: (A; r; B)\ntext: A r B.\ntriplets: (X; r; Y)\ntext: ");
  write_file(dir / "bad.jsonl", "{\"text\": 1}\n");
  EXPECT_THROW(load_demonstrations(dir / "bad.jsonl"), ValidationError);
}

TEST(Cost, Examples) {
  EXPECT_DOUBLE_EQ(estimate_cost(1000, 0.02), 0.02);
  EXPECT_DOUBLE_EQ(estimate_cost(0, 0.02), 0.0);
  EXPECT_NEAR(estimate_cost(11177500, 0.02), 223.55, 1e-9);
  EXPECT_THROW(estimate_cost(1, -1), ValidationError);
  CostLedger ledger(0.02);
  ledger.record_tokens(500);
  ledger.record_tokens(1500);
  ledger.record_request();
  EXPECT_DOUBLE_EQ(ledger.cost(), 0.04);
  EXPECT_EQ(ledger.requests_sent(), 1u);
}

TEST(Cost, TokenEstimateRoundsUp) {
  EXPECT_EQ(estimate_tokens(""), 0u);
  EXPECT_EQ(estimate_tokens("abc"), 1u);
  EXPECT_EQ(estimate_tokens("abcd"), 1u);
  EXPECT_EQ(estimate_tokens("abcde"), 2u);
}

TEST(RateLimiter, RequestBudgetPerWindow) {
  SimulatedClock clock;
  RateLimiter limiter({3, 1000, 60s}, clock);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(limiter.acquire(10).at, Nanos{0});
  // Fourth waits for the first admission to leave the window.
  EXPECT_EQ(limiter.acquire(10).at, Nanos{60s});
}

TEST(RateLimiter, TokenBudgetAndSettle) {
  SimulatedClock clock;
  RateLimiter limiter({100, 1000, 60s}, clock);
  auto a = limiter.acquire(800);
  clock.advance(1s);
  // 800 + 300 exceeds the budget until `a` settles at its real usage.
  limiter.settle(a, 100);
  EXPECT_EQ(limiter.acquire(300).at, Nanos{1s});
  EXPECT_EQ(limiter.acquire(600).at, Nanos{1s});
  // Dropping `a` at 60 s frees only 100; the 300 leaves at 61 s.
  EXPECT_EQ(limiter.acquire(200).at, Nanos{61s});
  EXPECT_THROW(limiter.acquire(1001), ValidationError);
}

TEST(RateLimiter, SlidingWindowPropertyUnderThreads) {
  SimulatedClock clock;
  const RateLimits limits{20, 150000, 60s};
  RateLimiter limiter(limits, clock);
  std::vector<std::jthread> threads;
  for (int w = 0; w < 6; ++w) {
    threads.emplace_back([&, w] {
      std::mt19937_64 rng(w);
      for (int i = 0; i < 40; ++i) {
        auto a = limiter.acquire(1000 + rng() % 9000);
        limiter.settle(a, rng() % (a.tokens + 1));
        clock.advance(Nanos{static_cast<std::int64_t>(rng() % 2'000'000'000)});
      }
    });
  }
  threads.clear();
  auto h = limiter.history();
  ASSERT_EQ(h.size(), 240u);
  std::sort(h.begin(), h.end(),
            [](const auto& x, const auto& y) { return x.at < y.at; });
  for (std::size_t i = 0; i < h.size(); ++i) {
    std::uint64_t requests = 0, tokens = 0;
    for (std::size_t j = i; j < h.size() && h[j].at < h[i].at + limits.window; ++j) {
      ++requests;
      tokens += h[j].tokens;
    }
    EXPECT_LE(requests, limits.requests_per_window);
    EXPECT_LE(tokens, limits.tokens_per_window);
  }
}

TEST(RecordLog, TruncatesPartialLineAndTracksCompleted) {
  TempDir dir;
  const auto path = dir / "gen.jsonl";
  {
    RecordLog log(path);
    GenerationRecord a;
    a.set_id = "a";
    a.completion = "done";
    log.append(a);
    GenerationRecord b;
    b.set_id = "b";
    b.status = RecordStatus::kFailed;
    log.append(b);
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"set_id": "c", "status": "o)";
  }
  RecordLog reopened(path);
  EXPECT_EQ(reopened.completed(), (std::unordered_set<std::string>{"a"}));
  auto text = read_file(path);
  EXPECT_EQ(text.back(), '\n');
  EXPECT_EQ(text.find("\"c\""), std::string::npos);
  auto records = RecordLog::read(path);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].completion, "done");
}

TEST(RecordLog, RoundTripsFields) {
  GenerationRecord r;
  r.set_id = "x";
  r.prompt = "p";
  r.completion = "c";
  r.finish_reason = "length";
  r.prompt_tokens = 3;
  r.completion_tokens = 4;
  r.total_tokens = 7;
  r.attempts = 2;
  auto j = r.to_json();
  EXPECT_EQ(j["token_counts"]["total"], 7);
  auto back = GenerationRecord::from_json(j);
  EXPECT_EQ(back.finish_reason, "length");
  EXPECT_EQ(back.total_tokens, 7u);
  EXPECT_EQ(back.attempts, 2u);
  EXPECT_EQ(back.status, RecordStatus::kOk);
}

TEST(Generate, EchoEndpointAnswersEveryPrompt) {
  TempDir dir;
  SimulatedClock clock;
  RateLimiter limiter({20, 150000, 60s}, clock);
  FakeTransport transport([](const json& req, int) {
    return ok_response("echo: " + req["prompt"].get<std::string>());
  });
  RecordLog log(dir / "gen.jsonl");
  auto jobs = make_jobs(100);
  auto summary = generate(jobs, fast_options(), transport, limiter, clock, log);
  EXPECT_EQ(summary.ok, 100u);
  EXPECT_EQ(summary.failed, 0u);
  EXPECT_EQ(summary.requests, 100u);
  EXPECT_EQ(summary.tokens, 1500u);
  auto records = RecordLog::read(dir / "gen.jsonl");
  ASSERT_EQ(records.size(), 100u);
  std::set<std::string> ids;
  for (const auto& r : records) {
    ids.insert(r.set_id);
    EXPECT_EQ(r.completion, "echo: " + r.prompt);
  }
  EXPECT_EQ(ids.size(), 100u);
  // 100 requests at 20 per minute need at least four window rollovers.
  EXPECT_GE(clock.now(), Nanos{4min});
}

TEST(Generate, CutsAtStopString) {
  TempDir dir;
  SimulatedClock clock;
  RateLimiter limiter({20, 150000, 60s}, clock);
  FakeTransport transport([](const json&, int) {
    return ok_response("first line\nsecond line");
  });
  RecordLog log(dir / "gen.jsonl");
  auto jobs = make_jobs(1);
  generate(jobs, fast_options(), transport, limiter, clock, log);
  auto records = RecordLog::read(dir / "gen.jsonl");
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].completion, "first line");
}

TEST(Generate, RetriesRateLimitedAndServerErrors) {
  TempDir dir;
  SimulatedClock clock;
  RateLimiter limiter({20, 150000, 60s}, clock);
  FakeTransport transport([](const json&, int call) -> HttpResponse {
    if (call == 0) return {429, "slow down", 30.0};
    if (call == 1) return {503, "", std::nullopt};
    return ok_response("fine");
  });
  RecordLog log(dir / "gen.jsonl");
  auto jobs = make_jobs(1);
  auto summary = generate(jobs, fast_options(), transport, limiter, clock, log);
  EXPECT_EQ(summary.ok, 1u);
  EXPECT_EQ(summary.requests, 3u);
  auto r = RecordLog::read(dir / "gen.jsonl")[0];
  EXPECT_EQ(r.attempts, 3u);
  // Retry-After 30 s, then 4 s x jitter in [1, 1.5).
  EXPECT_GE(clock.now(), Nanos{34s});
  EXPECT_LT(clock.now(), Nanos{36s});
}

TEST(Generate, ClientErrorsAndMalformedBodiesFailFast) {
  TempDir dir;
  SimulatedClock clock;
  RateLimiter limiter({20, 150000, 60s}, clock);
  FakeTransport transport([](const json& req, int) -> HttpResponse {
    if (req["prompt"] == "prompt 0") return {400, "bad", std::nullopt};
    if (req["prompt"] == "prompt 1") return {200, "{\"nope\": 1}", std::nullopt};
    return {200, "not json", std::nullopt};
  });
  RecordLog log(dir / "gen.jsonl");
  auto jobs = make_jobs(3);
  auto summary = generate(jobs, fast_options(), transport, limiter, clock, log);
  EXPECT_EQ(summary.failed, 3u);
  EXPECT_EQ(transport.total(), 3);
  for (const auto& r : RecordLog::read(dir / "gen.jsonl")) {
    EXPECT_EQ(r.status, RecordStatus::kFailed);
    EXPECT_FALSE(r.error.empty());
  }
}

TEST(Generate, TransportFailuresAreBounded) {
  TempDir dir;
  SimulatedClock clock;
  RateLimiter limiter({20, 150000, 60s}, clock);
  FakeTransport transport([](const json&, int) -> HttpResponse {
    throw TransportError("connection refused");
  });
  RecordLog log(dir / "gen.jsonl");
  auto jobs = make_jobs(2);
  auto summary = generate(jobs, fast_options(), transport, limiter, clock, log);
  EXPECT_EQ(summary.failed, 2u);
  EXPECT_EQ(transport.total(), 10);
  auto r = RecordLog::read(dir / "gen.jsonl")[0];
  EXPECT_EQ(r.attempts, 5u);
  EXPECT_NE(r.error.find("connection refused"), std::string::npos);
}

TEST(Generate, ResumeSkipsCompletedAndRetriesFailed) {
  TempDir dir;
  SimulatedClock clock;
  RateLimiter limiter({20, 150000, 60s}, clock);
  std::atomic<bool> stop{false};
  bool healthy = false;
  FakeTransport transport([&](const json& req, int) -> HttpResponse {
    if (req["prompt"] == "prompt 5") stop = true;
    if (!healthy && req["prompt"] == "prompt 3") return {400, "", std::nullopt};
    return ok_response("ok");
  });
  auto jobs = make_jobs(10);
  {
    RecordLog log(dir / "gen.jsonl");
    auto opts = fast_options();
    opts.concurrency = 1;
    auto s = generate(jobs, opts, transport, limiter, clock, log, &stop);
    EXPECT_TRUE(s.stopped);
    EXPECT_EQ(s.ok, 5u);
    EXPECT_EQ(s.failed, 1u);
  }
  // Simulate a crash mid-write.
  {
    std::ofstream out(dir / "gen.jsonl", std::ios::app);
    out << "{\"set_id\": \"set-6\", \"sta";
  }
  const int sent_before = transport.total();
  healthy = true;
  RecordLog log(dir / "gen.jsonl");
  auto s = generate(jobs, fast_options(), transport, limiter, clock, log);
  EXPECT_EQ(s.skipped, 5u);  // set-0..5 minus the failed set-3
  EXPECT_EQ(s.ok, 5u);
  EXPECT_EQ(transport.total() - sent_before, 5);
  for (int i : {0, 1, 2, 4, 5}) {
    EXPECT_EQ(transport.calls("prompt " + std::to_string(i)), 1) << i;
  }
  auto records = RecordLog::read(dir / "gen.jsonl");
  EXPECT_EQ(records.size(), 10u);
  for (const auto& r : records) EXPECT_EQ(r.status, RecordStatus::kOk);
}

TEST(HttpTransport, CredentialComesFromEnvironment) {
  ::unsetenv(kApiKeyEnv);
  EXPECT_THROW(HttpTransport("http://127.0.0.1:9/v1/completions"), ValidationError);
  ::setenv(kApiKeyEnv, "secret", 1);
  EXPECT_NO_THROW(HttpTransport("http://127.0.0.1:9/v1/completions"));
  EXPECT_THROW(HttpTransport("ftp://host/x"), ValidationError);
  ::unsetenv(kApiKeyEnv);
}

TEST(ShippedTemplates, LoadAndRender) {
  const std::filesystem::path dir = KGSYNTH_DATA_DIR "/templates";
  const auto code = PromptTemplate::load(dir / "code.json");
  const auto text = PromptTemplate::load(dir / "text.json");
  EXPECT_EQ(code.num_demonstrations, 3u);
  EXPECT_EQ(text.num_demonstrations, 0u);
  auto demos = load_demonstrations(dir / "demonstrations.jsonl");
  ASSERT_GE(demos.size(), 3u);
  demos.resize(3);
  const std::vector<LabeledTriplet> query{{"Oslo", "country", "Norway"}};
  const std::string prompt = build_prompt(query, code, demos);
  EXPECT_TRUE(prompt.ends_with("triplets: (Oslo; country; Norway)\ntext: "));
  EXPECT_LT(prompt.find(demos[0].text), prompt.find(demos[2].text));
  EXPECT_EQ(build_prompt(query, text, {}),
            text.instruction + "\n\ntriplets: (Oslo; country; Norway)\ntext: ");
}
