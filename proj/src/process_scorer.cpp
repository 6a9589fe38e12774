#include "kgsynth/process_scorer.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "kgsynth/error.hpp"

extern char** environ;

namespace kgsynth {

std::string encode_scorer_request(std::string_view context,
                                  const std::vector<TokenId>& prefix) {
  nlohmann::json j;
  j["context"] = context;
  j["prefix_tokens"] = prefix;
  return j.dump();
}

std::vector<double> decode_scorer_response(std::string_view line,
                                           std::size_t vocab_size) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("logprobs") ||
      !j["logprobs"].is_array()) {
    throw Error("malformed scorer response: " + std::string(line.substr(0, 200)));
  }
  std::vector<double> out;
  out.reserve(vocab_size);
  for (const auto& v : j["logprobs"]) {
    if (!v.is_number()) throw Error("scorer response holds a non-number");
    out.push_back(v.get<double>());
  }
  if (out.size() != vocab_size) {
    throw Error("scorer returned " + std::to_string(out.size()) +
                " logprobs, expected " + std::to_string(vocab_size));
  }
  for (double x : out) {
    if (std::isnan(x)) throw Error("scorer returned NaN");
  }
  return out;
}

ProcessScorer::ProcessScorer(const std::string& command,
                             std::size_t vocab_size)
    : vocab_size_(vocab_size) {
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0) throw Error("pipe() failed");
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw Error("pipe() failed");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);

  const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
  int rc = posix_spawn(&pid_, "/bin/sh", &actions, nullptr,
                       const_cast<char* const*>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_pipe[0]);
  close(out_pipe[1]);
  if (rc != 0) {
    close(in_pipe[1]);
    close(out_pipe[0]);
    throw Error("cannot start scorer process: " + command);
  }
  to_child_ = fdopen(in_pipe[1], "w");
  from_child_ = fdopen(out_pipe[0], "r");
  // A dead child must surface as an error, not kill us.
  signal(SIGPIPE, SIG_IGN);
}

ProcessScorer::~ProcessScorer() {
  if (to_child_) std::fclose(to_child_);
  if (from_child_) std::fclose(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

std::vector<double> ProcessScorer::request(std::string_view context,
                                           const std::vector<TokenId>& prefix) {
  std::string line = encode_scorer_request(context, prefix);
  line.push_back('\n');
  if (std::fwrite(line.data(), 1, line.size(), to_child_) != line.size() ||
      std::fflush(to_child_) != 0) {
    throw Error("scorer process closed its input");
  }
  std::string response;
  char buf[8192];
  while (std::fgets(buf, sizeof buf, from_child_)) {
    response += buf;
    if (!response.empty() && response.back() == '\n') break;
  }
  if (response.empty()) throw Error("scorer process exited without answering");
  return decode_scorer_response(response, vocab_size_);
}

std::vector<std::vector<double>> ProcessScorer::score_next(
    std::string_view context, std::span<const std::vector<TokenId>> prefixes) {
  std::vector<std::vector<double>> out;
  out.reserve(prefixes.size());
  for (const auto& p : prefixes) out.push_back(request(context, p));
  return out;
}

}  // namespace kgsynth
