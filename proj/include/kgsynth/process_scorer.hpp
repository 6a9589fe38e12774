#pragma once

#include <cstdio>
#include <string>
#include <sys/types.h>

#include "kgsynth/beam_search.hpp"

namespace kgsynth {

// Scorer served by a child process over newline-delimited JSON on its
// stdin/stdout. Each request is
//   {"context": "...", "prefix_tokens": [..]}
// and must be answered by one line
//   {"logprobs": [..]}   (one value per vocabulary id)
class ProcessScorer final : public Scorer {
 public:
  // Runs `command` through /bin/sh -c.
  ProcessScorer(const std::string& command, std::size_t vocab_size);
  ~ProcessScorer() override;
  ProcessScorer(const ProcessScorer&) = delete;
  ProcessScorer& operator=(const ProcessScorer&) = delete;

  std::vector<std::vector<double>> score_next(
      std::string_view context,
      std::span<const std::vector<TokenId>> prefixes) override;

 private:
  std::vector<double> request(std::string_view context,
                              const std::vector<TokenId>& prefix);

  std::size_t vocab_size_;
  pid_t pid_ = -1;
  std::FILE* to_child_ = nullptr;
  std::FILE* from_child_ = nullptr;
};

// Request/response codec of the scorer protocol, shared with tests.
std::string encode_scorer_request(std::string_view context,
                                  const std::vector<TokenId>& prefix);
std::vector<double> decode_scorer_response(std::string_view line,
                                           std::size_t vocab_size);

}  // namespace kgsynth
