#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgsynth/codec.hpp"
#include "kgsynth/constraint.hpp"
#include "kgsynth/tokenizer.hpp"

namespace kgsynth {

// Next-token model. One call scores every live beam; each row holds a
// log-probability for every vocabulary id (end-of-sequence included).
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<std::vector<double>> score_next(
      std::string_view context,
      std::span<const std::vector<TokenId>> prefixes) = 0;
};

// Same log-probability for every token.
class UniformScorer final : public Scorer {
 public:
  explicit UniformScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {}
  std::vector<std::vector<double>> score_next(
      std::string_view context,
      std::span<const std::vector<TokenId>> prefixes) override;

 private:
  std::size_t vocab_size_;
};

// Adapts a per-prefix callback.
class CallbackScorer final : public Scorer {
 public:
  using Fn = std::function<std::vector<double>(std::string_view,
                                               const std::vector<TokenId>&)>;
  explicit CallbackScorer(Fn fn) : fn_(std::move(fn)) {}
  std::vector<std::vector<double>> score_next(
      std::string_view context,
      std::span<const std::vector<TokenId>> prefixes) override;

 private:
  Fn fn_;
};

struct DecodeParams {
  std::size_t num_beams = 10;
  double length_penalty = 0.8;
  std::size_t max_length = 256;
  std::size_t top_k_returned = 1;

  // 10 beams; length penalty 0.8 for fe, 0.6 for sc.
  static DecodeParams defaults_for(Linearization variant);
  void validate() const;
};

struct DecodedSequence {
  std::vector<TokenId> tokens;  // without the end-of-sequence token
  double log_prob = 0;          // sum over emitted tokens, eos included
  double score = 0;             // log_prob / length^length_penalty
  bool truncated = false;       // stopped by max_length before finishing
};

// Beam search whose expansions are restricted to the automaton's allowed
// tokens. Candidates tie-break on token id, then beam order.
std::vector<DecodedSequence> constrained_beam_search(
    Scorer& scorer, std::string_view input_context,
    const ConstraintAutomaton& automaton, const DecodeParams& params);

}  // namespace kgsynth
