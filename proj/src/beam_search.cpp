#include "kgsynth/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kgsynth/error.hpp"

namespace kgsynth {

std::vector<std::vector<double>> UniformScorer::score_next(
    std::string_view, std::span<const std::vector<TokenId>> prefixes) {
  const double lp = -std::log(static_cast<double>(vocab_size_));
  return std::vector<std::vector<double>>(
      prefixes.size(), std::vector<double>(vocab_size_, lp));
}

std::vector<std::vector<double>> CallbackScorer::score_next(
    std::string_view context, std::span<const std::vector<TokenId>> prefixes) {
  std::vector<std::vector<double>> out;
  out.reserve(prefixes.size());
  for (const auto& p : prefixes) out.push_back(fn_(context, p));
  return out;
}

DecodeParams DecodeParams::defaults_for(Linearization variant) {
  DecodeParams p;
  p.length_penalty = variant == Linearization::kFullyExpanded ? 0.8 : 0.6;
  return p;
}

void DecodeParams::validate() const {
  if (num_beams == 0) throw ValidationError("num_beams must be at least 1");
  if (top_k_returned == 0 || top_k_returned > num_beams) {
    throw ValidationError("top_k_returned must lie in [1, num_beams]");
  }
  if (max_length == 0) throw ValidationError("max_length must be positive");
  if (!std::isfinite(length_penalty)) {
    throw ValidationError("length_penalty must be finite");
  }
}

namespace {

struct Beam {
  std::vector<TokenId> tokens;
  double log_prob = 0;
  ConstraintState state;
};

struct Candidate {
  double log_prob;
  TokenId token;
  std::size_t beam;
};

double normalized(double log_prob, std::size_t length, double penalty) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)),
                             penalty);
}

bool better(const DecodedSequence& a, const DecodedSequence& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<DecodedSequence> constrained_beam_search(
    Scorer& scorer, std::string_view input_context,
    const ConstraintAutomaton& automaton, const DecodeParams& params) {
  params.validate();
  const auto vocab = automaton.tokenizer().vocab_size();
  const TokenId eos = automaton.tokenizer().eos();

  std::vector<Beam> live;
  live.push_back(Beam{{}, 0.0, automaton.start()});
  std::vector<DecodedSequence> finished;

  for (std::size_t step = 0; step < params.max_length && !live.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& b : live) prefixes.push_back(b.tokens);
    const auto scores = scorer.score_next(input_context, prefixes);
    if (scores.size() != live.size()) {
      throw Error("scorer returned " + std::to_string(scores.size()) +
                  " rows for " + std::to_string(live.size()) + " beams");
    }

    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < live.size(); ++b) {
      if (scores[b].size() != vocab) {
        throw Error("scorer row has " + std::to_string(scores[b].size()) +
                    " entries, vocabulary has " + std::to_string(vocab));
      }
      auto allowed = automaton.allowed_next(live[b].state);
      auto push = [&](TokenId t) {
        const double lp = scores[b][static_cast<std::size_t>(t)];
        if (std::isnan(lp)) throw Error("scorer returned NaN");
        candidates.push_back({live[b].log_prob + lp, t, b});
      };
      for (TokenId t : allowed.tokens) push(t);
      if (allowed.end_of_sequence) push(eos);
    }
    // Ties go to end-of-sequence first, then to lower token ids.
    std::sort(candidates.begin(), candidates.end(),
              [eos](const Candidate& a, const Candidate& b) {
                if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                if ((a.token == eos) != (b.token == eos)) return a.token == eos;
                if (a.token != b.token) return a.token < b.token;
                return a.beam < b.beam;
              });

    std::vector<Beam> next;
    for (std::size_t rank = 0;
         rank < candidates.size() && next.size() < params.num_beams; ++rank) {
      const auto& c = candidates[rank];
      const Beam& parent = live[c.beam];
      if (c.token == eos) {
        // Only end-of-sequence candidates inside the top num_beams finish.
        if (rank >= params.num_beams) continue;
        finished.push_back(DecodedSequence{
            parent.tokens, c.log_prob,
            normalized(c.log_prob, parent.tokens.size() + 1,
                       params.length_penalty),
            false});
        continue;
      }
      Beam child{parent.tokens, c.log_prob,
                 automaton.advance(parent.state, c.token)};
      child.tokens.push_back(c.token);
      next.push_back(std::move(child));
    }
    std::sort(finished.begin(), finished.end(), better);
    if (finished.size() > params.num_beams) finished.resize(params.num_beams);
    live = std::move(next);

    if (finished.size() >= params.num_beams && !live.empty()) {
      const double best_live = normalized(
          live.front().log_prob, live.front().tokens.size(),
          params.length_penalty);
      if (best_live <= finished.back().score) break;
    }
  }

  if (finished.empty()) {
    for (const auto& b : live) {
      finished.push_back(DecodedSequence{
          b.tokens, b.log_prob,
          normalized(b.log_prob, b.tokens.size(), params.length_penalty),
          true});
    }
    std::sort(finished.begin(), finished.end(), better);
  }
  if (finished.size() > params.top_k_returned) {
    finished.resize(params.top_k_returned);
  }
  return finished;
}

}  // namespace kgsynth
