#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <tuple>
#include <unordered_map>

#include "kgsynth/beam_search.hpp"
#include "kgsynth/codec.hpp"
#include "kgsynth/constraint.hpp"
#include "kgsynth/error.hpp"
#include "kgsynth/kgstore.hpp"
#include "kgsynth/metrics.hpp"
#include "kgsynth/pipeline.hpp"
#include "kgsynth/sampler.hpp"
#include "kgsynth/textgen.hpp"
#include "kgsynth/tokenizer.hpp"

namespace py = pybind11;
using namespace kgsynth;

namespace {

using PyTriplet = std::tuple<std::string, std::string, std::string>;

std::vector<LabeledTriplet> from_py(const std::vector<PyTriplet>& ts) {
  std::vector<LabeledTriplet> out;
  out.reserve(ts.size());
  for (const auto& [s, r, o] : ts) out.push_back({s, r, o});
  return out;
}

std::vector<PyTriplet> to_py(const std::vector<LabeledTriplet>& ts) {
  std::vector<PyTriplet> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.emplace_back(t.subject, t.relation, t.object);
  return out;
}

LinearizationSchema schema_named(const std::string& name) {
  LinearizationSchema s;
  s.variant = parse_linearization(name);
  return s;
}

py::dict scores_dict(const Scores& s) {
  py::dict d;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["f1"] = s.f1;
  return d;
}

py::dict score(const std::vector<std::vector<PyTriplet>>& predicted,
               const std::vector<std::vector<PyTriplet>>& gold,
               const std::string& macro_f1) {
  if (predicted.size() != gold.size()) {
    throw ValidationError("predicted and gold must hold the same number of documents");
  }
  MacroF1 mode;
  if (macro_f1 == "mean") {
    mode = MacroF1::kMeanOfF1;
  } else if (macro_f1 == "harmonic") {
    mode = MacroF1::kHarmonicOfMeans;
  } else {
    throw ValidationError("macro_f1 must be mean or harmonic");
  }
  std::unordered_map<std::string, std::uint32_t> entities, relations;
  auto intern = [](auto& map, const std::string& label) {
    return map.try_emplace(label, static_cast<std::uint32_t>(map.size())).first->second;
  };
  auto to_ids = [&](const std::vector<PyTriplet>& ts) {
    std::vector<Triplet> out;
    for (const auto& [s, r, o] : ts) {
      out.push_back({EntityId{intern(entities, s)}, RelationId{intern(relations, r)},
                     EntityId{intern(entities, o)}});
    }
    return out;
  };
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    pairs.push_back(EvalPair::make(std::to_string(i), to_ids(predicted[i]), to_ids(gold[i])));
  }
  py::dict out;
  out["micro"] = scores_dict(micro_scores(pairs));
  out["macro"] = scores_dict(macro_scores(pairs, mode));
  return out;
}

std::vector<std::vector<PyTriplet>> sample(const std::string& index_dir, std::size_t n_sets,
                                           std::uint64_t seed, const std::string& strategy,
                                           double bias_factor, double dampening,
                                           std::uint64_t reweight_interval) {
  SamplerConfig config;
  config.seed = seed;
  config.bias_factor = bias_factor;
  config.dampening = dampening;
  config.reweight_interval = reweight_interval;
  if (strategy == "entity") {
    config.strategy = StartStrategy::kEntityCentric;
  } else if (strategy == "relation") {
    config.strategy = StartStrategy::kRelationCentric;
  } else if (strategy != "mixed") {
    throw ValidationError("strategy must be entity, relation or mixed");
  }
  const KnowledgeGraph graph = load_index(index_dir);
  std::vector<std::vector<PyTriplet>> out;
  out.reserve(n_sets);
  sample_dataset(graph, config, n_sets, [&](std::size_t, const TripletSet& set) {
    std::vector<PyTriplet> row;
    for (const auto& t : set.triplets) {
      row.emplace_back(graph.entities()[t.subject].label, graph.relations()[t.relation].label,
                       graph.entities()[t.object].label);
    }
    out.push_back(std::move(row));
  });
  return out;
}

using PyScorer = std::function<std::vector<double>(const std::string&, const std::vector<TokenId>&)>;

py::list decode(const std::vector<std::string>& entities, const std::vector<std::string>& relations,
                const PyScorer& scorer, const std::string& context, const std::string& schema,
                std::size_t num_beams, std::size_t max_length, std::optional<double> length_penalty,
                std::size_t top_k) {
  const auto lin = schema_named(schema);
  ByteTokenizer tokenizer;
  const auto catalog = DecodingCatalog::build(entities, relations, tokenizer);
  const ConstraintAutomaton automaton(catalog, lin, tokenizer);
  CallbackScorer callback([&](std::string_view ctx, const std::vector<TokenId>& prefix) {
    return scorer(std::string(ctx), prefix);
  });
  DecodeParams params = DecodeParams::defaults_for(lin.variant);
  params.num_beams = num_beams;
  params.max_length = max_length;
  params.top_k_returned = top_k;
  if (length_penalty) params.length_penalty = *length_penalty;
  const LabelResolver resolver(entities, relations);

  py::list out;
  for (const auto& seq : constrained_beam_search(callback, context, automaton, params)) {
    const std::string text = tokenizer.decode(seq.tokens);
    py::dict d;
    d["text"] = text;
    d["triplets"] = to_py(parse(text, lin, &resolver).triplets);
    d["score"] = seq.score;
    d["log_prob"] = seq.log_prob;
    d["truncated"] = seq.truncated;
    out.append(std::move(d));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_kgsynth, m) {
  m.doc() = "Triplet-set sampling, linearization, constrained decoding and scoring";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", m.attr("Error"));

  m.def(
      "linearize",
      [](const std::vector<PyTriplet>& triplets, const std::string& schema,
         const std::string& text) { return linearize(from_py(triplets), schema_named(schema), text).text; },
      py::arg("triplets"), py::arg("schema") = "fe", py::arg("text") = "",
      "Target string for a triplet set. With `text`, triplets are ordered by mention position.");

  m.def(
      "parse",
      [](const std::string& text, const std::string& schema) {
        auto r = parse(text, schema_named(schema));
        py::dict d;
        d["triplets"] = to_py(r.triplets);
        d["dropped_fragments"] = r.diagnostics.dropped_fragments;
        d["duplicates"] = r.diagnostics.duplicates;
        return d;
      },
      py::arg("text"), py::arg("schema") = "fe");

  m.def("score", &score, py::arg("predicted"), py::arg("gold"), py::arg("macro_f1") = "mean",
        "Micro and macro precision/recall/F1 over aligned documents.");

  m.def("bucketize", &bucketize, py::arg("count"),
        "floor(log2(count)); -1 for relations unseen in training.");

  m.def("estimate_cost", &estimate_cost, py::arg("tokens"), py::arg("price_per_1k") = 0.02);

  m.def("sample", &sample, py::arg("index_dir"), py::arg("n_sets"), py::arg("seed") = 0,
        py::arg("strategy") = "mixed", py::arg("bias_factor") = 7.0, py::arg("dampening") = 0.01,
        py::arg("reweight_interval") = 20000,
        "Samples triplet sets from an index directory written by `kgsynth ingest`.");

  // The scorer sees the byte vocabulary: token ids 0-255 are bytes and 256
  // ends the sequence. It returns 257 log-probabilities per call.
  m.def("decode", &decode, py::arg("entities"), py::arg("relations"), py::arg("scorer"),
        py::arg("context") = "", py::arg("schema") = "fe", py::arg("num_beams") = 10,
        py::arg("max_length") = 256, py::arg("length_penalty") = py::none(), py::arg("top_k") = 1,
        "Constrained beam search over the given catalogs with a Python scorer.");
}
