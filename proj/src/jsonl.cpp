#include "kgsynth/jsonl.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "kgsynth/error.hpp"
#include "text_util.hpp"

namespace kgsynth {

using nlohmann::json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kSampled: return "sampled";
    case Provenance::kGenerated: return "generated";
    case Provenance::kIngested: return "ingested";
  }
  return "sampled";
}

Provenance parse_provenance(std::string_view name) {
  if (name == "sampled") return Provenance::kSampled;
  if (name == "generated") return Provenance::kGenerated;
  if (name == "ingested") return Provenance::kIngested;
  throw ValidationError("unknown provenance '" + std::string(name) + "'");
}

json DataPointRecord::to_json() const {
  json triples = json::array();
  for (const auto& t : triplets) {
    triples.push_back({{"s", t.subject}, {"r", t.relation}, {"o", t.object}});
  }
  json j{{"id", id},
         {"triplets", std::move(triples)},
         {"provenance", to_string(provenance)},
         {"partial", partial}};
  if (!text.empty()) j["text"] = text;
  if (truncated) j["truncated"] = true;
  return j;
}

LabeledTriplet triplet_from_json(const json& t) {
  auto field = [&](const json& v) {
    if (!v.is_string()) {
      throw ValidationError("triplet fields must be strings");
    }
    return v.get<std::string>();
  };
  if (t.is_array() && t.size() == 3) {
    return {field(t[0]), field(t[1]), field(t[2])};
  }
  if (t.is_object() && t.contains("s") && t.contains("r") && t.contains("o")) {
    return {field(t["s"]), field(t["r"]), field(t["o"])};
  }
  throw ValidationError("triplet must be {\"s\", \"r\", \"o\"} or [s, r, o]");
}

DataPointRecord DataPointRecord::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("row is not a JSON object");
  DataPointRecord r;
  if (!j.contains("id")) throw ValidationError("row has no id");
  r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  r.text = j.value("text", "");
  if (j.contains("triplets")) {
    if (!j["triplets"].is_array()) {
      throw ValidationError("triplets must be a list");
    }
    for (const auto& t : j["triplets"]) r.triplets.push_back(triplet_from_json(t));
  }
  r.provenance = parse_provenance(j.value("provenance", "sampled"));
  r.partial = j.value("partial", false);
  r.truncated = j.value("truncated", false);
  return r;
}

std::string to_jsonl_line(const DataPointRecord& record) {
  return record.to_json().dump() + "\n";
}

void read_datapoints(const std::filesystem::path& file,
                     const std::function<void(DataPointRecord&&)>& fn) {
  auto in = detail::open_input(file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ValidationError(file.string() + ":" + std::to_string(lineno) +
                            ": invalid JSON");
    }
    try {
      fn(DataPointRecord::from_json(j));
    } catch (const ValidationError& e) {
      throw ValidationError(file.string() + ":" + std::to_string(lineno) +
                            ": " + e.what());
    }
  }
}

std::vector<DataPointRecord> read_datapoints(const std::filesystem::path& file) {
  std::vector<DataPointRecord> out;
  read_datapoints(file, [&](DataPointRecord&& r) { out.push_back(std::move(r)); });
  return out;
}

void write_datapoints(const std::filesystem::path& file,
                      const std::vector<DataPointRecord>& records) {
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  for (const auto& r : records) out << to_jsonl_line(r);
  if (!out) throw Error("write to " + file.string() + " failed");
}

}  // namespace kgsynth
