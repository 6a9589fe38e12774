#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgsynth/ids.hpp"

namespace kgsynth {

enum class Provenance { kSampled, kGenerated, kIngested };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view name);

// One dataset row:
//   {"id": .., "text": .., "triplets": [{"s": .., "r": .., "o": ..}, ..],
//    "provenance": "sampled|generated|ingested", "partial": bool,
//    "truncated": bool}
// "text" is omitted while empty and "truncated" while false.
struct DataPointRecord {
  std::string id;
  std::string text;
  std::vector<LabeledTriplet> triplets;
  Provenance provenance = Provenance::kSampled;
  bool partial = false;
  bool truncated = false;

  nlohmann::json to_json() const;
  static DataPointRecord from_json(const nlohmann::json& j);
};

// Accepts {"s", "r", "o"} objects and [s, r, o] arrays.
LabeledTriplet triplet_from_json(const nlohmann::json& t);

std::string to_jsonl_line(const DataPointRecord& record);

// Calls `fn` per row; errors name file:line. Blank lines are skipped.
void read_datapoints(const std::filesystem::path& file,
                     const std::function<void(DataPointRecord&&)>& fn);
std::vector<DataPointRecord> read_datapoints(const std::filesystem::path& file);

void write_datapoints(const std::filesystem::path& file,
                      const std::vector<DataPointRecord>& records);

}  // namespace kgsynth
