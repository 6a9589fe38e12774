#include "kgsynth/codec.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <tuple>

#include "kgsynth/error.hpp"
#include "text_util.hpp"

namespace kgsynth {

std::string_view to_string(Linearization v) {
  return v == Linearization::kFullyExpanded ? "fe" : "sc";
}

Linearization parse_linearization(std::string_view name) {
  if (name == "fe") return Linearization::kFullyExpanded;
  if (name == "sc") return Linearization::kSubjectCollapsed;
  throw ValidationError("unknown linearization '" + std::string(name) +
                        "' (expected fe or sc)");
}

void LinearizationSchema::validate() const {
  const std::array<const std::string*, 4> d = {
      &delimiters.subject, &delimiters.relation, &delimiters.object,
      &delimiters.end};
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i]->empty()) throw ValidationError("empty delimiter");
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (i != j && d[i]->find(*d[j]) != std::string::npos) {
        throw ValidationError("delimiter '" + *d[j] + "' occurs inside '" +
                              *d[i] + "'");
      }
    }
  }
}

std::string entity_surface(std::string_view label) {
  std::string out(label);
  std::replace(out.begin(), out.end(), ' ', '_');
  return out;
}

std::string entity_label_from_surface(std::string_view surface) {
  std::string out(surface);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

namespace {

struct Word {
  std::string_view text;
  std::size_t offset;
};

std::vector<Word> words_of(std::string_view s) {
  constexpr std::string_view punct = ".,;:!?\"'()[]{}";
  std::vector<Word> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    std::string_view w = s.substr(i, j - i);
    std::size_t lead = 0;
    while (lead < w.size() && punct.find(w[lead]) != std::string_view::npos) {
      ++lead;
    }
    w.remove_prefix(lead);
    while (!w.empty() && punct.find(w.back()) != std::string_view::npos) {
      w.remove_suffix(1);
    }
    if (!w.empty()) out.push_back(Word{w, i + lead});
    i = j;
  }
  return out;
}

}  // namespace

std::size_t mention_position(std::string_view label,
                             std::string_view source_text) {
  if (source_text.empty() || label.empty()) return 0;
  if (auto pos = source_text.find(label); pos != std::string_view::npos) {
    return pos;
  }
  const auto text_words = words_of(source_text);
  const auto label_words = words_of(label);
  // Longest run text[i..i+len) equal to a contiguous run of label words.
  std::size_t best_len = 0, best_pos = 0;
  for (std::size_t i = 0; i < text_words.size(); ++i) {
    for (std::size_t k = 0; k < label_words.size(); ++k) {
      std::size_t len = 0;
      while (i + len < text_words.size() && k + len < label_words.size() &&
             text_words[i + len].text == label_words[k + len].text) {
        ++len;
      }
      if (len > best_len) {
        best_len = len;
        best_pos = text_words[i].offset;
      }
    }
  }
  return best_pos;
}

std::vector<LabeledTriplet> order_triplets(
    std::span<const LabeledTriplet> triplets, std::string_view source_text) {
  std::unordered_map<std::string, std::size_t> cache;
  auto pos = [&](const std::string& label) {
    auto it = cache.find(label);
    if (it != cache.end()) return it->second;
    std::size_t p = mention_position(label, source_text);
    cache.emplace(label, p);
    return p;
  };
  using Key = std::tuple<std::size_t, std::size_t, const LabeledTriplet*>;
  std::vector<Key> keys;
  keys.reserve(triplets.size());
  for (const auto& t : triplets) {
    keys.emplace_back(pos(t.subject), pos(t.object), &t);
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return *std::get<2>(a) < *std::get<2>(b);
  });
  std::vector<LabeledTriplet> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(*std::get<2>(k));
  return out;
}

namespace {

void check_label(std::string_view label, const Delimiters& d) {
  if (label.empty()) throw ValidationError("empty label in triplet");
  if (detail::trim(label).size() != label.size()) {
    throw ValidationError("label '" + std::string(label) +
                          "' has surrounding whitespace");
  }
  for (const auto* delim : {&d.subject, &d.relation, &d.object, &d.end}) {
    if (label.find(*delim) != std::string_view::npos) {
      throw ValidationError("label '" + std::string(label) +
                            "' contains delimiter '" + *delim + "'");
    }
  }
}

}  // namespace

std::string linearize_ordered(std::span<const LabeledTriplet> triplets,
                              const LinearizationSchema& schema) {
  schema.validate();
  const auto& d = schema.delimiters;
  for (const auto& t : triplets) {
    check_label(t.subject, d);
    check_label(t.relation, d);
    check_label(t.object, d);
  }
  std::string out;
  auto piece = [&out](std::string_view a, std::string_view b) {
    if (!out.empty()) out += ' ';
    out += a;
    out += ' ';
    out += b;
  };
  auto pair_and_end = [&](const LabeledTriplet& t) {
    piece(d.relation, t.relation);
    piece(d.object, entity_surface(t.object));
    out += ' ';
    out += d.end;
  };

  if (schema.variant == Linearization::kFullyExpanded) {
    for (const auto& t : triplets) {
      piece(d.subject, entity_surface(t.subject));
      pair_and_end(t);
    }
    return out;
  }

  std::vector<const std::string*> subjects;
  for (const auto& t : triplets) {
    if (std::none_of(subjects.begin(), subjects.end(),
                     [&](const std::string* s) { return *s == t.subject; })) {
      subjects.push_back(&t.subject);
    }
  }
  for (const std::string* s : subjects) {
    piece(d.subject, entity_surface(*s));
    for (const auto& t : triplets) {
      if (t.subject == *s) pair_and_end(t);
    }
  }
  return out;
}

LinearizedTarget linearize(std::span<const LabeledTriplet> triplets,
                           const LinearizationSchema& schema,
                           std::string_view source_text) {
  auto ordered = order_triplets(triplets, source_text);
  return LinearizedTarget{linearize_ordered(ordered, schema), schema};
}

LabelResolver::LabelResolver(const EntityCatalog& entities,
                             const RelationCatalog& relations) {
  for (const auto& e : entities) add_entity(e.label);
  for (const auto& r : relations) relations_.insert(r.label);
}

LabelResolver::LabelResolver(std::span<const std::string> entity_labels,
                             std::span<const std::string> relation_labels) {
  for (const auto& e : entity_labels) add_entity(e);
  relations_.insert(relation_labels.begin(), relation_labels.end());
}

void LabelResolver::add_entity(const std::string& label) {
  // An exact label wins over another label's surface form.
  entities_.emplace(entity_surface(label), label);
  entities_.insert_or_assign(label, label);
}

const std::string* LabelResolver::entity(std::string_view surface) const {
  auto it = entities_.find(std::string(surface));
  if (it != entities_.end()) return &it->second;
  it = entities_.find(entity_label_from_surface(surface));
  return it == entities_.end() ? nullptr : &it->second;
}

const std::string* LabelResolver::relation(std::string_view surface) const {
  auto it = relations_.find(std::string(surface));
  return it == relations_.end() ? nullptr : &*it;
}

namespace {

enum class Marker { kSubject, kRelation, kObject, kEnd };

struct Segment {
  Marker marker;
  std::string_view content;
};

}  // namespace

ParseResult parse(std::string_view text, const LinearizationSchema& schema,
                  const LabelResolver* resolver) {
  ParseResult result;
  auto& diag = result.diagnostics;
  if (detail::trim(text).empty()) {
    diag.notes.emplace_back("empty input");
    return result;
  }

  const auto& d = schema.delimiters;
  const std::array<std::pair<const std::string*, Marker>, 4> delims = {{
      {&d.subject, Marker::kSubject},
      {&d.relation, Marker::kRelation},
      {&d.object, Marker::kObject},
      {&d.end, Marker::kEnd},
  }};

  std::vector<Segment> segments;
  std::size_t lead_end = std::string_view::npos;
  std::size_t i = 0;
  std::optional<Marker> open;
  std::size_t content_start = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto& [delim, marker] : delims) {
      if (text.compare(i, delim->size(), *delim) == 0) {
        if (open) {
          segments.push_back(
              {*open, detail::trim(text.substr(content_start, i - content_start))});
        } else {
          lead_end = i;
        }
        open = marker;
        i += delim->size();
        content_start = i;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  if (!open) {
    diag.notes.emplace_back("no delimiters found");
    diag.dropped_fragments = 1;
    return result;
  }
  segments.push_back({*open, detail::trim(text.substr(content_start))});
  if (!detail::trim(text.substr(0, lead_end)).empty()) {
    ++diag.dropped_fragments;
    diag.notes.emplace_back("text before the first delimiter");
  }

  const bool collapsed = schema.variant == Linearization::kSubjectCollapsed;
  enum class State { kIdle, kSubject, kRelation, kObject, kAfterEnd, kSkip };
  State state = State::kIdle;
  std::string_view subject, relation, object;
  std::string_view last_subject;
  std::unordered_set<LabeledTriplet, LabeledTripletHash> seen;

  auto drop = [&](std::string note) {
    ++diag.dropped_fragments;
    diag.notes.push_back(std::move(note));
  };
  auto emit = [&] {
    LabeledTriplet t;
    if (resolver) {
      const std::string* s = resolver->entity(subject);
      const std::string* r = resolver->relation(relation);
      const std::string* o = resolver->entity(object);
      if (!s || !r || !o) {
        ++diag.unresolved;
        diag.notes.push_back("unresolved: " + std::string(subject) + " | " +
                             std::string(relation) + " | " +
                             std::string(object));
        return;
      }
      t = LabeledTriplet{*s, *r, *o};
    } else {
      t = LabeledTriplet{entity_label_from_surface(subject),
                         std::string(relation),
                         entity_label_from_surface(object)};
    }
    if (seen.insert(t).second) {
      result.triplets.push_back(std::move(t));
    } else {
      ++diag.duplicates;
    }
  };
  // Interprets a marker that arrives while no triplet is in progress.
  auto restart = [&](const Segment& seg) {
    if (seg.marker == Marker::kSubject) {
      subject = seg.content;
      state = State::kSubject;
    } else if (seg.marker == Marker::kRelation && collapsed &&
               !last_subject.empty()) {
      subject = last_subject;
      relation = seg.content;
      state = State::kRelation;
    } else {
      state = State::kSkip;
    }
  };

  for (const auto& seg : segments) {
    switch (state) {
      case State::kIdle:
      case State::kAfterEnd:
        if (state == State::kIdle && seg.marker != Marker::kSubject) {
          drop("fragment without a subject");
          state = State::kSkip;
          break;
        }
        if (state == State::kAfterEnd && seg.marker != Marker::kSubject &&
            !(collapsed && seg.marker == Marker::kRelation)) {
          drop("unexpected delimiter after end marker");
          state = State::kSkip;
          break;
        }
        restart(seg);
        break;
      case State::kSkip:
        if (seg.marker == Marker::kSubject) restart(seg);
        break;
      case State::kSubject:
        if (seg.marker == Marker::kRelation) {
          relation = seg.content;
          state = State::kRelation;
        } else {
          drop("subject not followed by a relation");
          restart(seg);
        }
        break;
      case State::kRelation:
        if (seg.marker == Marker::kObject) {
          object = seg.content;
          state = State::kObject;
        } else {
          drop("relation not followed by an object");
          restart(seg);
        }
        break;
      case State::kObject:
        if (seg.marker == Marker::kEnd) {
          if (subject.empty() || relation.empty() || object.empty()) {
            drop("empty element in triplet");
          } else {
            emit();
          }
          last_subject = subject;
          state = State::kAfterEnd;
          if (!seg.content.empty()) {
            drop("text after end marker");
          }
        } else {
          drop("object not followed by an end marker");
          restart(seg);
        }
        break;
    }
  }
  if (state == State::kSubject || state == State::kRelation ||
      state == State::kObject) {
    drop("incomplete trailing fragment");
  }
  return result;
}

}  // namespace kgsynth
