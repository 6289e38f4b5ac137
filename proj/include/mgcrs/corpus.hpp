// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Canonical data model for multi-goal recommendation dialogues.
//
// On disk a corpus is a JSONL file with one dialogue per line plus an
// optional sidecar "<stem>.labels.json" carrying the label inventories
// (goal set, topic set, item catalog with surface names) and the split.
// Without a sidecar the inventories are collected from the dialogues in
// first-seen order and item names default to their ids.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mgcrs/common.hpp"

namespace mgcrs {

enum class Speaker { user, system };

inline std::string_view to_string(Speaker s) {
  return s == Speaker::user ? "user" : "system";
}

struct Turn {
  Speaker speaker = Speaker::user;
  std::string text;
  std::vector<std::string> goals;
  std::vector<std::string> topics;
  std::vector<std::string> item_ids;

  bool operator==(const Turn&) const = default;
};

struct UserProfile {
  std::vector<std::string> entries;

  bool empty() const { return entries.empty(); }
  bool operator==(const UserProfile&) const = default;
};

struct Triple {
  std::string head, relation, tail;

  bool operator==(const Triple&) const = default;
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<Turn> turns;
  UserProfile profile;
  std::vector<Triple> kb;
  /// Optional domain tag (multi-domain datasets); empty when absent.
  std::string domain;

  bool operator==(const Dialogue&) const = default;
};

struct CatalogItem {
  std::string id;
  std::string name;

  bool operator==(const CatalogItem&) const = default;
};

enum class Split { train, dev, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev" || s == "valid") return Split::dev;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + std::string(s) + "'");
}

struct Corpus {
  std::vector<Dialogue> dialogues;
  std::vector<std::string> goal_set;
  std::vector<std::string> topic_set;
  std::vector<CatalogItem> item_catalog;
  Split split = Split::train;

  bool operator==(const Corpus&) const = default;

  const CatalogItem* find_item(std::string_view id) const {
    for (const auto& it : item_catalog)
      if (it.id == id) return &it;
    return nullptr;
  }
};

/// Fast item-id lookup over a catalog.
class CatalogIndex {
 public:
  CatalogIndex() = default;
  explicit CatalogIndex(std::span<const CatalogItem> items) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      index_.emplace(items[i].id, i);
      items_.push_back(items[i]);
    }
  }
  const CatalogItem* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &items_[it->second];
  }
  std::optional<std::size_t> position(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::vector<CatalogItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<CatalogItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Task examples

struct TaskExample {
  Task task = Task::G;
  std::string dialogue_id;
  int turn_index = 0;
  std::vector<Turn> context;
  /// Per context turn: its goal labels joined by " </k> " (empty if none).
  std::vector<std::string> goal_history;
  /// Per context turn: its topic labels joined by " </k> " (empty if none).
  std::vector<std::string> topic_history;
  UserProfile profile;
  std::string oracle_goal;
  std::vector<std::string> oracle_topics;
  std::vector<std::string> oracle_items;
  std::string target_text;
};

/// Target string for `task` given the gold annotations of a system turn.
/// Item targets are "_<id>_ <surface name>" for the first gold item.
inline std::string render_target(Task task, const Turn& turn,
                                 const CatalogIndex& catalog) {
  switch (task) {
    case Task::G: return join_labels(turn.goals);
    case Task::T: return join_labels(turn.topics);
    case Task::R: {
      if (turn.item_ids.empty())
        throw Error("item target requested for a turn without items");
      const auto& id = turn.item_ids.front();
      const CatalogItem* item = catalog.find(id);
      std::string out = item_token(id);
      if (item && !item->name.empty()) out += " " + item->name;
      return out;
    }
    case Task::D: return turn.text;
  }
  return {};
}

inline bool emits_example(Task task, const Turn& turn) {
  if (turn.speaker != Speaker::system) return false;
  switch (task) {
    case Task::G: return !turn.goals.empty();
    case Task::T: return true;
    case Task::R: return !turn.item_ids.empty();
    case Task::D: return !trim(turn.text).empty();
  }
  return false;
}

inline TaskExample make_example(Task task, const Dialogue& d, std::size_t t,
                                const CatalogIndex& catalog) {
  TaskExample ex;
  ex.task = task;
  ex.dialogue_id = d.dialogue_id;
  ex.turn_index = static_cast<int>(t);
  ex.context.assign(d.turns.begin(), d.turns.begin() + static_cast<long>(t));
  ex.goal_history.reserve(t);
  ex.topic_history.reserve(t);
  for (std::size_t i = 0; i < t; ++i) {
    ex.goal_history.push_back(join_labels(d.turns[i].goals));
    ex.topic_history.push_back(join_labels(d.turns[i].topics));
  }
  ex.profile = d.profile;
  const Turn& cur = d.turns[t];
  ex.oracle_goal = join_labels(cur.goals);
  ex.oracle_topics = cur.topics;
  ex.oracle_items = cur.item_ids;
  ex.target_text = render_target(task, cur, catalog);
  return ex;
}

/// One example per system turn for which `task` applies, in dialogue order.
inline std::vector<TaskExample> derive_examples(const Corpus& c, Task task) {
  CatalogIndex catalog(c.item_catalog);
  std::vector<TaskExample> out;
  for (const auto& d : c.dialogues)
    for (std::size_t t = 0; t < d.turns.size(); ++t)
      if (emits_example(task, d.turns[t]))
        out.push_back(make_example(task, d, t, catalog));
  return out;
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string dialogue_id;
  int turn_index = -1;  // -1: dialogue-level
  std::string message;
};

struct CorpusSummary {
  std::size_t dialogues = 0;
  std::size_t utterances = 0;
  std::size_t system_turns = 0;
  std::size_t goals = 0;
  std::size_t topics = 0;
  std::size_t items = 0;
};

struct ValidationReport {
  std::vector<Violation> violations;
  CorpusSummary summary;

  bool clean() const { return violations.empty(); }
};

/// True when `text` contains any segment-token literal.
inline bool contains_segment_literal(std::string_view text) {
  for (auto t : tok::kAll)
    if (text.find(t) != std::string_view::npos) return true;
  return false;
}

inline ValidationReport validate_corpus(const Corpus& c) {
  ValidationReport rep;
  auto flag = [&](const std::string& id, int turn, std::string msg) {
    rep.violations.push_back({id, turn, std::move(msg)});
  };

  auto check_dedup = [&](const std::vector<std::string>& labels,
                         const char* what) {
    std::unordered_set<std::string> seen;
    for (const auto& l : labels)
      if (!seen.insert(l).second)
        flag("", -1, std::string("duplicate ") + what + " '" + l + "'");
  };
  check_dedup(c.goal_set, "goal label");
  check_dedup(c.topic_set, "topic label");
  std::unordered_set<std::string> item_ids;
  for (const auto& it : c.item_catalog)
    if (!item_ids.insert(it.id).second)
      flag("", -1, "duplicate item id '" + it.id + "'");

  std::unordered_set<std::string> goals(c.goal_set.begin(), c.goal_set.end());
  std::unordered_set<std::string> topics(c.topic_set.begin(),
                                         c.topic_set.end());

  std::unordered_set<std::string> dialogue_ids;
  for (const auto& d : c.dialogues) {
    const std::string& id = d.dialogue_id;
    if (!dialogue_ids.insert(id).second)
      flag(id, -1, "duplicate dialogue_id");
    for (std::size_t k = 0; k < d.kb.size(); ++k)
      if (trim(d.kb[k].head).empty() || trim(d.kb[k].tail).empty())
        flag(id, -1, "kb triple " + std::to_string(k) + " has empty head/tail");
    for (const auto& e : d.profile.entries)
      if (contains_segment_literal(e))
        flag(id, -1, "profile entry contains a segment-token literal");
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const Turn& turn = d.turns[t];
      int ti = static_cast<int>(t);
      if (t > 0 && d.turns[t - 1].speaker == turn.speaker)
        flag(id, ti, "consecutive " + std::string(to_string(turn.speaker)) +
                         " turns");
      if (contains_segment_literal(turn.text))
        flag(id, ti, "text contains a segment-token literal");
      for (const auto& g : turn.goals)
        if (!goals.count(g)) flag(id, ti, "unknown goal label '" + g + "'");
      for (const auto& k : turn.topics)
        if (!topics.count(k)) flag(id, ti, "unknown topic label '" + k + "'");
      for (const auto& v : turn.item_ids)
        if (!item_ids.count(v)) flag(id, ti, "unknown item id '" + v + "'");
      ++rep.summary.utterances;
      if (turn.speaker == Speaker::system) ++rep.summary.system_turns;
    }
  }
  rep.summary.dialogues = c.dialogues.size();
  rep.summary.goals = c.goal_set.size();
  rep.summary.topics = c.topic_set.size();
  rep.summary.items = c.item_catalog.size();
  return rep;
}

// ---------------------------------------------------------------------------
// Canonical JSONL

using ojson = nlohmann::ordered_json;

inline ojson to_json(const Dialogue& d) {
  ojson j;
  j["dialogue_id"] = d.dialogue_id;
  j["profile"] = d.profile.entries;
  ojson kb = ojson::array();
  for (const auto& t : d.kb) kb.push_back({t.head, t.relation, t.tail});
  j["kb"] = std::move(kb);
  ojson turns = ojson::array();
  for (const auto& t : d.turns) {
    ojson jt;
    jt["speaker"] = to_string(t.speaker);
    jt["text"] = t.text;
    jt["goals"] = t.goals;
    jt["topics"] = t.topics;
    jt["item_ids"] = t.item_ids;
    turns.push_back(std::move(jt));
  }
  j["turns"] = std::move(turns);
  if (!d.domain.empty()) j["domain"] = d.domain;
  return j;
}

namespace detail {

inline std::vector<std::string> string_list(const ojson& j, const char* key) {
  if (!j.contains(key)) return {};
  const auto& v = j.at(key);
  if (!v.is_array())
    throw Error(std::string("field '") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string())
      throw Error(std::string("field '") + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline Dialogue dialogue_from_json(const ojson& j) {
  if (!j.is_object()) throw Error("dialogue record must be an object");
  Dialogue d;
  if (!j.contains("dialogue_id") || !j.at("dialogue_id").is_string())
    throw Error("missing string field 'dialogue_id'");
  d.dialogue_id = j.at("dialogue_id").get<std::string>();
  d.profile.entries = detail::string_list(j, "profile");
  if (j.contains("kb")) {
    for (const auto& t : j.at("kb")) {
      if (!t.is_array() || t.size() != 3)
        throw Error("kb entries must be [head, relation, tail]");
      d.kb.push_back({t[0].get<std::string>(), t[1].get<std::string>(),
                      t[2].get<std::string>()});
    }
  }
  if (!j.contains("turns") || !j.at("turns").is_array())
    throw Error("missing array field 'turns'");
  for (const auto& jt : j.at("turns")) {
    Turn t;
    auto sp = jt.at("speaker").get<std::string>();
    if (sp == "user")
      t.speaker = Speaker::user;
    else if (sp == "system")
      t.speaker = Speaker::system;
    else
      throw Error("speaker must be 'user' or 'system', got '" + sp + "'");
    t.text = jt.at("text").get<std::string>();
    t.goals = detail::string_list(jt, "goals");
    t.topics = detail::string_list(jt, "topics");
    t.item_ids = detail::string_list(jt, "item_ids");
    d.turns.push_back(std::move(t));
  }
  if (j.contains("domain")) d.domain = j.at("domain").get<std::string>();
  return d;
}

inline std::filesystem::path labels_sidecar(const std::filesystem::path& p) {
  auto s = p;
  s.replace_extension(".labels.json");
  return s;
}

inline std::string to_jsonl(const Corpus& c) {
  std::string out;
  for (const auto& d : c.dialogues) {
    out += to_json(d).dump();
    out += '\n';
  }
  return out;
}

inline std::string labels_json(const Corpus& c) {
  ojson j;
  j["split"] = to_string(c.split);
  j["goal_set"] = c.goal_set;
  j["topic_set"] = c.topic_set;
  ojson items = ojson::array();
  for (const auto& it : c.item_catalog) items.push_back({it.id, it.name});
  j["item_catalog"] = std::move(items);
  return j.dump(1) + "\n";
}

inline void save_corpus(const Corpus& c, const std::filesystem::path& path) {
  write_file(path, to_jsonl(c));
  write_file(labels_sidecar(path), labels_json(c));
}

/// Digest over the canonical serialization (dialogues and inventories).
inline std::string corpus_digest(const Corpus& c) {
  Fnv64 h;
  h.update(to_jsonl(c));
  h.update(labels_json(c));
  return h.hex();
}

/// Fills missing inventories from labels that occur in the dialogues.
inline void collect_label_sets(Corpus& c) {
  auto add = [](std::vector<std::string>& set,
                std::unordered_set<std::string>& seen, const std::string& l) {
    if (seen.insert(l).second) set.push_back(l);
  };
  std::unordered_set<std::string> gs(c.goal_set.begin(), c.goal_set.end());
  std::unordered_set<std::string> ts(c.topic_set.begin(), c.topic_set.end());
  std::unordered_set<std::string> is;
  for (const auto& it : c.item_catalog) is.insert(it.id);
  for (const auto& d : c.dialogues)
    for (const auto& t : d.turns) {
      for (const auto& g : t.goals) add(c.goal_set, gs, g);
      for (const auto& k : t.topics) add(c.topic_set, ts, k);
      for (const auto& v : t.item_ids)
        if (is.insert(v).second) c.item_catalog.push_back({v, v});
    }
}

/// Throws on the first label that is not covered by the inventories.
inline void check_label_sets(const Corpus& c, const std::string& source) {
  std::unordered_set<std::string> gs(c.goal_set.begin(), c.goal_set.end());
  std::unordered_set<std::string> ts(c.topic_set.begin(), c.topic_set.end());
  std::unordered_set<std::string> is;
  for (const auto& it : c.item_catalog) is.insert(it.id);
  for (const auto& d : c.dialogues)
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const auto& turn = d.turns[t];
      auto where = " (dialogue " + d.dialogue_id + ", turn " +
                   std::to_string(t) + ")";
      for (const auto& g : turn.goals)
        if (!gs.count(g)) throw Error(source + ": unknown goal label '" + g +
                                      "'" + where);
      for (const auto& k : turn.topics)
        if (!ts.count(k)) throw Error(source + ": unknown topic label '" + k +
                                      "'" + where);
      for (const auto& v : turn.item_ids)
        if (!is.count(v))
          throw Error(source + ": unknown item id '" + v + "'" + where);
    }
}

inline Corpus load_canonical_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      c.dialogues.push_back(dialogue_from_json(ojson::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    } catch (const Error& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  auto side = labels_sidecar(path);
  if (std::filesystem::exists(side)) {
    ojson j;
    try {
      j = ojson::parse(read_file(side));
      if (j.contains("split")) c.split = parse_split(j.at("split").get<std::string>());
      c.goal_set = detail::string_list(j, "goal_set");
      c.topic_set = detail::string_list(j, "topic_set");
      for (const auto& it : j.value("item_catalog", ojson::array())) {
        if (!it.is_array() || it.size() != 2)
          throw Error("item_catalog entries must be [id, name]");
        c.item_catalog.push_back({it[0].get<std::string>(),
                                  it[1].get<std::string>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(side.string(), 0, e.what());
    }
    check_label_sets(c, path.string());
  } else {
    collect_label_sets(c);
  }
  return c;
}

/// Deterministic split by dialogue order into train/dev/test.
inline std::array<Corpus, 3> split_corpus(const Corpus& c, double train_frac,
                                          double dev_frac) {
  std::array<Corpus, 3> out;
  const std::size_t n = c.dialogues.size();
  const auto n_train = static_cast<std::size_t>(std::llround(n * train_frac));
  const auto n_dev = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(n * dev_frac)));
  for (std::size_t s = 0; s < 3; ++s) {
    out[s].goal_set = c.goal_set;
    out[s].topic_set = c.topic_set;
    out[s].item_catalog = c.item_catalog;
    out[s].split = static_cast<Split>(s);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t s = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);
    out[s].dialogues.push_back(c.dialogues[i]);
  }
  return out;
}

}  // namespace mgcrs
