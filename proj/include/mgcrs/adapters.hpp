// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Native dataset readers normalized into the canonical corpus model.
//
// Both adapters accept a file or a directory. A directory is scanned for one
// file per split whose stem starts with train, dev/valid or test (test_1 and
// test_2 are merged into test). Files may be JSON lines or one JSON array.
//
// DuRecDial record fields:
//   conversation      list of utterance strings (leading "[n]" markers are
//                     stripped)
//   goal_type_list    per-utterance goal label (string or list)
//   goal_topic_list   per-utterance topic (string or list); "NULL" and empty
//                     values mean no topic
//   user_profile      object; each key becomes "key: v1, v2" in order
//   knowledge         list of [head, relation, tail], or per-utterance lists
//   goal              free-text plan; "Bot 主动" in the first step makes the
//                     system speak first, otherwise the user does
// Items are the topics of system utterances whose goal contains 推荐 (or
// "recommend"); their surface name is the topic itself.
//
// TG-ReDial record fields (keys are probed in order):
//   messages|conversation   list of {role|speaker, text|utterance,
//                           goal|goals|action, topic|topics,
//                           movie|movies|items|item_ids}
//   user_profile|profile    list of strings or object
//   conv_id|dialogue_id     dialogue id (defaults to file:line)
// "Recommender"/"system"/"bot" roles are system turns; everything else is the
// user. Item names come from an optional movie id -> name JSON object found
// next to the data (movie_names.json, id2name.json or movies.json).

#pragma once

#include <algorithm>
#include <map>
#include <string>

#include "mgcrs/corpus.hpp"

namespace mgcrs {

enum class CorpusFormat { canonical_jsonl, durecdial, tgredial };

inline CorpusFormat parse_corpus_format(std::string_view s) {
  if (s == "canonical_jsonl" || s == "canonical" || s == "jsonl")
    return CorpusFormat::canonical_jsonl;
  if (s == "durecdial") return CorpusFormat::durecdial;
  if (s == "tgredial") return CorpusFormat::tgredial;
  throw Error("unknown corpus format '" + std::string(s) + "'");
}

namespace adapter_detail {

using json = nlohmann::ordered_json;

struct SourceRecord {
  json value;
  std::string source;
  std::size_t line;
};

inline std::vector<SourceRecord> read_records(const std::filesystem::path& p) {
  std::string text = read_file(p);
  std::vector<SourceRecord> out;
  auto t = trim(text);
  if (!t.empty() && t.front() == '[') {
    json arr;
    try {
      arr = json::parse(t);
    } catch (const json::exception& e) {
      throw ParseError(p.string(), 0, e.what());
    }
    std::size_t i = 0;
    for (auto& v : arr) out.push_back({std::move(v), p.string(), ++i});
    return out;
  }
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back({json::parse(line), p.string(), lineno});
    } catch (const json::exception& e) {
      throw ParseError(p.string(), lineno, e.what());
    }
  }
  return out;
}

inline std::optional<Split> split_of(const std::filesystem::path& p) {
  auto stem = p.stem().string();
  std::transform(stem.begin(), stem.end(), stem.begin(), ::tolower);
  if (stem.starts_with("train")) return Split::train;
  if (stem.starts_with("dev") || stem.starts_with("valid")) return Split::dev;
  if (stem.starts_with("test")) return Split::test;
  return std::nullopt;
}

/// Data files per split, in file-name order.
inline std::map<Split, std::vector<std::filesystem::path>> discover(
    const std::filesystem::path& path) {
  std::map<Split, std::vector<std::filesystem::path>> out;
  if (!std::filesystem::is_directory(path)) {
    out[split_of(path).value_or(Split::train)].push_back(path);
    return out;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    if (ext != ".json" && ext != ".jsonl" && ext != ".txt") continue;
    if (split_of(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[*split_of(f)].push_back(f);
  if (out.empty())
    throw Error("no train/dev/test data files under " + path.string());
  return out;
}

inline const json* probe(const json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys)
    if (j.contains(k) && !j.at(k).is_null()) return &j.at(k);
  return nullptr;
}

inline std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return v.dump();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

/// String or list of strings as labels; "NULL"/empty entries dropped.
inline std::vector<std::string> labels_of(const json* v) {
  std::vector<std::string> out;
  if (!v) return out;
  auto add = [&](const json& e) {
    auto s = std::string(trim(scalar_text(e)));
    if (!s.empty() && s != "NULL" && s != "null" &&
        std::find(out.begin(), out.end(), s) == out.end())
      out.push_back(s);
  };
  if (v->is_array())
    for (const auto& e : *v) add(e);
  else
    add(*v);
  return out;
}

inline std::vector<std::string> profile_entries(const json* v) {
  std::vector<std::string> out;
  if (!v) return out;
  if (v->is_array()) {
    for (const auto& e : *v) out.push_back(scalar_text(e));
  } else if (v->is_object()) {
    for (const auto& [k, val] : v->items()) {
      std::string s = k + ": ";
      if (val.is_array()) {
        std::vector<std::string> parts;
        for (const auto& e : val) parts.push_back(scalar_text(e));
        s += join(parts, ", ");
      } else {
        s += scalar_text(val);
      }
      out.push_back(s);
    }
  } else {
    out.push_back(scalar_text(*v));
  }
  // segment literals would break serialization; neutralize the brackets
  for (auto& e : out) {
    if (!contains_segment_literal(e)) continue;
    for (char& ch : e) {
      if (ch == '[') ch = '(';
      if (ch == ']') ch = ')';
    }
  }
  return out;
}

inline std::string strip_marker(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '[') {
    auto close = s.find(']');
    if (close != std::string_view::npos && close <= 4) {
      bool digits = close > 1;
      for (std::size_t i = 1; i < close; ++i)
        digits = digits && s[i] >= '0' && s[i] <= '9';
      if (digits) s = trim(s.substr(close + 1));
    }
  }
  return std::string(s);
}

inline bool is_recommend_goal(std::string_view g) {
  return g.find("推荐") != std::string_view::npos ||
         g.find("ecommend") != std::string_view::npos;
}

inline void add_triples(const json& v, std::vector<Triple>& kb) {
  if (!v.is_array()) return;
  if (v.size() == 3 && v[0].is_string() && v[1].is_string() && v[2].is_string()) {
    kb.push_back({v[0].get<std::string>(), v[1].get<std::string>(),
                  v[2].get<std::string>()});
    return;
  }
  for (const auto& e : v) add_triples(e, kb);
}

inline Dialogue durecdial_dialogue(const SourceRecord& r) {
  const json& j = r.value;
  const json* conv = probe(j, {"conversation"});
  if (!conv || !conv->is_array())
    throw ParseError(r.source, r.line, "missing conversation list");
  const json* goals = probe(j, {"goal_type_list"});
  const json* topics = probe(j, {"goal_topic_list"});
  if ((goals && goals->size() != conv->size()) ||
      (topics && topics->size() != conv->size()))
    throw ParseError(r.source, r.line,
                     "goal/topic list length differs from conversation");

  Dialogue d;
  if (const json* id = probe(j, {"dialogue_id", "conv_id", "id"}))
    d.dialogue_id = scalar_text(*id);
  else
    d.dialogue_id = std::filesystem::path(r.source).stem().string() + "-" +
                    std::to_string(r.line);
  d.profile.entries = profile_entries(probe(j, {"user_profile"}));
  if (const json* kb = probe(j, {"knowledge"})) add_triples(*kb, d.kb);
  std::vector<Triple> kept;
  for (auto& t : d.kb)
    if (!trim(t.head).empty() && !trim(t.tail).empty()) kept.push_back(t);
  d.kb = std::move(kept);

  bool system_first = false;
  if (const json* g = probe(j, {"goal"}); g && g->is_string()) {
    auto plan = g->get<std::string>();
    auto first = plan.substr(0, plan.find("-->"));
    system_first = first.find("Bot 主动") != std::string::npos ||
                   first.find("Bot主动") != std::string::npos;
  }
  if (const json* f = probe(j, {"first_speaker"}))
    system_first = scalar_text(*f) == "system" || scalar_text(*f) == "bot";

  for (std::size_t i = 0; i < conv->size(); ++i) {
    Turn t;
    bool sys = (i % 2 == 0) == system_first;
    t.speaker = sys ? Speaker::system : Speaker::user;
    t.text = strip_marker(scalar_text((*conv)[i]));
    if (goals) t.goals = labels_of(&(*goals)[i]);
    if (topics) t.topics = labels_of(&(*topics)[i]);
    if (sys)
      for (const auto& g : t.goals)
        if (is_recommend_goal(g)) {
          t.item_ids = t.topics;
          break;
        }
    d.turns.push_back(std::move(t));
  }
  return d;
}

inline bool is_system_role(std::string role) {
  std::transform(role.begin(), role.end(), role.begin(), ::tolower);
  return role == "recommender" || role == "system" || role == "bot" ||
         role == "sys";
}

inline Dialogue tgredial_dialogue(const SourceRecord& r) {
  const json& j = r.value;
  if (probe(j, {"goal_type_list"})) return durecdial_dialogue(r);
  const json* msgs = probe(j, {"messages", "conversation"});
  if (!msgs || !msgs->is_array())
    throw ParseError(r.source, r.line, "missing messages list");
  Dialogue d;
  if (const json* id = probe(j, {"conv_id", "dialogue_id", "id"}))
    d.dialogue_id = scalar_text(*id);
  else
    d.dialogue_id = std::filesystem::path(r.source).stem().string() + "-" +
                    std::to_string(r.line);
  d.profile.entries = profile_entries(probe(j, {"user_profile", "profile"}));
  for (const auto& m : *msgs) {
    if (!m.is_object()) throw ParseError(r.source, r.line, "message is not an object");
    Turn t;
    const json* role = probe(m, {"role", "speaker"});
    t.speaker = role && is_system_role(scalar_text(*role)) ? Speaker::system
                                                          : Speaker::user;
    if (const json* tx = probe(m, {"text", "utterance"})) t.text = scalar_text(*tx);
    t.goals = labels_of(probe(m, {"goal", "goals", "action"}));
    t.topics = labels_of(probe(m, {"topic", "topics"}));
    t.item_ids = labels_of(probe(m, {"movie", "movies", "items", "item_ids"}));
    d.turns.push_back(std::move(t));
  }
  return d;
}

inline std::map<std::string, std::string> item_names_near(
    const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  auto dir = std::filesystem::is_directory(path) ? path : path.parent_path();
  for (const char* f : {"movie_names.json", "id2name.json", "movies.json"}) {
    auto p = dir / f;
    if (!std::filesystem::exists(p)) continue;
    auto j = json::parse(read_file(p));
    for (const auto& [k, v] : j.items()) out[k] = scalar_text(v);
    break;
  }
  return out;
}

}  // namespace adapter_detail

/// Splits of a dataset; a single-file input is one split (train unless the
/// file name says otherwise).
inline std::map<Split, Corpus> load_corpus_splits(const std::filesystem::path& path,
                                                  CorpusFormat format) {
  using namespace adapter_detail;
  if (!std::filesystem::exists(path))
    throw Error("no such path: " + path.string());
  std::map<Split, Corpus> out;
  if (format == CorpusFormat::canonical_jsonl) {
    for (const auto& [split, files] : discover(path)) {
      for (const auto& f : files) {
        Corpus part = load_canonical_jsonl(f);
        Corpus& c = out[split];
        c.split = std::filesystem::is_directory(path) ? split : part.split;
        for (auto& d : part.dialogues) c.dialogues.push_back(std::move(d));
        c.goal_set.insert(c.goal_set.end(), part.goal_set.begin(), part.goal_set.end());
        c.topic_set.insert(c.topic_set.end(), part.topic_set.begin(), part.topic_set.end());
        c.item_catalog.insert(c.item_catalog.end(), part.item_catalog.begin(),
                              part.item_catalog.end());
      }
    }
    for (auto& [_, c] : out) {
      auto dedup = [](std::vector<std::string>& v) {
        std::unordered_set<std::string> seen;
        std::vector<std::string> keep;
        for (auto& s : v)
          if (seen.insert(s).second) keep.push_back(std::move(s));
        v = std::move(keep);
      };
      dedup(c.goal_set);
      dedup(c.topic_set);
      std::unordered_set<std::string> seen;
      std::vector<CatalogItem> items;
      for (auto& it : c.item_catalog)
        if (seen.insert(it.id).second) items.push_back(std::move(it));
      c.item_catalog = std::move(items);
    }
    return out;
  }

  auto names = format == CorpusFormat::tgredial ? item_names_near(path)
                                                : std::map<std::string, std::string>{};
  for (const auto& [split, files] : discover(path)) {
    Corpus& c = out[split];
    c.split = split;
    for (const auto& f : files)
      for (const auto& r : read_records(f))
        c.dialogues.push_back(format == CorpusFormat::durecdial
                                  ? durecdial_dialogue(r)
                                  : tgredial_dialogue(r));
  }
  // shared inventories over all splits, in first-seen order
  Corpus all;
  for (auto& [_, c] : out)
    for (const auto& d : c.dialogues) all.dialogues.push_back(d);
  collect_label_sets(all);
  for (auto& it : all.item_catalog)
    if (auto n = names.find(it.id); n != names.end()) it.name = n->second;
  for (auto& [_, c] : out) {
    c.goal_set = all.goal_set;
    c.topic_set = all.topic_set;
    c.item_catalog = all.item_catalog;
  }
  return out;
}

/// All splits merged into one corpus (train, dev, test order).
inline Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  auto parts = load_corpus_splits(path, format);
  if (parts.size() == 1) return std::move(parts.begin()->second);
  Corpus c;
  c.split = Split::train;
  for (auto& [_, p] : parts) {
    if (c.goal_set.empty()) {
      c.goal_set = p.goal_set;
      c.topic_set = p.topic_set;
      c.item_catalog = p.item_catalog;
    }
    for (auto& d : p.dialogues) c.dialogues.push_back(std::move(d));
  }
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& path, std::string_view format) {
  return load_corpus(path, parse_corpus_format(format));
}

}  // namespace mgcrs
