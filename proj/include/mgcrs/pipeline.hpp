// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Sequential inference: goal -> topic -> item -> response, each stage's
// prediction conditioning the next stage's input. Every stage can instead
// take the gold annotation (oracle), a predictions file (external), or be
// hidden from the response input (skip).
//
// Skip semantics: a skipped stage contributes nothing to the response input.
// If a later non-response stage runs the model and needs the skipped stage's
// labels, the skipped stage still runs the model to condition it.
//
// Predictions JSONL, one object per system turn:
//   {"dialogue_id", "turn_index", "goal": [..], "topics": [..],
//    "items": [{"id", "p"}] | null, "response",
//    "stage_inputs": {"G", "T", "R", "D"},  (empty when the stage did not run)
//    "gold": {"goal": [..], "topics": [..], "items": [..], "response"}}

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mgcrs/backbone.hpp"
#include "mgcrs/corpus.hpp"
#include "mgcrs/serialize.hpp"
#include "mgcrs/train.hpp"

namespace mgcrs {

enum class StageSource { model, oracle, external, skip };

inline std::string_view to_string(StageSource s) {
  switch (s) {
    case StageSource::model: return "model";
    case StageSource::oracle: return "oracle";
    case StageSource::external: return "external";
    case StageSource::skip: return "skip";
  }
  return "model";
}

inline StageSource parse_stage_source(std::string_view s) {
  if (s == "model") return StageSource::model;
  if (s == "oracle") return StageSource::oracle;
  if (s == "external") return StageSource::external;
  if (s == "skip") return StageSource::skip;
  throw Error("unknown stage source '" + std::string(s) + "'");
}

struct StageOverride {
  std::array<StageSource, 4> source{StageSource::model, StageSource::model,
                                    StageSource::model, StageSource::model};

  StageSource operator[](Task t) const { return source[static_cast<std::size_t>(t)]; }
  StageSource& operator[](Task t) { return source[static_cast<std::size_t>(t)]; }

  void validate() const {
    if ((*this)[Task::D] == StageSource::skip) throw Error("the response stage cannot be skipped");
  }

  static StageOverride all_model() { return {}; }
  /// Gold goal, topics and item; model response.
  static StageOverride oracle_gen() {
    StageOverride o;
    o[Task::G] = o[Task::T] = o[Task::R] = StageSource::oracle;
    return o;
  }
  /// Response from the dialogue history only.
  static StageOverride direct_gen() {
    StageOverride o;
    o[Task::G] = o[Task::T] = o[Task::R] = StageSource::skip;
    return o;
  }
  static StageOverride without(Task t) {
    StageOverride o;
    o[t] = StageSource::skip;
    return o;
  }
  static StageOverride oracle_at(Task t) {
    StageOverride o;
    o[t] = StageSource::oracle;
    return o;
  }
};

using Labels = std::vector<std::string>;

struct TurnPrediction {
  std::string dialogue_id;
  int turn_index = 0;
  Labels goal;
  Labels topics;
  std::optional<std::vector<RankedItem>> ranked_items;
  std::string response;
  std::array<std::string, 4> stage_inputs;  // empty: stage did not run the model
  Labels out_of_inventory;                  // generated goal/topic labels
  // gold annotations of the turn
  Labels gold_goal;
  Labels gold_topics;
  Labels gold_items;
  std::string reference;

  const std::string& stage_input(Task t) const { return stage_inputs[static_cast<std::size_t>(t)]; }
};

struct PipelineConfig {
  PromptKind prompt = PromptKind::special_token;
  LengthBudget budget;
  /// A goal label triggers the item stage when it contains one of these
  /// (ASCII case-insensitive).
  std::vector<std::string> recommendation_keywords{"recommend", "推荐"};
  DecodeConfig goal_decode = DecodeConfig::greedy(100);
  DecodeConfig topic_decode = DecodeConfig::greedy(100);
  DecodeConfig response_decode = DecodeConfig::beam(4, 100);
  /// Ranked items retained per prediction (0 keeps all).
  std::size_t keep_items = 50;
};

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool is_recommendation_goal(std::string_view goal, const std::vector<std::string>& keywords) {
  const std::string g = ascii_lower(goal);
  for (const auto& k : keywords)
    if (!k.empty() && g.find(ascii_lower(k)) != std::string::npos) return true;
  return false;
}

/// Models serving each stage; null where the stage never runs a model.
struct StageModels {
  std::array<const Backbone*, 4> model{nullptr, nullptr, nullptr, nullptr};

  const Backbone* operator[](Task t) const { return model[static_cast<std::size_t>(t)]; }
  const Backbone*& operator[](Task t) { return model[static_cast<std::size_t>(t)]; }

  static StageModels from(const ModelSet& set) {
    StageModels m;
    for (Task t : kAllTasks) m[t] = set.for_task(t);
    return m;
  }
};

/// Predictions keyed by (dialogue_id, turn_index), the external stage source.
using PredictionIndex = std::map<std::pair<std::string, int>, TurnPrediction>;

class Pipeline {
 public:
  Pipeline(const Corpus& inventory, StageModels models, PipelineConfig cfg = {})
      : goal_set_(inventory.goal_set), topic_set_(inventory.topic_set),
        catalog_(inventory.item_catalog), models_(models), cfg_(std::move(cfg)) {
    const Backbone* any = nullptr;
    for (Task t : kAllTasks)
      if (models_[t]) {
        if (any && models_[t]->vocab().digest() != any->vocab().digest())
          throw Error("stage models use different vocabularies");
        any = models_[t];
      }
    if (any) serializer_.emplace(any->vocab(), CatalogIndex(catalog_), cfg_.prompt, cfg_.budget);
  }

  const PipelineConfig& config() const { return cfg_; }
  const Serializer* serializer() const { return serializer_ ? &*serializer_ : nullptr; }

  /// Runs the stages for system turn `t` of `d`.
  TurnPrediction run_turn(const Dialogue& d, std::size_t t, const StageOverride& ov,
                          const PredictionIndex* external = nullptr,
                          const Backbone* response_model = nullptr) const {
    ov.validate();
    if (t >= d.turns.size() || d.turns[t].speaker != Speaker::system)
      throw Error("run_turn needs a system turn");
    const Turn& gold = d.turns[t];
    TurnPrediction p;
    p.dialogue_id = d.dialogue_id;
    p.turn_index = static_cast<int>(t);
    p.gold_goal = gold.goals;
    p.gold_topics = gold.topics;
    p.gold_items = gold.item_ids;
    p.reference = gold.text;

    const TurnPrediction* ext = nullptr;
    if (external) {
      auto it = external->find({d.dialogue_id, static_cast<int>(t)});
      if (it != external->end()) ext = &it->second;
    }
    auto need_ext = [&](Task task) -> const TurnPrediction& {
      if (!ext)
        throw Error(std::string("no external prediction for stage ") + task_letter(task) +
                    " at " + d.dialogue_id + ":" + std::to_string(t));
      return *ext;
    };
    // a skipped stage still runs when a later non-response model stage needs it
    auto runs_hidden = [&](Task task) {
      for (Task later : kAllTasks)
        if (static_cast<int>(later) > static_cast<int>(task) && later != Task::D &&
            ov[later] == StageSource::model)
          return true;
      return false;
    };
    auto example = [&](Task task) {
      // built as a response example so the target needs no item
      auto ex = make_example(Task::D, d, t, CatalogIndex{});
      ex.task = task;
      return ex;
    };

    // goal
    bool goal_known = false;
    switch (ov[Task::G]) {
      case StageSource::oracle: p.goal = gold.goals; goal_known = true; break;
      case StageSource::external: p.goal = need_ext(Task::G).goal; goal_known = true; break;
      case StageSource::skip:
        if (!runs_hidden(Task::G)) break;
        [[fallthrough]];
      case StageSource::model: {
        auto in = ser(Task::G).build_input(example(Task::G), d.kb, Conditioning{});
        auto out = model(Task::G).generate(in, cfg_.goal_decode);
        auto parsed = parse_goal_output(out.text, goal_set_);
        p.goal = parsed.labels;
        add_oov(p, parsed);
        p.stage_inputs[0] = std::move(in);
        goal_known = true;
        break;
      }
    }

    // topics
    bool topics_known = false;
    switch (ov[Task::T]) {
      case StageSource::oracle: p.topics = gold.topics; topics_known = true; break;
      case StageSource::external: p.topics = need_ext(Task::T).topics; topics_known = true; break;
      case StageSource::skip:
        if (!runs_hidden(Task::T)) break;
        [[fallthrough]];
      case StageSource::model: {
        Conditioning c;
        if (goal_known && !p.goal.empty()) c.goal = join_labels(p.goal);
        auto in = ser(Task::T).build_input(example(Task::T), d.kb, c);
        auto out = model(Task::T).generate(in, cfg_.topic_decode);
        auto parsed = parse_topic_output(out.text, topic_set_);
        p.topics = parsed.labels;
        add_oov(p, parsed);
        p.stage_inputs[1] = std::move(in);
        topics_known = true;
        break;
      }
    }

    // items
    switch (ov[Task::R]) {
      case StageSource::oracle:
        if (!gold.item_ids.empty()) p.ranked_items = std::vector<RankedItem>{{gold.item_ids.front(), 1.0}};
        break;
      case StageSource::external: {
        const auto& e = need_ext(Task::R);
        if (e.ranked_items) p.ranked_items = e.ranked_items;
        break;
      }
      case StageSource::skip:
        break;  // nothing downstream but the response consumes items
      case StageSource::model: {
        if (!recommends(p.goal)) break;
        Conditioning c;
        if (goal_known && !p.goal.empty()) c.goal = join_labels(p.goal);
        if (topics_known && !p.topics.empty()) c.topics = p.topics;
        auto in = ser(Task::R).build_input(example(Task::R), d.kb, c);
        auto ranked = model(Task::R).rank_items(in, catalog_);
        if (cfg_.keep_items && ranked.size() > cfg_.keep_items) ranked.resize(cfg_.keep_items);
        p.ranked_items = std::move(ranked);
        p.stage_inputs[2] = std::move(in);
        break;
      }
    }

    // response
    {
      Conditioning c;
      if (ov[Task::G] != StageSource::skip && !p.goal.empty()) c.goal = join_labels(p.goal);
      if (ov[Task::T] != StageSource::skip && !p.topics.empty()) c.topics = p.topics;
      if (ov[Task::R] != StageSource::skip && p.ranked_items && !p.ranked_items->empty())
        c.item_id = p.ranked_items->front().item_id;
      switch (ov[Task::D]) {
        case StageSource::oracle: p.response = gold.text; break;
        case StageSource::external: p.response = need_ext(Task::D).response; break;
        case StageSource::skip: break;
        case StageSource::model: {
          const Backbone& m = response_model ? *response_model : model(Task::D);
          auto in = ser(Task::D).build_input(example(Task::D), d.kb, c);
          p.response = m.generate(in, cfg_.response_decode).text;
          p.stage_inputs[3] = std::move(in);
          break;
        }
      }
    }
    return p;
  }

  /// All system turns of a corpus that have a response, in corpus order.
  std::vector<TurnPrediction> run_corpus(const Corpus& c, const StageOverride& ov,
                                         const PredictionIndex* external = nullptr,
                                         const Backbone* response_model = nullptr,
                                         std::size_t limit = 0) const {
    std::vector<TurnPrediction> out;
    for (const auto& d : c.dialogues)
      for (std::size_t t = 0; t < d.turns.size(); ++t) {
        if (!emits_example(Task::D, d.turns[t])) continue;
        if (limit && out.size() >= limit) return out;
        out.push_back(run_turn(d, t, ov, external, response_model));
      }
    return out;
  }

  bool recommends(const Labels& goals) const {
    return std::any_of(goals.begin(), goals.end(), [&](const std::string& g) {
      return is_recommendation_goal(g, cfg_.recommendation_keywords);
    });
  }

 private:
  const Backbone& model(Task t) const {
    if (!models_[t])
      throw Error(std::string("no checkpoint loaded for stage ") + task_letter(t));
    return *models_[t];
  }
  const Serializer& ser(Task t) const {
    if (!serializer_)
      throw Error(std::string("no checkpoint loaded for stage ") + task_letter(t));
    return *serializer_;
  }
  static void add_oov(TurnPrediction& p, const ParsedLabels& parsed) {
    for (const auto& l : parsed.out_of_inventory) p.out_of_inventory.push_back(l);
  }

  std::vector<std::string> goal_set_, topic_set_;
  std::vector<CatalogItem> catalog_;
  StageModels models_;
  PipelineConfig cfg_;
  std::optional<Serializer> serializer_;
};

// ---------------------------------------------------------------------------
// Input-sequence exact match

struct PropagationResult {
  // per stage T, R, D: matches / turns considered
  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};

  double em(Task t) const {
    auto i = static_cast<std::size_t>(t);
    return total[i] ? static_cast<double>(matched[i]) / static_cast<double>(total[i]) : 0.0;
  }
};

/// Fraction of turns whose model-fed input equals the input built from gold
/// upstream labels. Stage R counts turns with gold items only.
inline PropagationResult measure_propagation(std::span<const TurnPrediction> preds,
                                             const Corpus& gold, const Serializer& ser) {
  std::map<std::string, const Dialogue*> by_id;
  for (const auto& d : gold.dialogues) by_id[d.dialogue_id] = &d;
  PropagationResult r;
  for (const auto& p : preds) {
    auto it = by_id.find(p.dialogue_id);
    if (it == by_id.end()) throw Error("prediction for unknown dialogue " + p.dialogue_id);
    const Dialogue& d = *it->second;
    const auto t = static_cast<std::size_t>(p.turn_index);
    for (Task task : {Task::T, Task::R, Task::D}) {
      if (task == Task::R && d.turns[t].item_ids.empty()) continue;
      auto ex = make_example(Task::D, d, t, CatalogIndex{});
      ex.task = task;
      auto oracle = ser.build_input(ex, d.kb, oracle_conditioning(ex));
      auto i = static_cast<std::size_t>(task);
      ++r.total[i];
      if (p.stage_inputs[i] == oracle) ++r.matched[i];
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Predictions file

inline nlohmann::ordered_json to_json(const TurnPrediction& p) {
  nlohmann::ordered_json j;
  j["dialogue_id"] = p.dialogue_id;
  j["turn_index"] = p.turn_index;
  j["goal"] = p.goal;
  j["topics"] = p.topics;
  if (p.ranked_items) {
    auto items = nlohmann::ordered_json::array();
    for (const auto& it : *p.ranked_items) items.push_back({{"id", it.item_id}, {"p", it.prob}});
    j["items"] = std::move(items);
  } else {
    j["items"] = nullptr;
  }
  j["response"] = p.response;
  nlohmann::ordered_json in;
  for (Task t : kAllTasks) in[std::string(1, task_letter(t))] = p.stage_input(t);
  j["stage_inputs"] = std::move(in);
  if (!p.out_of_inventory.empty()) j["out_of_inventory"] = p.out_of_inventory;
  j["gold"] = {{"goal", p.gold_goal},
               {"topics", p.gold_topics},
               {"items", p.gold_items},
               {"response", p.reference}};
  return j;
}

inline TurnPrediction prediction_from_json(const nlohmann::ordered_json& j) {
  TurnPrediction p;
  p.dialogue_id = j.at("dialogue_id").get<std::string>();
  p.turn_index = j.at("turn_index").get<int>();
  p.goal = j.value("goal", Labels{});
  p.topics = j.value("topics", Labels{});
  if (j.contains("items") && !j.at("items").is_null()) {
    std::vector<RankedItem> items;
    for (const auto& it : j.at("items"))
      items.push_back({it.at("id").get<std::string>(), it.value("p", 0.0)});
    p.ranked_items = std::move(items);
  }
  p.response = j.value("response", "");
  if (j.contains("stage_inputs"))
    for (Task t : kAllTasks)
      p.stage_inputs[static_cast<std::size_t>(t)] =
          j.at("stage_inputs").value(std::string(1, task_letter(t)), "");
  p.out_of_inventory = j.value("out_of_inventory", Labels{});
  if (j.contains("gold")) {
    const auto& g = j.at("gold");
    p.gold_goal = g.value("goal", Labels{});
    p.gold_topics = g.value("topics", Labels{});
    p.gold_items = g.value("items", Labels{});
    p.reference = g.value("response", "");
  }
  return p;
}

inline void write_predictions(const std::filesystem::path& path,
                              std::span<const TurnPrediction> preds) {
  std::string s;
  for (const auto& p : preds) s += to_json(p).dump() + "\n";
  write_file(path, s);
}

inline std::vector<TurnPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<TurnPrediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

inline PredictionIndex index_predictions(std::vector<TurnPrediction> preds) {
  PredictionIndex idx;
  for (auto& p : preds) {
    auto key = std::make_pair(p.dialogue_id, p.turn_index);
    idx.emplace(std::move(key), std::move(p));
  }
  return idx;
}

/// Copies gold annotations from the corpus into predictions (for files
/// written by external systems without a "gold" block).
inline void attach_gold(std::vector<TurnPrediction>& preds, const Corpus& c) {
  std::map<std::string, const Dialogue*> by_id;
  for (const auto& d : c.dialogues) by_id[d.dialogue_id] = &d;
  for (auto& p : preds) {
    auto it = by_id.find(p.dialogue_id);
    if (it == by_id.end()) throw Error("prediction for unknown dialogue " + p.dialogue_id);
    const auto& turns = it->second->turns;
    if (p.turn_index < 0 || static_cast<std::size_t>(p.turn_index) >= turns.size())
      throw Error("prediction turn index out of range for " + p.dialogue_id);
    const Turn& g = turns[static_cast<std::size_t>(p.turn_index)];
    p.gold_goal = g.goals;
    p.gold_topics = g.topics;
    p.gold_items = g.item_ids;
    p.reference = g.text;
  }
}

}  // namespace mgcrs
