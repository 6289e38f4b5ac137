// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Input/target text construction for the four tasks and parsing of generated
// label sequences.
//
// Input layouts (segments separated by single spaces, prompt Z last):
//   G: {[goal] g_i} [user|system] c_i ...                                  Z
//   T: [profile] P  {[topic] k_i} [user|system] c_i ... [goal] g_t          Z
//   R: [profile] P  [user|system] c_i ...    [goal] g_t [topic] k_t         Z
//   D:              [user|system] c_i ...    [goal] g_t [topic] k_t [item] v Z
// Empty optional segments are omitted. When the length budget is exceeded the
// oldest context turns are dropped first; the profile goes only after every
// turn is gone; trailing segments and Z are never truncated.

#pragma once

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mgcrs/corpus.hpp"
#include "mgcrs/vocab.hpp"

namespace mgcrs {

enum class PromptKind { natural_language, special_token };

inline std::string_view to_string(PromptKind k) {
  return k == PromptKind::natural_language ? "natural_language"
                                           : "special_token";
}

inline PromptKind parse_prompt_kind(std::string_view s) {
  if (s == "natural_language" || s == "N") return PromptKind::natural_language;
  if (s == "special_token" || s == "S") return PromptKind::special_token;
  throw Error("unknown prompt strategy '" + std::string(s) + "'");
}

inline std::string_view prompt_text(PromptKind kind, Task task) {
  if (kind == PromptKind::natural_language) {
    switch (task) {
      case Task::G: return "Plan the next goal:";
      case Task::T: return "Predict the next topic:";
      case Task::R: return "Recommend an item:";
      case Task::D: return "Generate the response:";
    }
  }
  switch (task) {
    case Task::G: return tok::kGoal;
    case Task::T: return tok::kTopic;
    case Task::R: return tok::kItem;
    case Task::D: return tok::kSystem;
  }
  return {};
}

/// The four natural-language prompt sentences (for vocabulary coverage).
inline std::vector<std::string> natural_language_prompts() {
  std::vector<std::string> out;
  for (Task t : kAllTasks)
    out.emplace_back(prompt_text(PromptKind::natural_language, t));
  return out;
}

struct LengthBudget {
  std::size_t max_source = 512;
  std::size_t max_target = 100;
  std::size_t max_topic_context = 256;

  void validate() const {
    if (max_source == 0 || max_target == 0 || max_topic_context == 0)
      throw Error("length budgets must be positive");
    if (max_topic_context > max_source)
      throw Error("max_topic_context exceeds max_source");
  }
};

/// Upstream labels placed in the trailing segments. nullopt omits a segment.
struct Conditioning {
  std::optional<std::string> goal;
  std::optional<std::vector<std::string>> topics;
  std::optional<std::string> item_id;
};

inline Conditioning oracle_conditioning(const TaskExample& ex) {
  Conditioning c;
  if (!ex.oracle_goal.empty()) c.goal = ex.oracle_goal;
  if (!ex.oracle_topics.empty()) c.topics = ex.oracle_topics;
  if (!ex.oracle_items.empty()) c.item_id = ex.oracle_items.front();
  return c;
}

struct SerializedPair {
  Task task = Task::G;
  std::string input_text;
  std::string target_text;
  std::vector<int> input_ids;
  std::vector<int> target_ids;
};

/// Splits on the separator token, trims, drops empties and keeps the first
/// occurrence of each label.
inline std::vector<std::string> parse_labels(std::string_view text) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto pos = text.find(tok::kSep, start);
    auto end = pos == std::string_view::npos ? text.size() : pos;
    auto label = std::string(trim(text.substr(start, end - start)));
    if (!label.empty() && seen.insert(label).second) out.push_back(label);
    if (pos == std::string_view::npos) break;
    start = pos + tok::kSep.size();
  }
  return out;
}

struct ParsedLabels {
  std::vector<std::string> labels;
  /// Labels not found in the inventory; kept verbatim in `labels` as well.
  std::vector<std::string> out_of_inventory;
};

inline ParsedLabels parse_against(std::string_view text,
                                  std::span<const std::string> inventory) {
  ParsedLabels p;
  p.labels = parse_labels(text);
  std::unordered_set<std::string> inv(inventory.begin(), inventory.end());
  for (const auto& l : p.labels)
    if (!inv.count(l)) p.out_of_inventory.push_back(l);
  return p;
}

inline ParsedLabels parse_goal_output(std::string_view text,
                                      std::span<const std::string> goal_set) {
  return parse_against(text, goal_set);
}

inline ParsedLabels parse_topic_output(std::string_view text,
                                       std::span<const std::string> topic_set) {
  return parse_against(text, topic_set);
}

/// Knowledge triples whose head or tail equals a topic, rendered
/// "head relation tail" in kb order, greedily cut at a triple boundary once
/// the next triple would exceed `max_tokens`.
template <class CountFn>
std::string expand_topic_context(std::span<const std::string> topics,
                                 std::span<const Triple> kb,
                                 std::size_t max_tokens, CountFn&& count) {
  if (topics.empty() || kb.empty()) return {};
  std::unordered_set<std::string> wanted(topics.begin(), topics.end());
  std::string out;
  std::size_t used = 0;
  for (const auto& t : kb) {
    if (!wanted.count(t.head) && !wanted.count(t.tail)) continue;
    std::string rendered = t.head + " " + t.relation + " " + t.tail;
    std::size_t n = count(rendered);
    if (used + n > max_tokens) break;
    if (!out.empty()) out += ' ';
    out += rendered;
    used += n;
  }
  return out;
}

class Serializer {
 public:
  Serializer(const Vocabulary& vocab, CatalogIndex catalog, PromptKind kind,
             LengthBudget budget = {})
      : vocab_(&vocab), catalog_(std::move(catalog)), kind_(kind),
        budget_(budget) {
    budget_.validate();
  }

  PromptKind kind() const { return kind_; }
  const LengthBudget& budget() const { return budget_; }
  const Vocabulary& vocab() const { return *vocab_; }
  const CatalogIndex& catalog() const { return catalog_; }

  std::string build_target(const TaskExample& ex) const {
    switch (ex.task) {
      case Task::G: return ex.oracle_goal;
      case Task::T: return join_labels(ex.oracle_topics);
      case Task::R:
        if (ex.oracle_items.empty())
          throw Error("item target requested for an example without items");
        return render_item(ex.oracle_items.front());
      case Task::D: return ex.target_text;
    }
    return {};
  }

  /// "_<id>_ <name>" (name omitted when the catalog has none).
  std::string render_item(const std::string& item_id) const {
    std::string out = item_token(item_id);
    if (const auto* it = catalog_.find(item_id); it && !it->name.empty())
      out += " " + it->name;
    return out;
  }

  std::string build_input(const TaskExample& ex,
                          std::span<const Triple> kb = {}) const {
    return build_input(ex, kb, oracle_conditioning(ex));
  }

  std::string build_input(const TaskExample& ex, std::span<const Triple> kb,
                          const Conditioning& cond) const {
    std::vector<std::string> turns;
    turns.reserve(ex.context.size());
    for (std::size_t i = 0; i < ex.context.size(); ++i)
      turns.push_back(render_turn(ex, i));

    std::string leading;
    if ((ex.task == Task::T || ex.task == Task::R) && !ex.profile.empty())
      leading = std::string(tok::kProfile) + " " + join(ex.profile.entries, " ");

    std::vector<std::string> trailing;
    auto goal_seg = [&] {
      if (cond.goal && !cond.goal->empty())
        trailing.push_back(std::string(tok::kGoal) + " " + *cond.goal);
    };
    auto topic_seg = [&](bool expand) {
      if (!cond.topics || cond.topics->empty()) return;
      std::string body;
      if (expand && !kb.empty())
        body = expand_topic_context(
            *cond.topics, kb, budget_.max_topic_context,
            [&](const std::string& s) { return vocab_->count_tokens(s); });
      if (body.empty()) body = join_labels(*cond.topics);
      trailing.push_back(std::string(tok::kTopic) + " " + body);
    };
    switch (ex.task) {
      case Task::G: break;
      case Task::T: goal_seg(); break;
      case Task::R:
        goal_seg();
        topic_seg(false);
        break;
      case Task::D:
        goal_seg();
        topic_seg(true);
        if (cond.item_id && !cond.item_id->empty())
          trailing.push_back(std::string(tok::kItem) + " " +
                             render_item(*cond.item_id));
        break;
    }
    const std::string prompt(prompt_text(kind_, ex.task));

    std::size_t fixed = vocab_->count_tokens(prompt);
    for (const auto& s : trailing) fixed += vocab_->count_tokens(s);
    std::size_t lead_n = leading.empty() ? 0 : vocab_->count_tokens(leading);
    std::vector<std::size_t> turn_n;
    std::size_t turns_total = 0;
    for (const auto& s : turns) {
      turn_n.push_back(vocab_->count_tokens(s));
      turns_total += turn_n.back();
    }
    std::size_t first = 0;
    while (fixed + lead_n + turns_total > budget_.max_source &&
           first < turns.size())
      turns_total -= turn_n[first++];
    if (fixed + lead_n + turns_total > budget_.max_source) {
      leading.clear();
      lead_n = 0;
    }
    if (fixed > budget_.max_source)
      throw Error("length budget " + std::to_string(budget_.max_source) +
                  " cannot hold prompt and trailing segments (" +
                  std::to_string(fixed) + " tokens)");

    std::vector<std::string> parts;
    if (!leading.empty()) parts.push_back(std::move(leading));
    for (std::size_t i = first; i < turns.size(); ++i)
      parts.push_back(std::move(turns[i]));
    for (auto& s : trailing) parts.push_back(std::move(s));
    parts.push_back(prompt);
    return join(parts, " ");
  }

  SerializedPair serialize(const TaskExample& ex, std::span<const Triple> kb,
                           const Conditioning& cond) const {
    SerializedPair p;
    p.task = ex.task;
    p.input_text = build_input(ex, kb, cond);
    p.target_text = build_target(ex);
    p.input_ids = vocab_->encode(p.input_text);
    p.target_ids = vocab_->encode(p.target_text);
    if (p.target_ids.size() > budget_.max_target)
      p.target_ids.resize(budget_.max_target);
    return p;
  }

  SerializedPair serialize(const TaskExample& ex,
                           std::span<const Triple> kb = {}) const {
    return serialize(ex, kb, oracle_conditioning(ex));
  }

 private:
  std::string render_turn(const TaskExample& ex, std::size_t i) const {
    const Turn& t = ex.context[i];
    std::string out;
    auto annotate = [&](std::string_view seg, const std::string& labels) {
      if (labels.empty()) return;
      out += seg;
      out += ' ';
      out += labels;
      out += ' ';
    };
    if (ex.task == Task::G && i < ex.goal_history.size())
      annotate(tok::kGoal, ex.goal_history[i]);
    if (ex.task == Task::T && i < ex.topic_history.size())
      annotate(tok::kTopic, ex.topic_history[i]);
    out += t.speaker == Speaker::user ? tok::kUser : tok::kSystem;
    auto text = join(split_whitespace(t.text), " ");
    if (!text.empty()) {
      out += ' ';
      out += text;
    }
    return out;
  }

  const Vocabulary* vocab_;
  CatalogIndex catalog_;
  PromptKind kind_;
  LengthBudget budget_;
};

// Golden/interchange fixture: one {"task","input_text","target_text"} per line.
inline std::string pair_to_jsonl(const SerializedPair& p) {
  nlohmann::ordered_json j;
  j["task"] = std::string(1, task_letter(p.task));
  j["input_text"] = p.input_text;
  j["target_text"] = p.target_text;
  return j.dump() + "\n";
}

inline std::vector<SerializedPair> read_pairs_jsonl(
    const std::filesystem::path& path, const Vocabulary* vocab = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<SerializedPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      SerializedPair p;
      p.task = parse_task(j.at("task").get<std::string>());
      p.input_text = j.at("input_text").get<std::string>();
      p.target_text = j.at("target_text").get<std::string>();
      if (vocab) {
        p.input_ids = vocab->encode(p.input_text);
        p.target_ids = vocab->encode(p.target_text);
      }
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace mgcrs
