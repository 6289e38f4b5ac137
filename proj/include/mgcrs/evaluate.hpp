// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Scoring of pipeline predictions and the oracle-substitution ablation.

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mgcrs/metrics.hpp"
#include "mgcrs/pipeline.hpp"
#include "mgcrs/train.hpp"

namespace mgcrs {

struct EvalOptions {
  metrics::TokenRule rule = metrics::TokenRule::whitespace;
  std::vector<std::size_t> ks{1, 10, 50};
  /// Goal inventory; also the row order of the stratified table.
  std::vector<std::string> goal_set;
};

struct EvalReport {
  std::size_t turns = 0;
  std::optional<metrics::LabelScore> goal_macro, goal_micro;
  std::optional<metrics::LabelScore> topic;
  std::optional<double> topic_hit1;
  std::optional<metrics::RankScore> items;
  std::optional<metrics::GenerationScore> generation;
  std::vector<metrics::StratumRow> strata;
  std::size_t out_of_inventory = 0;
};

/// Which tasks a predictions list covers: a task is covered when any
/// prediction carries a value for it or ran its model (an empty output of a
/// model that ran is still a prediction).
inline std::array<bool, 4> task_coverage(std::span<const TurnPrediction> preds) {
  std::array<bool, 4> c{};
  for (const auto& p : preds) {
    c[0] = c[0] || !p.goal.empty() || !p.stage_input(Task::G).empty();
    c[1] = c[1] || !p.topics.empty() || !p.stage_input(Task::T).empty();
    c[2] = c[2] || p.ranked_items.has_value();
    c[3] = c[3] || !p.response.empty() || !p.stage_input(Task::D).empty();
  }
  return c;
}

inline EvalReport evaluate(std::span<const TurnPrediction> preds, const EvalOptions& opt,
                           std::optional<double> ppl = std::nullopt) {
  using namespace metrics;
  EvalReport r;
  r.turns = preds.size();
  const auto cov = task_coverage(preds);
  std::vector<Labels> pg, gg, pt, gt;
  std::vector<std::string> hyps, refs;
  std::vector<std::vector<std::string>> ranked;
  std::vector<std::string> gold_items;
  std::vector<EvalRecord> records;
  for (const auto& p : preds) {
    r.out_of_inventory += p.out_of_inventory.size();
    if (!p.gold_goal.empty()) {
      pg.push_back(p.goal);
      gg.push_back(p.gold_goal);
    }
    pt.push_back(p.topics);
    gt.push_back(p.gold_topics);
    hyps.push_back(p.response);
    refs.push_back(p.reference);
    if (!p.gold_items.empty()) {
      std::vector<std::string> ids;
      if (p.ranked_items)
        for (const auto& it : *p.ranked_items) ids.push_back(it.item_id);
      ranked.push_back(std::move(ids));
      gold_items.push_back(p.gold_items.front());
    }
    records.push_back({p.gold_goal, p.goal, p.gold_topics, p.topics, p.response, p.reference, ""});
  }
  if (cov[0] && !pg.empty()) {
    r.goal_macro = goal_macro_prf(pg, gg, opt.goal_set);
    r.goal_micro = goal_micro_prf(pg, gg);
  }
  if (cov[1]) {
    r.topic = topic_micro_prf(pt, gt);
    r.topic_hit1 = hit_at_1_generated(pt, gt);
  }
  if (cov[2] && !ranked.empty()) r.items = rank_scores(ranked, gold_items, opt.ks);
  if (cov[3]) {
    r.generation = generation_scores(hyps, refs, opt.rule);
    r.generation->ppl = ppl;
  }
  r.strata = stratify_by_goal_type(records, opt.goal_set, opt.rule);
  return r;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  using metrics::to_json;
  nlohmann::ordered_json j;
  j["turns"] = r.turns;
  if (r.goal_macro) j["goal"] = {{"macro", to_json(*r.goal_macro)}, {"micro", to_json(*r.goal_micro)}};
  if (r.topic) {
    j["topic"] = {{"micro", to_json(*r.topic)}, {"hit@1", *r.topic_hit1}};
  }
  if (r.items) j["item"] = to_json(*r.items);
  if (r.generation) j["response"] = to_json(*r.generation);
  auto strata = nlohmann::ordered_json::array();
  for (const auto& s : r.strata) strata.push_back(to_json(s));
  j["by_goal_type"] = std::move(strata);
  j["out_of_inventory_labels"] = r.out_of_inventory;
  return j;
}

inline std::string format_report(const EvalReport& r) {
  using metrics::fmt;
  std::vector<std::vector<std::string>> rows;
  if (r.goal_macro) {
    rows.push_back({"goal macro", fmt(r.goal_macro->score.p), fmt(r.goal_macro->score.r),
                    fmt(r.goal_macro->score.f1)});
    rows.push_back({"goal micro", fmt(r.goal_micro->score.p), fmt(r.goal_micro->score.r),
                    fmt(r.goal_micro->score.f1)});
  }
  if (r.topic)
    rows.push_back({"topic micro", fmt(r.topic->score.p), fmt(r.topic->score.r),
                    fmt(r.topic->score.f1)});
  std::string out = "turns: " + std::to_string(r.turns) + "\n\n";
  if (!rows.empty()) out += metrics::format_table({"labels", "P", "R", "F1"}, rows) + "\n";
  if (r.topic_hit1) out += "topic hit@1: " + fmt(*r.topic_hit1) + "\n\n";
  if (r.items) {
    std::vector<std::vector<std::string>> ir;
    for (const auto& [k, v] : r.items->ndcg)
      ir.push_back({std::to_string(k), fmt(v), fmt(r.items->mrr.at(k)), fmt(r.items->hit.at(k))});
    out += metrics::format_table({"item k", "NDCG", "MRR", "Hit"}, ir) + "\n";
  }
  if (r.generation) {
    const auto& g = *r.generation;
    out += metrics::format_table(
               {"response", "F1", "BLEU-1", "BLEU-2", "Dist-2", "PPL"},
               {{"", fmt(g.word_f1), fmt(g.bleu1), fmt(g.bleu2), fmt(g.dist2),
                 g.ppl ? fmt(*g.ppl, 2) : "-"}}) +
           "\n";
  }
  if (!r.strata.empty()) {
    std::vector<std::vector<std::string>> sr;
    for (const auto& s : r.strata)
      sr.push_back({s.goal_type, fmt(100 * s.share, 1) + "%", fmt(s.goal_f1), fmt(s.topic_f1),
                    fmt(s.generation.word_f1), fmt(s.generation.bleu1)});
    out += metrics::format_table({"goal type", "share", "goal F1", "topic F1", "F1", "BLEU-1"}, sr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

/// Oracle conditioning with skipped stages removed: the training inputs of a
/// response model that never sees those segments.
inline ConditioningFn skip_conditioning(const StageOverride& ov) {
  return [ov](const TaskExample& ex) {
    Conditioning c = oracle_conditioning(ex);
    if (ov[Task::G] == StageSource::skip) c.goal.reset();
    if (ov[Task::T] == StageSource::skip) c.topics.reset();
    if (ov[Task::R] == StageSource::skip) c.item_id.reset();
    return c;
  };
}

inline bool has_skip(const StageOverride& ov) {
  return std::any_of(ov.source.begin(), ov.source.end(),
                     [](StageSource s) { return s == StageSource::skip; });
}

struct AblationEntry {
  std::string name;
  StageOverride overrides;
  /// Response model for this row; null uses the pipeline's response model.
  const Backbone* response_model = nullptr;
};

struct AblationRow {
  std::string name;
  StageOverride overrides;
  metrics::GenerationScore generation;
  PropagationResult propagation;
};

/// The standard rows: full pipeline, gold upstream, history-only response,
/// and single-stage removal and substitution.
inline std::vector<AblationEntry> standard_ablation_suite() {
  std::vector<AblationEntry> s;
  s.push_back({"OracleGen", StageOverride::oracle_gen()});
  s.push_back({"pipeline", StageOverride::all_model()});
  s.push_back({"DirectGen", StageOverride::direct_gen()});
  s.push_back({"w/o goal", StageOverride::without(Task::G)});
  s.push_back({"w/o topic", StageOverride::without(Task::T)});
  s.push_back({"w/o item", StageOverride::without(Task::R)});
  s.push_back({"oracle goal", StageOverride::oracle_at(Task::G)});
  s.push_back({"oracle topic", StageOverride::oracle_at(Task::T)});
  s.push_back({"oracle item", StageOverride::oracle_at(Task::R)});
  return s;
}

/// Checkpoint name of the response model trained for a skip pattern.
inline std::string skip_model_name(const StageOverride& ov) {
  std::string s = "theta_D_wo_";
  for (Task t : {Task::G, Task::T, Task::R})
    if (ov[t] == StageSource::skip) s += task_letter(t);
  return s;
}

/// Response models retrained from `theta` for every distinct skip pattern in
/// the suite, keyed by skip_model_name.
inline std::map<std::string, Backbone> train_skip_models(const Backbone& theta,
                                                         const TrainContext& ctx,
                                                         std::span<const AblationEntry> suite) {
  std::map<std::string, Backbone> out;
  for (const auto& e : suite) {
    if (!has_skip(e.overrides)) continue;
    auto name = skip_model_name(e.overrides);
    if (out.count(name)) continue;
    auto [model, run] = prompt_tune(theta, Task::D, ctx, skip_conditioning(e.overrides), name);
    out.emplace(name, std::move(model));
  }
  return out;
}

/// Points every skip row at its retrained response model.
inline void use_skip_models(std::vector<AblationEntry>& suite,
                            const std::map<std::string, Backbone>& models) {
  for (auto& e : suite) {
    if (!has_skip(e.overrides)) continue;
    auto it = models.find(skip_model_name(e.overrides));
    if (it == models.end())
      throw Error("no response model trained for '" + e.name + "' (" + skip_model_name(e.overrides) + ")");
    e.response_model = &it->second;
  }
}

/// Perplexity of a response model on gold-conditioned response targets.
inline double response_perplexity(Backbone& model, const Corpus& c, const Serializer& ser) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (auto& p : serialize_task(c, Task::D, ser)) pairs.emplace_back(p.input_text, p.target_text);
  return metrics::perplexity(model, std::span<const std::pair<std::string, std::string>>(pairs));
}

/// One row per entry, each scoring the responses of every test turn.
inline std::vector<AblationRow> run_ablation(const Pipeline& pipe, const Corpus& test,
                                             std::span<const AblationEntry> suite,
                                             const EvalOptions& opt = {},
                                             const PredictionIndex* external = nullptr,
                                             std::size_t limit = 0,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  if (suite.empty()) throw Error("ablation suite is empty");
  std::vector<AblationRow> rows;
  for (const auto& e : suite) {
    auto preds = pipe.run_corpus(test, e.overrides, external, e.response_model, limit);
    std::vector<std::string> hyps, refs;
    for (const auto& p : preds) {
      hyps.push_back(p.response);
      refs.push_back(p.reference);
    }
    AblationRow row;
    row.name = e.name;
    row.overrides = e.overrides;
    row.generation = metrics::generation_scores(hyps, refs, opt.rule);
    if (pipe.serializer()) row.propagation = measure_propagation(preds, test, *pipe.serializer());
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::ordered_json to_json(const AblationRow& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  nlohmann::ordered_json src;
  for (Task t : kAllTasks) src[std::string(1, task_letter(t))] = std::string(to_string(r.overrides[t]));
  j["sources"] = std::move(src);
  j["response"] = metrics::to_json(r.generation);
  j["em"] = {{"T", r.propagation.em(Task::T)},
             {"R", r.propagation.em(Task::R)},
             {"D", r.propagation.em(Task::D)}};
  return j;
}

inline std::string format_ablation(std::span<const AblationRow> rows) {
  using metrics::fmt;
  std::vector<std::vector<std::string>> t;
  for (const auto& r : rows)
    t.push_back({r.name, fmt(r.generation.word_f1), fmt(r.generation.bleu1),
                 fmt(r.generation.bleu2), fmt(r.generation.dist2),
                 fmt(100 * r.propagation.em(Task::D), 2) + "%"});
  return metrics::format_table({"configuration", "F1", "BLEU-1", "BLEU-2", "Dist-2", "EM(D)"}, t);
}

}  // namespace mgcrs
