// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// One JSON document holding every tunable default; a file overlays it key by
// key and command-line flags overlay the file.

#pragma once

#include <chrono>
#include <filesystem>

#include "mgcrs/evaluate.hpp"
#include "mgcrs/synthetic.hpp"

namespace mgcrs {

struct DataConfig {
  double train_frac = 0.8;
  double dev_frac = 0.1;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::chrono::seconds idle_timeout{1800};
  std::size_t top_items = 5;
};

struct AppConfig {
  SynthConfig synth{};
  DataConfig data{};
  ModelConfig model{};
  TrainConfig train{};
  PipelineConfig pipeline{};
  EvalOptions eval{};
  std::size_t bootstrap_resamples = 1000;
  ServeConfig serve{};
};

inline nlohmann::ordered_json to_json(const DecodeConfig& d) {
  return {{"mode", d.mode == DecodeConfig::Mode::beam ? "beam" : "greedy"},
          {"beam_width", d.beam_width},
          {"max_length", d.max_length}};
}

inline DecodeConfig decode_config_from_json(const nlohmann::ordered_json& j, DecodeConfig d) {
  if (j.contains("mode")) {
    auto m = j.at("mode").get<std::string>();
    if (m != "greedy" && m != "beam") throw Error("decode mode must be greedy or beam, got '" + m + "'");
    d.mode = m == "beam" ? DecodeConfig::Mode::beam : DecodeConfig::Mode::greedy;
  }
  d.beam_width = j.value("beam_width", d.beam_width);
  d.max_length = j.value("max_length", d.max_length);
  d.validate();
  return d;
}

inline nlohmann::ordered_json to_json(const AppConfig& c) {
  nlohmann::ordered_json j;
  j["synth"] = {{"dialogues", c.synth.n_dialogues},
                {"goals", c.synth.n_goals},
                {"topics", c.synth.n_topics},
                {"items", c.synth.n_items},
                {"turns", c.synth.turns_per_dialogue}};
  j["data"] = {{"train_frac", c.data.train_frac}, {"dev_frac", c.data.dev_frac}};
  auto model = to_json(c.model);
  model.erase("vocab_size");  // fixed by the vocabulary
  j["model"] = std::move(model);
  j["train"] = to_json(c.train);
  j["pipeline"] = {{"recommendation_keywords", c.pipeline.recommendation_keywords},
                   {"goal_decode", to_json(c.pipeline.goal_decode)},
                   {"topic_decode", to_json(c.pipeline.topic_decode)},
                   {"response_decode", to_json(c.pipeline.response_decode)},
                   {"keep_items", c.pipeline.keep_items}};
  j["eval"] = {{"tokenize", c.eval.rule == metrics::TokenRule::character ? "character" : "whitespace"},
               {"ks", c.eval.ks},
               {"bootstrap_resamples", c.bootstrap_resamples}};
  j["serve"] = {{"host", c.serve.host},
                {"port", c.serve.port},
                {"idle_timeout_seconds", c.serve.idle_timeout.count()},
                {"top_items", c.serve.top_items}};
  return j;
}

inline metrics::TokenRule parse_token_rule(std::string_view s) {
  if (s == "whitespace") return metrics::TokenRule::whitespace;
  if (s == "character") return metrics::TokenRule::character;
  throw Error("tokenize must be whitespace or character, got '" + std::string(s) + "'");
}

/// Overlays `j` onto `c`; unknown sections or keys are errors so typos do not
/// silently fall back to defaults.
inline AppConfig app_config_from_json(const nlohmann::ordered_json& j, AppConfig c = {}) {
  const auto known = to_json(AppConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw Error("unknown config section '" + it.key() + "'");
    if (!it.value().is_object()) throw Error("config section '" + it.key() + "' must be an object");
    for (auto k = it.value().begin(); k != it.value().end(); ++k)
      if (!known[it.key()].contains(k.key()) && !(it.key() == "model" && k.key() == "vocab_size"))
        throw Error("unknown config key '" + it.key() + "." + k.key() + "'");
  }
  try {
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      c.synth.n_dialogues = s.value("dialogues", c.synth.n_dialogues);
      c.synth.n_goals = s.value("goals", c.synth.n_goals);
      c.synth.n_topics = s.value("topics", c.synth.n_topics);
      c.synth.n_items = s.value("items", c.synth.n_items);
      c.synth.turns_per_dialogue = s.value("turns", c.synth.turns_per_dialogue);
    }
    if (j.contains("data")) {
      c.data.train_frac = j["data"].value("train_frac", c.data.train_frac);
      c.data.dev_frac = j["data"].value("dev_frac", c.data.dev_frac);
    }
    if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
    if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      c.pipeline.recommendation_keywords =
          p.value("recommendation_keywords", c.pipeline.recommendation_keywords);
      if (p.contains("goal_decode"))
        c.pipeline.goal_decode = decode_config_from_json(p["goal_decode"], c.pipeline.goal_decode);
      if (p.contains("topic_decode"))
        c.pipeline.topic_decode = decode_config_from_json(p["topic_decode"], c.pipeline.topic_decode);
      if (p.contains("response_decode"))
        c.pipeline.response_decode =
            decode_config_from_json(p["response_decode"], c.pipeline.response_decode);
      c.pipeline.keep_items = p.value("keep_items", c.pipeline.keep_items);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      if (e.contains("tokenize")) c.eval.rule = parse_token_rule(e["tokenize"].get<std::string>());
      c.eval.ks = e.value("ks", c.eval.ks);
      c.bootstrap_resamples = e.value("bootstrap_resamples", c.bootstrap_resamples);
    }
    if (j.contains("serve")) {
      const auto& s = j["serve"];
      c.serve.host = s.value("host", c.serve.host);
      c.serve.port = s.value("port", c.serve.port);
      c.serve.idle_timeout =
          std::chrono::seconds(s.value("idle_timeout_seconds", c.serve.idle_timeout.count()));
      c.serve.top_items = s.value("top_items", c.serve.top_items);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad config value: ") + e.what());
  }
  c.train.validate();
  c.pipeline.prompt = c.train.prompt;
  c.pipeline.budget = c.train.budget;
  return c;
}

inline AppConfig load_app_config(const std::filesystem::path& p) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p.string(), 0, e.what());
  }
  return app_config_from_json(j);
}

}  // namespace mgcrs
