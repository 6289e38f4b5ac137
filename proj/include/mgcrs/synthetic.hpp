// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic synthetic corpora whose generating process is learnable:
//
//   next goal   = transition[previous goal][keyword in last user utterance]
//   topics      = (profile entry picked by the goal, companion topic of goal)
//                 or none for greeting-like goals
//   item        = fixed hash of the topic pair, only for recommendation goals
//   system text = goal template rendered with topics and item name
//
// User turns carry the goal in force when they were uttered (the previous
// system goal, or the initial goal for the opening turn). The initial goal is
// drawn from the stationary distribution of the transition chain, so every
// system turn's goal is marginally stationary.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "mgcrs/corpus.hpp"

namespace mgcrs {

struct SynthConfig {
  std::size_t n_dialogues = 2000;
  std::size_t n_goals = 6;
  std::size_t n_topics = 50;
  std::size_t n_items = 200;
  std::size_t turns_per_dialogue = 8;
};

namespace synth_detail {

inline constexpr std::size_t kKeywords = 4;
inline constexpr std::size_t kProfileSize = 3;

inline constexpr std::array<std::string_view, 9> kGoalNames = {
    "greeting",       "chit chat",          "movie recommendation",
    "question answering", "ask preference", "music recommendation",
    "farewell",       "news sharing",       "food recommendation"};

inline constexpr std::array<std::string_view, 8> kKeywordWords = {
    "sure", "hmm", "okay", "really", "well", "yes", "right", "fine"};

inline constexpr std::array<std::string_view, 5> kFillers = {
    "that sounds good", "tell me more", "i see", "go on", "interesting"};

inline constexpr std::array<std::string_view, 10> kSyllables = {
    "ka", "lo", "mi", "re", "su", "ta", "ne", "vo", "di", "pa"};

inline constexpr std::array<std::string_view, 16> kAdjectives = {
    "quiet", "golden", "silver", "hidden", "broken", "lost", "bright",
    "frozen", "wild", "secret", "distant", "crimson", "gentle", "hollow",
    "endless", "northern"};

inline constexpr std::array<std::string_view, 16> kNouns = {
    "river", "garden", "witness", "harbor", "mirror", "forest", "letter",
    "island", "voyage", "tower", "shadow", "melody", "lantern", "valley",
    "orchard", "signal"};

// Pattern p = goal % 6. Patterns 0 take no topics; 2 and 5 recommend.
inline bool has_topics(std::size_t goal) { return goal % 6 != 0; }
inline bool recommends(std::size_t goal) { return goal % 3 == 2; }

inline std::string goal_name(std::size_t g) {
  if (g < kGoalNames.size()) return std::string(kGoalNames[g]);
  if (recommends(g)) return "recommendation " + std::to_string(g);
  return "goal " + std::to_string(g);
}

inline std::string topic_name(std::size_t i) {
  // base-10 digits spelled as syllables, at least two, plus a fixed coda
  std::string s;
  std::size_t v = i;
  int digits = 0;
  do {
    s += kSyllables[v % 10];
    v /= 10;
    ++digits;
  } while (v > 0 || digits < 2);
  return s + "n";
}

inline std::string item_name(std::size_t i) {
  std::string s = "the " + std::string(kAdjectives[i % 16]) + " " +
                  std::string(kNouns[(i / 16) % 16]);
  if (i >= 256) s += " " + std::to_string(i / 256);
  return s;
}

inline std::string render_response(std::size_t goal,
                                   const std::vector<std::string>& topics,
                                   const std::string& item) {
  const std::string t1 = topics.size() > 0 ? topics[0] : "";
  const std::string t2 = topics.size() > 1 ? topics[1] : t1;
  switch (goal % 6) {
    case 0: return "hello there nice to meet you";
    case 1: return "let us chat about " + t1 + " and also " + t2;
    case 2: return "you should try " + item + " because you like " + t1 +
                   " and " + t2;
    case 3: return "the answer about " + t1 + " relates to " + t2;
    case 4: return "do you prefer " + t1 + " or " + t2 + " today";
    default: return "i recommend " + item + " for fans of " + t1 + " and " + t2;
  }
}

struct Tables {
  // transition[g][k]
  std::vector<std::array<std::size_t, kKeywords>> transition;
  std::vector<std::size_t> companion;  // per goal
  std::vector<double> stationary;
};

inline Tables make_tables(Rng& rng, const SynthConfig& cfg) {
  Tables t;
  const std::size_t n = cfg.n_goals;
  t.transition.resize(n);
  for (std::size_t g = 0; g < n; ++g) {
    // keyword 0 walks the cycle, keyword 1 stays: irreducible and aperiodic
    t.transition[g][0] = (g + 1) % n;
    t.transition[g][1] = g;
    for (std::size_t k = 2; k < kKeywords; ++k)
      t.transition[g][k] = rng.below(n);
  }
  t.companion.resize(n);
  for (std::size_t g = 0; g < n; ++g) t.companion[g] = rng.below(cfg.n_topics);

  // power iteration; the chain mixes in a handful of steps for small n
  std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
  for (int it = 0; it < 10000; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t g = 0; g < n; ++g)
      for (std::size_t k = 0; k < kKeywords; ++k)
        next[t.transition[g][k]] += pi[g] / static_cast<double>(kKeywords);
    double diff = 0;
    for (std::size_t g = 0; g < n; ++g) diff += std::abs(next[g] - pi[g]);
    pi.swap(next);
    if (diff < 1e-15) break;
  }
  t.stationary = std::move(pi);
  return t;
}

inline std::size_t item_for(std::size_t primary, std::size_t secondary,
                            std::uint64_t salt, std::size_t n_items) {
  std::uint64_t h = salt ^ (primary * 0x9E3779B97F4A7C15ULL) ^
                    (secondary * 0xC2B2AE3D27D4EB4FULL);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return static_cast<std::size_t>(h % n_items);
}

}  // namespace synth_detail

/// Goal transition matrix P[g][g'] of the generator for (seed, cfg).
inline std::vector<std::vector<double>> synthetic_transition_matrix(
    std::uint64_t seed, const SynthConfig& cfg) {
  Rng rng(seed);
  auto tables = synth_detail::make_tables(rng, cfg);
  std::vector<std::vector<double>> p(cfg.n_goals,
                                     std::vector<double>(cfg.n_goals, 0.0));
  for (std::size_t g = 0; g < cfg.n_goals; ++g)
    for (auto to : tables.transition[g])
      p[g][to] += 1.0 / static_cast<double>(synth_detail::kKeywords);
  return p;
}

inline std::vector<std::string> synthetic_recommendation_goals(
    const SynthConfig& cfg) {
  std::vector<std::string> out;
  for (std::size_t g = 0; g < cfg.n_goals; ++g)
    if (synth_detail::recommends(g)) out.push_back(synth_detail::goal_name(g));
  return out;
}

inline Corpus generate_synthetic(std::uint64_t seed, const SynthConfig& cfg) {
  using namespace synth_detail;
  if (cfg.n_dialogues < 1 || cfg.n_goals < 1 || cfg.n_topics < 1 ||
      cfg.n_items < 1 || cfg.turns_per_dialogue < 1)
    throw Error("synthetic config counts must all be >= 1");

  Rng rng(seed);
  const Tables tables = make_tables(rng, cfg);
  const std::uint64_t item_salt = rng.next();

  Corpus c;
  c.split = Split::train;
  for (std::size_t g = 0; g < cfg.n_goals; ++g) c.goal_set.push_back(goal_name(g));
  for (std::size_t k = 0; k < cfg.n_topics; ++k) c.topic_set.push_back(topic_name(k));
  for (std::size_t v = 0; v < cfg.n_items; ++v)
    c.item_catalog.push_back({std::to_string(v), item_name(v)});

  const std::size_t n_keywords = kKeywords;
  const std::size_t profile_size = std::min(kProfileSize, cfg.n_topics);

  for (std::size_t di = 0; di < cfg.n_dialogues; ++di) {
    Dialogue d;
    char id[64];
    std::snprintf(id, sizeof id, "syn-%llu-%05zu",
                  static_cast<unsigned long long>(seed), di);
    d.dialogue_id = id;

    // profile: distinct liked topics
    std::vector<std::size_t> liked;
    while (liked.size() < profile_size) {
      std::size_t k = rng.below(cfg.n_topics);
      if (std::find(liked.begin(), liked.end(), k) == liked.end())
        liked.push_back(k);
    }
    for (auto k : liked) d.profile.entries.push_back("likes " + topic_name(k));

    // initial goal ~ stationary distribution
    double u = rng.uniform(), acc = 0.0;
    std::size_t goal = cfg.n_goals - 1;
    for (std::size_t g = 0; g < cfg.n_goals; ++g) {
      acc += tables.stationary[g];
      if (u < acc) {
        goal = g;
        break;
      }
    }

    std::size_t last_keyword = 0;
    for (std::size_t t = 0; t < cfg.turns_per_dialogue; ++t) {
      Turn turn;
      if (t % 2 == 0) {
        turn.speaker = Speaker::user;
        last_keyword = rng.below(n_keywords);
        turn.text = std::string(kKeywordWords[last_keyword]) + " " +
                    std::string(kFillers[rng.below(kFillers.size())]);
        turn.goals = {goal_name(goal)};
      } else {
        turn.speaker = Speaker::system;
        goal = tables.transition[goal][last_keyword];
        turn.goals = {goal_name(goal)};
        std::string item;
        if (has_topics(goal)) {
          std::size_t primary = liked[goal % liked.size()];
          std::size_t secondary = tables.companion[goal];
          if (secondary == primary && cfg.n_topics > 1)
            secondary = (secondary + 1) % cfg.n_topics;
          turn.topics = {topic_name(primary)};
          if (secondary != primary) turn.topics.push_back(topic_name(secondary));
          if (recommends(goal)) {
            std::size_t v = item_for(primary, secondary, item_salt, cfg.n_items);
            turn.item_ids = {std::to_string(v)};
            item = item_name(v);
          }
        }
        turn.text = render_response(goal, turn.topics, item);
      }
      d.turns.push_back(std::move(turn));
    }
    c.dialogues.push_back(std::move(d));
  }
  return c;
}

}  // namespace mgcrs
