// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "mgcrs/corpus.hpp"
#include "mgcrs/synthetic.hpp"

namespace mgcrs::testing {

inline Turn user(std::string text, std::vector<std::string> goals = {}) {
  Turn t;
  t.speaker = Speaker::user;
  t.text = std::move(text);
  t.goals = std::move(goals);
  return t;
}

inline Turn sys(std::string text, std::vector<std::string> goals,
                std::vector<std::string> topics = {},
                std::vector<std::string> items = {}) {
  Turn t;
  t.speaker = Speaker::system;
  t.text = std::move(text);
  t.goals = std::move(goals);
  t.topics = std::move(topics);
  t.item_ids = std::move(items);
  return t;
}

/// Two short hand-written dialogues covering every segment type.
inline Corpus tiny_corpus() {
  Corpus c;
  c.goal_set = {"Greeting", "Chit-chat", "Movie recommendation"};
  c.topic_set = {"Love", "Starry Sky", "Jay Chou"};
  c.item_catalog = {{"100", "The Witness"}, {"7", "Starry Night"}};

  Dialogue a;
  a.dialogue_id = "d1";
  a.profile.entries = {"likes Jay Chou", "watched The Witness"};
  a.kb = {{"Love", "sung_by", "Jay Chou"},
          {"Starry Sky", "genre", "ballad"},
          {"Other", "is", "unrelated"}};
  a.turns = {user("hi there", {"Greeting"}),
             sys("hello how are you", {"Greeting"}),
             user("i like love songs", {"Chit-chat"}),
             sys("love songs are great", {"Chit-chat"}, {"Love", "Starry Sky"}),
             user("any movie", {"Movie recommendation"}),
             sys("try the witness", {"Movie recommendation"}, {"Jay Chou"},
                 {"100"})};

  Dialogue b;
  b.dialogue_id = "d2";
  b.turns = {user("hello"), sys("hi", {"Greeting"}), user("show me a film"),
             sys("starry night is good", {"Movie recommendation"}, {"Love"},
                 {"7"})};
  c.dialogues = {a, b};
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mgcrs_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mgcrs::testing
