// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "fixtures.hpp"
#include "mgcrs/vocab.hpp"

using namespace mgcrs;
using namespace mgcrs::testing;

namespace {

Vocabulary vocab_for(const Corpus& c) {
  return build_vocabulary(build_base_tokenizer(c), c.item_catalog);
}

}  // namespace

TEST_CASE("vocabulary layout") {
  auto c = tiny_corpus();
  auto base = build_base_tokenizer(c);
  auto v = build_vocabulary(base, c.item_catalog);
  CHECK(v.size() == base->size() + 11 + 2);
  auto id = v.item_token_id("100");
  REQUIRE(id);
  CHECK(v.encode("_100_") == std::vector<int>{*id});
  CHECK(v.role(*id) == TokenRole::item);
  CHECK(v.item_id_at(*id) == "100");

  auto empty = build_vocabulary(base, {});
  CHECK(empty.size() == base->size() + 11);
}

TEST_CASE("id ranges partition the vocabulary") {
  auto c = generate_synthetic(2, {.n_dialogues = 20});
  auto v = vocab_for(c);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < v.size(); ++i)
    ++counts[static_cast<int>(v.role(static_cast<int>(i)))];
  CHECK(counts[0] == 11);
  CHECK(counts[1] == v.base_size());
  CHECK(counts[2] == c.item_catalog.size());
  for (int i = 0; i < 11; ++i) CHECK(v.role(i) == TokenRole::special);
  CHECK(v.item_begin() == static_cast<int>(11 + v.base_size()));
}

TEST_CASE("special and item tokens are atomic") {
  auto c = generate_synthetic(2, {.n_dialogues = 20});
  auto v = vocab_for(c);
  for (auto s : tok::kAll) {
    auto ids = v.encode(s);
    REQUIRE(ids.size() == 1);
    CHECK(v.role(ids[0]) == TokenRole::special);
  }
  for (const auto& it : c.item_catalog) {
    auto ids = v.encode(item_token(it.id));
    REQUIRE(ids.size() == 1);
    CHECK(v.item_id_at(ids[0]) == it.id);
  }
  // glued to neighbouring text
  auto ids = v.encode("x[goal]y_3_z");
  CHECK(std::count(ids.begin(), ids.end(), v.special(tok::kGoal)) == 1);
  CHECK(std::count(ids.begin(), ids.end(), *v.item_token_id("3")) == 1);
}

TEST_CASE("encode basics") {
  auto c = tiny_corpus();
  auto v = vocab_for(c);
  CHECK(v.encode("").empty());
  auto ids = v.encode("[goal] Greeting");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == v.special(tok::kGoal));
  CHECK(v.decode(ids) == "[goal] Greeting");
  auto unk = v.encode("\xE2\x98\x83");
  REQUIRE(unk.size() == 1);
  CHECK(unk[0] == v.unk_id());
  // unseen word built from known characters
  auto spelled = v.encode("hello there_100_");
  CHECK(v.decode(spelled) == "hello there _100_");
}

TEST_CASE("round trip on synthetic utterances") {
  auto c = generate_synthetic(9, {.n_dialogues = 200});
  auto v = vocab_for(c);
  Rng rng(1);
  std::size_t n = 0;
  std::vector<std::string> texts;
  for (const auto& d : c.dialogues)
    for (const auto& t : d.turns) texts.push_back(t.text);
  while (n < 1000) {
    const auto& u = texts[rng.below(texts.size())];
    REQUIRE(v.decode(v.encode(u)) == v.normalize(u));
    ++n;
  }
  CHECK(v.normalize("  a[goal]b  ") == "a [goal] b");
}

TEST_CASE("vocabulary build errors") {
  auto c = tiny_corpus();
  auto base = build_base_tokenizer(c);
  std::vector<CatalogItem> dup = {{"1", "a"}, {"1", "b"}};
  CHECK_THROWS_AS(build_vocabulary(base, dup), Error);
  auto colliding = std::make_shared<WordCharTokenizer>(
      std::vector<std::string>{"_5_", "x"});
  std::vector<CatalogItem> five = {{"5", "five"}};
  CHECK_THROWS_AS(build_vocabulary(colliding, five), Error);
}

TEST_CASE("vocabulary json round trip and digest") {
  auto c = generate_synthetic(4, {.n_dialogues = 30});
  auto v = vocab_for(c);
  auto back = Vocabulary::from_json(v.to_json());
  CHECK(back.size() == v.size());
  CHECK(back.digest() == v.digest());
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(back.token(static_cast<int>(i)) == v.token(static_cast<int>(i)));
  auto other = vocab_for(generate_synthetic(5, {.n_dialogues = 30, .n_items = 7}));
  CHECK(other.digest() != v.digest());
}

TEST_CASE("encode is deterministic and item ids are distinct at scale") {
  std::vector<CatalogItem> big;
  for (int i = 0; i < 33834; ++i) big.push_back({std::to_string(i), ""});
  auto base = std::make_shared<WordCharTokenizer>(
      WordCharTokenizer::from_words({"the"}, {"t", "h", "e"}));
  auto v = build_vocabulary(base, big);
  CHECK(v.item_count() == 33834);
  std::set<int> ids;
  for (const auto& it : big) ids.insert(*v.item_token_id(it.id));
  CHECK(ids.size() == 33834);
  CHECK(v.encode("the _17_ the") == v.encode("the _17_ the"));
}
