// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <set>
#include <thread>

#include "fixtures.hpp"
#include "mgcrs/service.hpp"

using namespace mgcrs;
using namespace mgcrs::testing;

namespace {

struct Served {
  std::array<Corpus, 3> splits;
  std::shared_ptr<const ModelSet> models;

  static const Served& get() {
    static const Served s;
    return s;
  }

  PipelineConfig config() const {
    PipelineConfig pc;
    pc.recommendation_keywords = {"recommend"};
    pc.goal_decode = DecodeConfig::greedy(12);
    pc.topic_decode = DecodeConfig::greedy(12);
    pc.response_decode = DecodeConfig::greedy(24);
    return pc;
  }

 private:
  Served() {
    SynthConfig sc;
    sc.n_dialogues = 40;
    sc.n_topics = 12;
    sc.n_items = 10;
    sc.turns_per_dialogue = 6;
    splits = split_corpus(generate_synthetic(4, sc), 0.8, 0.1);
    TrainContext ctx;
    ctx.vocab = build_experiment_vocab(splits[0]);
    ctx.model.d_model = 32;
    ctx.model.heads = 4;
    ctx.model.ffn = 64;
    ctx.model.max_positions = 512;
    ctx.model.seed = 5;
    ctx.train.e1 = 20;
    ctx.train.e2 = 2;
    ctx.train.batch_size = 8;
    ctx.train.lr = 3e-3;
    ctx.train_corpus = &splits[0];
    models = std::make_shared<ModelSet>(ablation_variant(ctx, Variant::full));
  }
};

// phrased like the synthetic user turns
const std::vector<std::string> kScript = {
    "sure tell me more", "hmm i see",       "okay go on",     "really interesting",
    "well that sounds good", "yes tell me more", "right go on", "fine i see",
    "sure interesting",  "hmm that sounds good"};

std::size_t count(const std::string& s, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

nlohmann::json body(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

}  // namespace

TEST_CASE("first turn creates two turns") {
  const auto& sv = Served::get();
  ChatEngine engine(sv.splits[0], sv.models, sv.config());
  SessionStore store;
  auto s = store.create();
  CHECK(s->turn_count() == 0);
  auto r = engine.serve_turn(*s, kScript[0]);
  CHECK(s->turn_count() == 2);
  CHECK(s->state.turns[0].speaker == Speaker::user);
  CHECK(s->state.turns[1].speaker == Speaker::system);
  CHECK(s->state.turns[1].text == r.prediction.response);
  CHECK(!r.prediction.goal.empty());
  CHECK(s->transcript.size() == 2);

  CHECK_THROWS_AS(engine.serve_turn(*s, "   "), Error);
  CHECK(s->turn_count() == 2);
}

TEST_CASE("histories grow by one entry per turn") {
  const auto& sv = Served::get();
  ChatEngine engine(sv.splits[0], sv.models, sv.config());
  SessionStore store;
  auto s = store.create();
  std::vector<std::string> goals_before, topics_before;
  for (std::size_t k = 1; k <= kScript.size(); ++k) {
    auto r = engine.serve_turn(*s, kScript[k - 1]);
    auto goals = s->goal_history();
    auto topics = s->topic_history();
    REQUIRE(goals.size() == k);
    REQUIRE(topics.size() == k);
    // append-only: earlier entries never change
    CHECK(std::equal(goals_before.begin(), goals_before.end(), goals.begin()));
    CHECK(std::equal(topics_before.begin(), topics_before.end(), topics.begin()));
    CHECK(goals.back() == join_labels(r.prediction.goal));

    // the goal stage saw every earlier prediction: one annotation per earlier
    // system turn and one per user turn that had a goal in effect
    const auto& g_in = r.prediction.stage_input(Task::G);
    std::size_t annotated = 0;
    for (std::size_t i = 0; i + 1 < s->state.turns.size(); ++i)
      annotated += !s->state.turns[i].goals.empty();
    // plus the G prompt token
    CHECK(count(g_in, tok::kGoal) == annotated + 1);
    std::size_t topic_entries = 0;
    for (std::size_t i = 0; i + 1 < k; ++i) topic_entries += !topics[i].empty();
    // the T prompt token adds one more marker
    CHECK(count(r.prediction.stage_input(Task::T), tok::kTopic) == topic_entries + 1);
    goals_before = goals;
    topics_before = topics;
  }
  CHECK(s->turn_count() == 2 * kScript.size());
}

TEST_CASE("sessions expire after the idle timeout") {
  const auto& sv = Served::get();
  ChatEngine engine(sv.splits[0], sv.models, sv.config());
  auto now = Clock::now();
  SessionStore store({.idle_timeout = std::chrono::seconds(60)}, [&] { return now; });
  auto a = store.create();
  auto id = a->id;
  now += std::chrono::seconds(59);
  CHECK_NOTHROW(store.get(id));
  now += std::chrono::seconds(59);
  CHECK_NOTHROW(store.get(id));  // the previous get refreshed the timer
  now += std::chrono::seconds(61);
  CHECK_THROWS_AS(store.get(id), SessionNotFound);
  CHECK_THROWS_AS(store.get("nope"), SessionNotFound);
  CHECK(store.size() == 0);
}

TEST_CASE("a restarted store replays persisted sessions") {
  const auto& sv = Served::get();
  auto dir = temp_dir("service_persist");
  ChatEngine engine(sv.splits[0], sv.models, sv.config());
  SessionStore first({.persist_dir = dir});
  auto s = first.create();
  for (std::size_t i = 0; i < 3; ++i) {
    engine.serve_turn(*s, kScript[i]);
    first.persist(*s, 2);
  }

  // a new engine and store over the same checkpoints and directory
  ChatEngine engine2(sv.splits[0], sv.models, sv.config());
  SessionStore second({.persist_dir = dir});
  auto restored = second.get(s->id);
  REQUIRE(restored->turn_count() == s->turn_count());
  CHECK(transcript_payload(*restored) == transcript_payload(*s));

  auto r1 = engine.serve_turn(*s, kScript[3]);
  auto r2 = engine2.serve_turn(*restored, kScript[3]);
  CHECK(r1.prediction.response == r2.prediction.response);
  CHECK(r1.prediction.goal == r2.prediction.goal);
  CHECK(r1.prediction.topics == r2.prediction.topics);

  // ids outside the id alphabet never touch the filesystem
  CHECK_THROWS_AS(second.get("../etc"), SessionNotFound);
}

TEST_CASE("HTTP contract") {
  const auto& sv = Served::get();
  ChatEngine engine(sv.splits[0], sv.models, sv.config());
  SessionStore store;
  ChatServer server(engine, store);
  int port = server.start();
  httplib::Client cli("127.0.0.1", port);

  auto h = cli.Get("/healthz");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(body(h)["status"] == "ok");
  CHECK(body(h)["models_loaded"] == true);

  auto c = cli.Post("/v1/session", "", "application/json");
  REQUIRE(c);
  CHECK(c->status == 200);
  std::string id = body(c)["session_id"];
  CHECK(!id.empty());

  auto t = cli.Post("/v1/session/" + id + "/turn", R"({"text": "recommend a movie"})",
                    "application/json");
  REQUIRE(t);
  CHECK(t->status == 200);
  auto j = body(t);
  for (auto k : {"goal", "topics", "items", "response"}) CHECK(j.contains(k));
  CHECK(j["goal"].is_array());
  CHECK(j["response"].is_string());
  for (const auto& it : j["items"]) {
    CHECK(it.contains("id"));
    CHECK(it.contains("name"));
    CHECK(it["p"].is_number());
  }
  CHECK(j["items"].size() <= 5);

  auto tr = cli.Get("/v1/session/" + id + "/transcript");
  REQUIRE(tr);
  auto tj = body(tr);
  CHECK(tj["session_id"] == id);
  REQUIRE(tj["turns"].size() == 2);
  CHECK(tj["turns"][0]["speaker"] == "user");
  CHECK(tj["turns"][0]["text"] == "recommend a movie");
  CHECK(tj["turns"][1]["text"] == j["response"]);

  auto bad = cli.Post("/v1/session/" + id + "/turn", "not json", "application/json");
  CHECK(bad->status == 400);
  CHECK(body(bad).contains("error"));
  auto empty = cli.Post("/v1/session/" + id + "/turn", R"({"text": ""})", "application/json");
  CHECK(empty->status == 400);
  auto missing = cli.Post("/v1/session/ffff/turn", R"({"text": "hi"})", "application/json");
  CHECK(missing->status == 404);
  CHECK(cli.Get("/v1/session/ffff/transcript")->status == 404);
  server.stop();
}

TEST_CASE("concurrent sessions stay isolated") {
  const auto& sv = Served::get();
  ChatEngine engine(sv.splits[0], sv.models, sv.config());
  SessionStore store;
  ChatServer server(engine, store);
  int port = server.start();

  auto converse = [&](const std::string& prefix, std::string& id, int& failures) {
    httplib::Client cli("127.0.0.1", port);
    auto c = cli.Post("/v1/session", "", "application/json");
    if (!c || c->status != 200) {
      ++failures;
      return;
    }
    id = body(c)["session_id"];
    for (int i = 0; i < 4; ++i) {
      nlohmann::json req{{"text", prefix + " " + kScript[static_cast<std::size_t>(i)]}};
      auto r = cli.Post("/v1/session/" + id + "/turn", req.dump(), "application/json");
      if (!r || r->status != 200) ++failures;
    }
  };
  std::string id_a, id_b;
  int fail_a = 0, fail_b = 0;
  std::thread ta([&] { converse("alpha", id_a, fail_a); });
  std::thread tb([&] { converse("beta", id_b, fail_b); });
  ta.join();
  tb.join();
  CHECK(fail_a == 0);
  CHECK(fail_b == 0);
  REQUIRE(id_a != id_b);

  for (auto [id, prefix, other] : {std::tuple{id_a, "alpha", "beta"}, std::tuple{id_b, "beta", "alpha"}}) {
    auto s = store.get(id);
    REQUIRE(s->turn_count() == 8);
    for (std::size_t i = 0; i < 8; i += 2) {
      CHECK(s->state.turns[i].text.starts_with(prefix));
      CHECK(s->state.turns[i].text.find(other) == std::string::npos);
    }
  }

  // the same script alone gives the same responses: no cross-talk
  SessionStore solo;
  auto s = solo.create();
  auto shared = store.get(id_a);
  for (std::size_t i = 0; i < 4; ++i) {
    auto r = engine.serve_turn(*s, "alpha " + kScript[i]);
    CHECK(r.prediction.response == shared->state.turns[2 * i + 1].text);
  }
  server.stop();
}

TEST_CASE("a service without models reports it") {
  const auto& sv = Served::get();
  ChatEngine engine(sv.splits[0], nullptr, sv.config());
  CHECK(!engine.models_loaded());
  SessionStore store;
  ChatServer server(engine, store);
  int port = server.start();
  httplib::Client cli("127.0.0.1", port);
  CHECK(body(cli.Get("/healthz"))["models_loaded"] == false);
  std::string id = body(cli.Post("/v1/session", "", "application/json"))["session_id"];
  auto r = cli.Post("/v1/session/" + id + "/turn", R"({"text": "hi"})", "application/json");
  CHECK(r->status == 503);
  server.stop();
}
