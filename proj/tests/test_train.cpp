// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "mgcrs/train.hpp"

using namespace mgcrs;
using namespace mgcrs::testing;

namespace {

struct Setup {
  std::array<Corpus, 3> splits;
  TrainContext ctx;
};

Setup small_setup(std::size_t e1 = 2, std::size_t e2 = 1, std::size_t dialogues = 30) {
  Setup s;
  SynthConfig sc;
  sc.n_dialogues = dialogues;
  sc.n_topics = 12;
  sc.n_items = 10;
  sc.turns_per_dialogue = 6;
  s.splits = split_corpus(generate_synthetic(3, sc), 0.8, 0.1);
  s.ctx.vocab = build_experiment_vocab(s.splits[0]);
  s.ctx.model.d_model = 32;
  s.ctx.model.heads = 4;
  s.ctx.model.ffn = 64;
  s.ctx.model.max_positions = 128;
  s.ctx.model.seed = 5;
  s.ctx.train.e1 = e1;
  s.ctx.train.e2 = e2;
  s.ctx.train.batch_size = 8;
  s.ctx.train.lr = 3e-3;
  s.ctx.train.seed = 11;
  s.ctx.train_corpus = &s.splits[0];
  s.ctx.dev_corpus = &s.splits[1];
  return s;
}

}  // namespace

TEST_CASE("epoch batches cover every example exactly once") {
  Rng rng(4);
  for (std::size_t n : {1u, 7u, 32u, 33u, 100u})
    for (std::size_t b : {1u, 5u, 32u}) {
      auto batches = epoch_batches(n, b, rng);
      std::multiset<std::size_t> seen;
      for (const auto& x : batches) {
        CHECK(!x.empty());
        CHECK(x.size() <= b);
        seen.insert(x.begin(), x.end());
      }
      CHECK(seen.size() == n);
      for (std::size_t i = 0; i < n; ++i) CHECK(seen.count(i) == 1);
      CHECK(batches.size() == (n + b - 1) / b);
    }
}

TEST_CASE("task datasets follow derived examples") {
  auto s = small_setup();
  auto ser = s.ctx.serializer();
  std::size_t total = 0;
  for (Task t : kAllTasks) {
    auto pairs = serialize_task(s.splits[0], t, ser);
    CHECK(pairs.size() == derive_examples(s.splits[0], t).size());
    for (const auto& p : pairs) {
      CHECK(p.task == t);
      CHECK(p.input_ids.size() <= s.ctx.train.budget.max_source);
    }
    total += pairs.size();
  }
  CHECK(total > 0);
}

TEST_CASE("zero epochs return the initial parameters") {
  auto s = small_setup(0, 0);
  auto [theta, run] = multitask_train(s.ctx);
  Backbone fresh(s.ctx.vocab, s.ctx.model);
  CHECK(theta.model().params() == fresh.model().params());
  CHECK(run.epoch_losses.empty());
  auto [tuned, r2] = prompt_tune(theta, Task::G, s.ctx);
  CHECK(tuned.model().params() == theta.model().params());
  CHECK(tuned.name() == "theta_G");
}

TEST_CASE("multitask training reduces the loss and is reproducible") {
  auto s = small_setup(15, 0);
  auto [a, ra] = multitask_train(s.ctx);
  REQUIRE(ra.epoch_losses.size() == 15);
  REQUIRE(ra.dev_losses.size() == 15);
  CHECK(ra.epoch_losses.back() < 0.5 * ra.epoch_losses.front());
  auto [b, rb] = multitask_train(s.ctx);
  CHECK(ra.epoch_losses == rb.epoch_losses);
  CHECK(a.params_digest() == b.params_digest());

  // a different seed changes the shuffle and the result
  auto s2 = small_setup(15, 0);
  s2.ctx.train.seed = 12;
  auto [c, rc] = multitask_train(s2.ctx);
  CHECK(c.params_digest() != a.params_digest());

  SECTION("prompt tuning: isolation and dev loss") {
    auto before = a.params_digest();
    auto tc = s.ctx;
    tc.train.e2 = 3;
    auto dev_g = tc.pairs(s.splits[1], Task::G);
    double under_theta = dataset_loss(a, dev_g);
    std::set<std::string> digests;
    for (Task t : kAllTasks) {
      auto [tuned, run] = prompt_tune(a, t, tc);
      CHECK(run.epoch_losses.size() == 3);
      CHECK(run.stage == std::string("prompt_tune:") + task_letter(t));
      digests.insert(tuned.params_digest());
      if (t == Task::G) CHECK(dataset_loss(tuned, dev_g) <= under_theta);
    }
    CHECK(digests.size() == 4);
    CHECK(a.params_digest() == before);
  }
}

TEST_CASE("ablation variants produce the documented checkpoint sets") {
  auto s = small_setup(1, 1, 12);
  auto full = ablation_variant(s.ctx, Variant::full);
  CHECK(full.checkpoints.size() == 5);
  for (Task t : kAllTasks) CHECK(full.for_task(t)->name() == checkpoint_name(t));
  CHECK(full.runs.size() == 5);

  auto no_pl = ablation_variant(s.ctx, Variant::no_PL);
  CHECK(no_pl.checkpoints.size() == 1);
  for (Task t : kAllTasks) CHECK(no_pl.for_task(t)->name() == "theta");
  // the shared stage is the same computation in both variants
  CHECK(no_pl.checkpoints.at("theta").params_digest() ==
        full.checkpoints.at("theta").params_digest());

  auto no_mtl = ablation_variant(s.ctx, Variant::no_MTL);
  CHECK(no_mtl.checkpoints.size() == 4);
  CHECK(!no_mtl.checkpoints.count("theta"));
  std::set<std::string> digests;
  for (const auto& [name, b] : no_mtl.checkpoints) digests.insert(b.params_digest());
  CHECK(digests.size() == 4);
  for (const auto& r : no_mtl.runs) CHECK(r.epoch_losses.size() == 2);
  // independent initializations: no model starts from the multitask init
  Backbone fresh(s.ctx.vocab, s.ctx.model);
  for (Task t : kAllTasks) {
    ModelConfig mc = s.ctx.model;
    mc.seed = s.ctx.model.seed + 7919ULL * (static_cast<std::uint64_t>(t) + 1);
    CHECK(Backbone(s.ctx.vocab, mc).params_digest() != fresh.params_digest());
  }
}

TEST_CASE("experiment directory layout") {
  auto s = small_setup(1, 1, 10);
  auto dir = temp_dir("experiment");
  Experiment exp(dir / "exp");
  auto ctx = s.ctx;
  ctx.on_epoch = [&](const EpochRecord& r) { exp.record_epoch(r); };
  exp.initialize(ctx, Variant::full);
  auto set = ablation_variant(ctx, Variant::full);
  for (const auto& [name, b] : set.checkpoints) exp.save(b);

  CHECK(std::filesystem::exists(dir / "exp" / "config.json"));
  CHECK(trim(read_file(dir / "exp" / "corpus.digest")) == corpus_digest(s.splits[0]));
  for (auto n : {"theta", "theta_G", "theta_T", "theta_R", "theta_D"}) {
    CHECK(exp.has_checkpoint(n));
    CHECK(std::filesystem::exists(dir / "exp" / "checkpoints" / n / "params.bin"));
  }
  std::size_t records = 0;
  {
    std::istringstream in(read_file(dir / "exp" / "metrics.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("stage"));
      CHECK(j.contains("loss"));
      ++records;
    }
  }
  CHECK(records == 5);
  CHECK(std::filesystem::file_size(dir / "exp" / "run.log") > 0);

  auto cfg = exp.config();
  CHECK(cfg["variant"] == "full");
  CHECK(train_config_from_json(cfg["train"]).e1 == 1);
  CHECK(model_config_from_json(cfg["model"]) == ctx.model);

  auto loaded = exp.load_models();
  CHECK(loaded.checkpoints.size() == 4);
  CHECK(loaded.for_task(Task::R)->params_digest() ==
        set.checkpoints.at("theta_R").params_digest());
  CHECK_THROWS_AS(exp.load("theta_X"), Error);
  CHECK_THROWS_AS(Experiment(dir / "nope").config(), Error);
}

TEST_CASE("training errors") {
  auto s = small_setup(1, 1, 10);
  Corpus empty = s.splits[0];
  empty.dialogues.clear();
  auto ctx = s.ctx;
  ctx.train_corpus = &empty;
  ctx.dev_corpus = nullptr;
  CHECK_THROWS_AS(multitask_train(ctx), Error);

  // a corpus without items has no recommendation examples
  Corpus no_items = s.splits[0];
  for (auto& d : no_items.dialogues)
    for (auto& t : d.turns) t.item_ids.clear();
  auto ctx2 = s.ctx;
  ctx2.train_corpus = &no_items;
  Backbone theta(s.ctx.vocab, s.ctx.model);
  CHECK_THROWS_AS(prompt_tune(theta, Task::R, ctx2), Error);

  auto ctx3 = s.ctx;
  ctx3.train.batch_size = 0;
  CHECK_THROWS_AS(multitask_train(ctx3), Error);
}

TEST_CASE("train config JSON round trip") {
  TrainConfig t;
  t.e1 = 3;
  t.lr = 5e-5;
  t.prompt = PromptKind::natural_language;
  t.budget.max_topic_context = 128;
  auto back = train_config_from_json(to_json(t));
  CHECK(back.e1 == 3);
  CHECK(back.lr == 5e-5);
  CHECK(back.prompt == PromptKind::natural_language);
  CHECK(back.budget.max_topic_context == 128);
  CHECK(parse_variant("no_MTL") == Variant::no_MTL);
  CHECK_THROWS_AS(parse_variant("x"), Error);
}
