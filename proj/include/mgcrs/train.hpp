// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Two-stage training: multi-task training over the pooled task datasets,
// then per-task prompt tuning of clones. Also the MTL/PL ablation variants
// and the experiment directory:
//
//   <root>/config.json          train + model config, variant, corpus digest
//   <root>/corpus.digest        digest of the training corpus
//   <root>/checkpoints/<name>/  see Backbone::snapshot
//   <root>/metrics.jsonl        one record per epoch
//   <root>/run.log              human-readable progress

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mgcrs/backbone.hpp"
#include "mgcrs/corpus.hpp"
#include "mgcrs/serialize.hpp"

namespace mgcrs {

struct TrainConfig {
  std::size_t e1 = 15;
  std::size_t e2 = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  long warmup_steps = 0;
  std::uint64_t seed = 7;
  PromptKind prompt = PromptKind::special_token;
  LengthBudget budget;

  void validate() const {
    if (batch_size < 1) throw Error("batch size must be >= 1");
    if (!(lr > 0)) throw Error("learning rate must be positive");
    if (weight_decay < 0) throw Error("weight decay must be >= 0");
    budget.validate();
  }

  OptimConfig optim() const {
    OptimConfig o;
    o.lr = lr;
    o.weight_decay = weight_decay;
    o.clip_norm = clip_norm;
    o.warmup_steps = warmup_steps;
    return o;
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["e1"] = t.e1;
  j["e2"] = t.e2;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["clip_norm"] = t.clip_norm;
  j["warmup_steps"] = t.warmup_steps;
  j["seed"] = t.seed;
  j["prompt"] = std::string(to_string(t.prompt));
  j["max_source"] = t.budget.max_source;
  j["max_target"] = t.budget.max_target;
  j["max_topic_context"] = t.budget.max_topic_context;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::ordered_json& j, TrainConfig t = {}) {
  t.e1 = j.value("e1", t.e1);
  t.e2 = j.value("e2", t.e2);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.clip_norm = j.value("clip_norm", t.clip_norm);
  t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
  t.seed = j.value("seed", t.seed);
  if (j.contains("prompt")) t.prompt = parse_prompt_kind(j.at("prompt").get<std::string>());
  t.budget.max_source = j.value("max_source", t.budget.max_source);
  t.budget.max_target = j.value("max_target", t.budget.max_target);
  t.budget.max_topic_context = j.value("max_topic_context", t.budget.max_topic_context);
  return t;
}

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;  // 1-based
  double loss = 0;
  std::optional<double> dev_loss;
  std::size_t steps = 0;
  double seconds = 0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  if (r.dev_loss) j["dev_loss"] = *r.dev_loss;
  j["steps"] = r.steps;
  j["seconds"] = r.seconds;
  return j;
}

struct TrainRun {
  std::string stage;       // "multitask" or "prompt_tune:<task>"
  std::string checkpoint;  // produced checkpoint name
  std::vector<double> epoch_losses;
  std::vector<double> dev_losses;
  std::size_t examples = 0;
  double seconds = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Builds the trailing-segment conditioning of a training example.
using ConditioningFn = std::function<Conditioning(const TaskExample&)>;

// ---------------------------------------------------------------------------
// Datasets

inline std::string checkpoint_name(std::optional<Task> task) {
  return task ? "theta_" + std::string(1, task_letter(*task)) : "theta";
}

/// Serialized training pairs of one task, oracle-conditioned unless `cond`
/// is given. Response inputs expand topics through each dialogue's kb.
inline std::vector<SerializedPair> serialize_task(const Corpus& c, Task task,
                                                  const Serializer& ser,
                                                  const ConditioningFn& cond = {}) {
  CatalogIndex catalog(c.item_catalog);
  std::vector<SerializedPair> out;
  for (const auto& d : c.dialogues)
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (!emits_example(task, d.turns[t])) continue;
      auto ex = make_example(task, d, t, catalog);
      out.push_back(ser.serialize(ex, d.kb, cond ? cond(ex) : oracle_conditioning(ex)));
    }
  return out;
}

inline std::vector<IdPair> to_id_pairs(const std::vector<SerializedPair>& v) {
  std::vector<IdPair> out;
  out.reserve(v.size());
  for (const auto& p : v) out.push_back({p.input_ids, p.target_ids});
  return out;
}

/// Vocabulary for an experiment: base words from the training corpus and its
/// inventories plus the natural-language prompts, then one token per item.
inline std::shared_ptr<const Vocabulary> build_experiment_vocab(const Corpus& train) {
  BaseVocabOptions opt;
  opt.extra_texts = natural_language_prompts();
  return std::make_shared<Vocabulary>(
      build_vocabulary(build_base_tokenizer(train, opt), train.item_catalog));
}

/// Index batches of one epoch: a fresh permutation cut into consecutive
/// batches (the last may be short).
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                           Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch)
    out.emplace_back(order.begin() + static_cast<long>(i),
                     order.begin() + static_cast<long>(std::min(n, i + batch)));
  return out;
}

/// Token-weighted mean NLL over `pairs`.
inline double dataset_loss(Backbone& model, const std::vector<IdPair>& pairs,
                           std::size_t chunk = 64) {
  double total = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < pairs.size(); i += chunk) {
    std::vector<IdPair> b(pairs.begin() + static_cast<long>(i),
                          pairs.begin() + static_cast<long>(std::min(pairs.size(), i + chunk)));
    std::size_t n = 0;
    for (const auto& p : b) n += p.tgt.size() + 1;
    total += model.eval_loss(b) * static_cast<double>(n);
    tokens += n;
  }
  if (tokens == 0) throw Error("loss over an empty dataset");
  return total / static_cast<double>(tokens);
}

/// `epochs` passes of shuffled mini-batch AdamW with a fresh optimizer.
/// The shuffle stream is (seed, stream).
inline TrainRun run_epochs(Backbone& model, const std::vector<IdPair>& data, std::size_t epochs,
                           const TrainConfig& tc, std::uint64_t stream, const std::string& stage,
                           const std::vector<IdPair>* dev = nullptr,
                           const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw Error(stage + ": empty training dataset");
  tc.validate();
  TrainRun run;
  run.stage = stage;
  run.checkpoint = model.name();
  run.examples = data.size();
  nn::AdamW<float> opt(tc.optim(), model.model().num_params());
  Rng rng(tc.seed * 0x9E3779B97F4A7C15ULL + stream);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto te = std::chrono::steady_clock::now();
    double total = 0;
    std::size_t tokens = 0, steps = 0;
    std::vector<IdPair> batch;
    for (const auto& idx : epoch_batches(data.size(), tc.batch_size, rng)) {
      batch.clear();
      std::size_t n = 0;
      for (auto i : idx) {
        batch.push_back(data[i]);
        n += data[i].tgt.size() + 1;
      }
      total += model.train_batch(batch, opt) * static_cast<double>(n);
      tokens += n;
      ++steps;
    }
    EpochRecord rec;
    rec.stage = stage;
    rec.epoch = e + 1;
    rec.loss = total / static_cast<double>(tokens);
    rec.steps = steps;
    if (dev && !dev->empty()) rec.dev_loss = dataset_loss(model, *dev);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - te).count();
    run.epoch_losses.push_back(rec.loss);
    if (rec.dev_loss) run.dev_losses.push_back(*rec.dev_loss);
    if (on_epoch) on_epoch(rec);
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// ---------------------------------------------------------------------------
// Algorithm stages

/// Shared inputs of the training stages.
struct TrainContext {
  std::shared_ptr<const Vocabulary> vocab;
  ModelConfig model;
  TrainConfig train;
  const Corpus* train_corpus = nullptr;
  const Corpus* dev_corpus = nullptr;  // optional, for logged dev losses
  EpochCallback on_epoch;

  Serializer serializer() const {
    return Serializer(*vocab, CatalogIndex(train_corpus->item_catalog), train.prompt,
                      train.budget);
  }
  std::vector<IdPair> pairs(const Corpus& c, Task t, const ConditioningFn& cond = {}) const {
    return to_id_pairs(serialize_task(c, t, serializer(), cond));
  }
  void check() const {
    if (!vocab) throw Error("training context has no vocabulary");
    if (!train_corpus) throw Error("training context has no training corpus");
    train.validate();
  }
};

inline std::uint64_t stage_stream(std::optional<Task> task, std::uint64_t salt = 0) {
  return (task ? static_cast<std::uint64_t>(*task) + 1 : 0) * 1000003ULL + salt;
}

/// Multi-task training: the four task datasets pooled and reshuffled each
/// epoch. Returns theta.
inline std::pair<Backbone, TrainRun> multitask_train(const TrainContext& ctx) {
  ctx.check();
  std::vector<IdPair> pooled, dev;
  for (Task t : kAllTasks) {
    auto p = ctx.pairs(*ctx.train_corpus, t);
    pooled.insert(pooled.end(), p.begin(), p.end());
    if (ctx.dev_corpus) {
      auto d = ctx.pairs(*ctx.dev_corpus, t);
      dev.insert(dev.end(), d.begin(), d.end());
    }
  }
  if (pooled.empty()) throw Error("multitask training: pooled dataset is empty");
  Backbone theta(ctx.vocab, ctx.model, checkpoint_name(std::nullopt));
  TrainRun run = run_epochs(theta, pooled, ctx.train.e1, ctx.train, stage_stream(std::nullopt),
                            "multitask", ctx.dev_corpus ? &dev : nullptr, ctx.on_epoch);
  return {std::move(theta), std::move(run)};
}

/// Prompt tuning of a clone of theta on one task. `cond` overrides the
/// conditioning of the tuning inputs (used by the response ablations).
inline std::pair<Backbone, TrainRun> prompt_tune(const Backbone& theta, Task task,
                                                 const TrainContext& ctx,
                                                 const ConditioningFn& cond = {},
                                                 std::string name = {}) {
  ctx.check();
  auto data = ctx.pairs(*ctx.train_corpus, task, cond);
  if (data.empty())
    throw Error(std::string("prompt tuning: task ") + task_letter(task) + " has no examples");
  std::vector<IdPair> dev;
  if (ctx.dev_corpus) dev = ctx.pairs(*ctx.dev_corpus, task, cond);
  Backbone tuned = theta.clone(name.empty() ? checkpoint_name(task) : std::move(name));
  TrainRun run = run_epochs(tuned, data, ctx.train.e2, ctx.train, stage_stream(task),
                            "prompt_tune:" + std::string(1, task_letter(task)),
                            ctx.dev_corpus ? &dev : nullptr, ctx.on_epoch);
  return {std::move(tuned), std::move(run)};
}

enum class Variant { full, no_MTL, no_PL };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_MTL: return "no_MTL";
    case Variant::no_PL: return "no_PL";
  }
  return "full";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "full") return Variant::full;
  if (s == "no_MTL" || s == "no_mtl") return Variant::no_MTL;
  if (s == "no_PL" || s == "no_pl") return Variant::no_PL;
  throw Error("unknown variant '" + std::string(s) + "'");
}

/// Checkpoints of one variant and which one serves each task.
struct ModelSet {
  std::map<std::string, Backbone> checkpoints;
  std::array<std::string, 4> task_model;
  std::vector<TrainRun> runs;

  const Backbone* for_task(Task t) const {
    auto it = checkpoints.find(task_model[static_cast<std::size_t>(t)]);
    return it == checkpoints.end() ? nullptr : &it->second;
  }
  Backbone* for_task(Task t) {
    auto it = checkpoints.find(task_model[static_cast<std::size_t>(t)]);
    return it == checkpoints.end() ? nullptr : &it->second;
  }
};

/// Which checkpoint serves each task under a variant.
inline std::array<std::string, 4> task_model_names(Variant v) {
  std::array<std::string, 4> out;
  for (Task t : kAllTasks)
    out[static_cast<std::size_t>(t)] =
        v == Variant::no_PL ? checkpoint_name(std::nullopt) : checkpoint_name(t);
  return out;
}

inline ModelSet ablation_variant(const TrainContext& ctx, Variant variant) {
  ctx.check();
  ModelSet set;
  set.task_model = task_model_names(variant);
  if (variant == Variant::no_MTL) {
    // four independent models, each trained e1 + e2 epochs on its own task
    for (Task t : kAllTasks) {
      ModelConfig mc = ctx.model;
      mc.seed = ctx.model.seed + 7919ULL * (static_cast<std::uint64_t>(t) + 1);
      Backbone m(ctx.vocab, mc, checkpoint_name(t));
      auto data = ctx.pairs(*ctx.train_corpus, t);
      std::vector<IdPair> dev;
      if (ctx.dev_corpus) dev = ctx.pairs(*ctx.dev_corpus, t);
      set.runs.push_back(run_epochs(m, data, ctx.train.e1 + ctx.train.e2, ctx.train,
                                    stage_stream(t, 77),
                                    "single_task:" + std::string(1, task_letter(t)),
                                    ctx.dev_corpus ? &dev : nullptr, ctx.on_epoch));
      set.checkpoints.emplace(m.name(), std::move(m));
    }
    return set;
  }
  auto [theta, run] = multitask_train(ctx);
  set.runs.push_back(std::move(run));
  if (variant == Variant::full)
    for (Task t : kAllTasks) {
      auto [tuned, r] = prompt_tune(theta, t, ctx);
      set.runs.push_back(std::move(r));
      set.checkpoints.emplace(tuned.name(), std::move(tuned));
    }
  set.checkpoints.emplace(theta.name(), std::move(theta));
  return set;
}

// ---------------------------------------------------------------------------
// Experiment directory

class Experiment {
 public:
  explicit Experiment(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path checkpoint_dir(const std::string& name) const {
    return root_ / "checkpoints" / name;
  }
  bool has_checkpoint(const std::string& name) const {
    return std::filesystem::exists(checkpoint_dir(name) / "config.json");
  }

  /// Writes config.json and corpus.digest (creating the directory).
  void initialize(const TrainContext& ctx, Variant variant,
                  const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
    std::filesystem::create_directories(root_ / "checkpoints");
    nlohmann::ordered_json j;
    j["format"] = "mgcrs-experiment/1";
    j["variant"] = std::string(to_string(variant));
    j["train"] = to_json(ctx.train);
    j["model"] = to_json(ctx.model);
    j["corpus_digest"] = corpus_digest(*ctx.train_corpus);
    j["vocab_digest"] = ctx.vocab->digest();
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_file(root_ / "config.json", j.dump(2) + "\n");
    write_file(root_ / "corpus.digest", corpus_digest(*ctx.train_corpus) + "\n");
  }

  nlohmann::ordered_json config() const {
    auto p = root_ / "config.json";
    if (!std::filesystem::exists(p)) throw Error("not an experiment directory: " + root_.string());
    return nlohmann::ordered_json::parse(read_file(p));
  }

  void save(const Backbone& b) const { b.snapshot(checkpoint_dir(b.name())); }

  Backbone load(const std::string& name,
                std::shared_ptr<const Vocabulary> vocab = nullptr) const {
    if (!has_checkpoint(name))
      throw Error("missing checkpoint '" + name + "' in " + root_.string());
    return Backbone::restore(checkpoint_dir(name), std::move(vocab));
  }

  /// Loads the checkpoints serving each task under the recorded variant.
  /// Missing ones are left out of the set.
  ModelSet load_models() const {
    auto cfg = config();
    ModelSet set;
    set.task_model = task_model_names(parse_variant(cfg.value("variant", "full")));
    std::shared_ptr<const Vocabulary> vocab;
    for (const auto& name : set.task_model) {
      if (set.checkpoints.count(name) || !has_checkpoint(name)) continue;
      auto b = Backbone::restore(checkpoint_dir(name), vocab);
      if (!vocab) vocab = b.vocab_ptr();
      set.checkpoints.emplace(name, std::move(b));
    }
    return set;
  }

  void record_epoch(const EpochRecord& r) const {
    append(root_ / "metrics.jsonl", to_json(r).dump() + "\n");
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s epoch %zu loss %.6f%s steps %zu (%.1fs)\n",
                  r.stage.c_str(), r.epoch, r.loss,
                  r.dev_loss ? (" dev " + std::to_string(*r.dev_loss)).c_str() : "", r.steps,
                  r.seconds);
    log_line(buf);
  }

  void log_line(const std::string& line) const {
    append(root_ / "run.log", line.ends_with('\n') ? line : line + "\n");
  }

 private:
  static void append(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to " + p.string());
    out << s;
  }

  std::filesystem::path root_;
};

}  // namespace mgcrs
