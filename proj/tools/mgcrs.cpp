// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// mgcrs: command-line entry points.
//
//   synth   generate a synthetic corpus and write train/dev/test splits
//   ingest  convert a dataset into canonical splits
//   train   multitask stage (or the independent models of no_MTL)
//   tune    prompt tuning of theta per task
//   infer   run the pipeline and write predictions JSONL
//   eval    score a predictions file against a corpus
//   ablate  the oracle-substitution table
//   serve   HTTP service
//   chat    terminal conversation
//
// Failures print one JSON line {"error", "command"} to stderr and exit
// nonzero (2 for usage errors, 1 otherwise).

#include <CLI11.hpp>
#include <iostream>

#include "mgcrs/adapters.hpp"
#include "mgcrs/config.hpp"
#include "mgcrs/service.hpp"

namespace fs = std::filesystem;
using namespace mgcrs;

namespace {

std::string g_command = "mgcrs";

[[noreturn]] void die(const std::string& msg, int code = 1) {
  nlohmann::ordered_json j{{"error", msg}, {"command", g_command}};
  std::cerr << j.dump() << std::endl;
  std::exit(code);
}

void say(const std::string& s) { std::cout << s << std::endl; }

Corpus load_split(const fs::path& data, const std::string& split) {
  auto p = data / (split + ".jsonl");
  if (!fs::exists(p)) throw Error("missing split file " + p.string());
  auto c = load_canonical_jsonl(p);
  c.split = parse_split(split);
  return c;
}

void write_splits(const std::array<Corpus, 3>& splits, const fs::path& out) {
  fs::create_directories(out);
  for (const auto& c : splits) {
    auto p = out / (std::string(to_string(c.split)) + ".jsonl");
    save_corpus(c, p);
    say(std::string(to_string(c.split)) + ": " + std::to_string(c.dialogues.size()) +
        " dialogues, digest " + corpus_digest(c));
  }
}

StageOverride parse_sources(const std::vector<std::string>& specs) {
  StageOverride ov;
  for (const auto& s : specs) {
    auto eq = s.find('=');
    if (eq != 1 || s.size() < 3) throw Error("stage source must look like G=oracle, got '" + s + "'");
    Task t;
    switch (s[0]) {
      case 'G': t = Task::G; break;
      case 'T': t = Task::T; break;
      case 'R': t = Task::R; break;
      case 'D': t = Task::D; break;
      default: throw Error("unknown stage '" + s.substr(0, 1) + "'");
    }
    ov[t] = parse_stage_source(s.substr(2));
  }
  ov.validate();
  return ov;
}

struct TrainingData {
  Corpus train, dev;
};

TrainContext make_context(const AppConfig& cfg, const TrainingData& data,
                          std::shared_ptr<const Vocabulary> vocab, const Experiment& exp) {
  TrainContext ctx;
  ctx.vocab = std::move(vocab);
  ctx.model = cfg.model;
  ctx.train = cfg.train;
  ctx.train_corpus = &data.train;
  ctx.dev_corpus = data.dev.dialogues.empty() ? nullptr : &data.dev;
  ctx.on_epoch = [&exp](const EpochRecord& r) {
    exp.record_epoch(r);
    std::cout << r.stage << " epoch " << r.epoch << " loss " << r.loss
              << (r.dev_loss ? " dev " + std::to_string(*r.dev_loss) : "") << std::endl;
  };
  return ctx;
}

TrainingData load_training_data(const fs::path& data) {
  TrainingData d{load_split(data, "train"), {}};
  if (fs::exists(data / "dev.jsonl")) d.dev = load_split(data, "dev");
  return d;
}

/// The configuration an experiment was trained with, overlaid by later flags.
AppConfig experiment_config(const Experiment& exp, AppConfig cfg) {
  auto j = exp.config();
  cfg.train = train_config_from_json(j.at("train"), cfg.train);
  cfg.model = model_config_from_json(j.at("model"), cfg.model);
  cfg.pipeline.prompt = cfg.train.prompt;
  cfg.pipeline.budget = cfg.train.budget;
  return cfg;
}

void print_lines(const std::string& s) { std::cout << s << std::flush; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-goal conversational recommendation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config overlaying the built-in defaults");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::uint64_t synth_seed = 7;
  std::optional<std::size_t> s_dialogues, s_topics, s_items, s_turns;
  std::string synth_out;
  synth->add_option("--seed", synth_seed);
  synth->add_option("--dialogues", s_dialogues);
  synth->add_option("--topics", s_topics);
  synth->add_option("--items", s_items);
  synth->add_option("--turns", s_turns);
  synth->add_option("--out", synth_out, "output directory")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "convert a dataset into canonical splits");
  std::string in_format = "canonical", in_path, in_out;
  ingest->add_option("--format", in_format)->check(CLI::IsMember({"canonical", "durecdial", "tgredial"}));
  ingest->add_option("--input", in_path)->required();
  ingest->add_option("--out", in_out)->required();

  // train
  auto* train = app.add_subcommand("train", "multitask training stage");
  std::string data_dir, exp_dir, variant = "full";
  std::optional<std::size_t> e1, e2, batch;
  std::optional<double> lr;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> prompt;
  train->add_option("--data", data_dir, "directory with train/dev/test.jsonl")->required();
  train->add_option("--exp", exp_dir, "experiment directory")->required();
  train->add_option("--variant", variant)->check(CLI::IsMember({"full", "no_MTL", "no_PL"}));
  train->add_option("--e1", e1);
  train->add_option("--e2", e2, "epochs per independent model under no_MTL");
  train->add_option("--batch", batch);
  train->add_option("--lr", lr);
  train->add_option("--seed", train_seed);
  train->add_option("--prompt", prompt)->check(CLI::IsMember({"natural_language", "special_token"}));

  // tune
  auto* tune = app.add_subcommand("tune", "prompt tuning from theta");
  std::string tune_task = "all";
  tune->add_option("--data", data_dir)->required();
  tune->add_option("--exp", exp_dir)->required();
  tune->add_option("--task", tune_task)->check(CLI::IsMember({"G", "T", "R", "D", "all"}));
  tune->add_option("--e2", e2);

  // infer
  auto* infer = app.add_subcommand("infer", "run the pipeline over a split");
  std::string split = "test", out_path, external_path;
  std::vector<std::string> sources;
  std::size_t limit = 0;
  infer->add_option("--data", data_dir)->required();
  infer->add_option("--exp", exp_dir)->required();
  infer->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  infer->add_option("--out", out_path)->required();
  infer->add_option("--source", sources, "stage source, e.g. G=oracle T=external R=skip");
  infer->add_option("--external", external_path, "predictions JSONL for external stages");
  infer->add_option("--limit", limit, "at most this many turns");

  // eval
  auto* eval = app.add_subcommand("eval", "score predictions against a corpus");
  std::string preds_path, corpus_arg, tokenize;
  eval->add_option("--preds", preds_path)->required();
  eval->add_option("--corpus", corpus_arg, "corpus JSONL, or a split name with --data")->required();
  eval->add_option("--data", data_dir);
  eval->add_option("--exp", exp_dir, "adds response perplexity from this experiment");
  eval->add_option("--tokenize", tokenize)->check(CLI::IsMember({"whitespace", "character"}));
  eval->add_option("--out", out_path, "report JSON");
  std::string compare_path;
  eval->add_option("--compare", compare_path,
                   "second predictions file; paired bootstrap on per-turn response F1");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "oracle-substitution ablation table");
  bool no_retrain = false;
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--exp", exp_dir)->required();
  ablate->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  ablate->add_option("--out", out_path, "output directory")->required();
  ablate->add_option("--limit", limit);
  ablate->add_flag("--no-retrain", no_retrain,
                   "score skip rows with theta_D instead of retrained response models");

  // serve / chat
  auto* serve = app.add_subcommand("serve", "HTTP service");
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<long> idle;
  std::string persist;
  serve->add_option("--data", data_dir)->required();
  serve->add_option("--exp", exp_dir)->required();
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--idle-timeout", idle, "seconds");
  serve->add_option("--persist", persist, "directory for session transcripts");

  auto* chat = app.add_subcommand("chat", "terminal conversation");
  chat->add_option("--data", data_dir)->required();
  chat->add_option("--exp", exp_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (!app.get_subcommands().empty()) g_command = app.get_subcommands().front()->get_name();
    die(e.what(), 2);
  }
  g_command = app.get_subcommands().front()->get_name();

  try {
    AppConfig cfg = config_path.empty() ? AppConfig{} : load_app_config(config_path);

    if (*synth) {
      if (s_dialogues) cfg.synth.n_dialogues = *s_dialogues;
      if (s_topics) cfg.synth.n_topics = *s_topics;
      if (s_items) cfg.synth.n_items = *s_items;
      if (s_turns) cfg.synth.turns_per_dialogue = *s_turns;
      auto c = generate_synthetic(synth_seed, cfg.synth);
      write_splits(split_corpus(c, cfg.data.train_frac, cfg.data.dev_frac), synth_out);
      return 0;
    }

    if (*ingest) {
      auto fmt = in_format == "canonical" ? CorpusFormat::canonical_jsonl : parse_corpus_format(in_format);
      auto parts = load_corpus_splits(in_path, fmt);
      std::array<Corpus, 3> splits;
      if (parts.size() == 1) {
        splits = split_corpus(parts.begin()->second, cfg.data.train_frac, cfg.data.dev_frac);
      } else {
        for (auto& [s, c] : parts) splits[static_cast<std::size_t>(s)] = std::move(c);
        for (std::size_t i = 0; i < 3; ++i) splits[i].split = static_cast<Split>(i);
      }
      for (const auto& c : splits) {
        auto report = validate_corpus(c);
        for (const auto& v : report.violations)
          std::cerr << "warning: " << v.dialogue_id << ":" << v.turn_index << " " << v.message << "\n";
      }
      write_splits(splits, in_out);
      return 0;
    }

    if (*train) {
      if (e1) cfg.train.e1 = *e1;
      if (e2) cfg.train.e2 = *e2;
      if (batch) cfg.train.batch_size = *batch;
      if (lr) cfg.train.lr = *lr;
      if (train_seed) cfg.train.seed = *train_seed;
      if (prompt) cfg.train.prompt = parse_prompt_kind(*prompt);
      auto data = load_training_data(data_dir);
      Experiment exp(exp_dir);
      if (fs::exists(exp.root() / "config.json"))
        throw Error("experiment directory already initialized: " + exp_dir);
      auto ctx = make_context(cfg, data, build_experiment_vocab(data.train), exp);
      auto v = parse_variant(variant);
      exp.initialize(ctx, v);
      if (v == Variant::no_MTL) {
        auto set = ablation_variant(ctx, v);
        for (const auto& [name, b] : set.checkpoints) exp.save(b);
      } else {
        auto [theta, run] = multitask_train(ctx);
        exp.save(theta);
      }
      say("wrote " + exp_dir);
      return 0;
    }

    if (*tune) {
      Experiment exp(exp_dir);
      cfg = experiment_config(exp, cfg);
      if (e2) cfg.train.e2 = *e2;
      if (exp.config().value("variant", "full") != "full")
        throw Error("prompt tuning applies to the full variant only");
      auto data = load_training_data(data_dir);
      auto theta = exp.load("theta");
      auto ctx = make_context(cfg, data, theta.vocab_ptr(), exp);
      std::vector<Task> tasks;
      if (tune_task == "all")
        tasks.assign(std::begin(kAllTasks), std::end(kAllTasks));
      else
        tasks.push_back(tune_task == "G" ? Task::G : tune_task == "T" ? Task::T
                                         : tune_task == "R" ? Task::R : Task::D);
      for (Task t : tasks) {
        auto [tuned, run] = prompt_tune(theta, t, ctx);
        exp.save(tuned);
      }
      say("wrote " + exp_dir);
      return 0;
    }

    if (*infer) {
      Experiment exp(exp_dir);
      cfg = experiment_config(exp, cfg);
      auto corpus = load_split(data_dir, split);
      auto models = exp.load_models();
      auto ov = parse_sources(sources);
      std::optional<PredictionIndex> ext;
      if (!external_path.empty()) ext = index_predictions(read_predictions(external_path));
      Pipeline pipe(corpus, StageModels::from(models), cfg.pipeline);
      auto preds = pipe.run_corpus(corpus, ov, ext ? &*ext : nullptr, nullptr, limit);
      write_predictions(out_path, preds);
      say("wrote " + std::to_string(preds.size()) + " predictions to " + out_path);
      return 0;
    }

    if (*eval) {
      if (!tokenize.empty()) cfg.eval.rule = parse_token_rule(tokenize);
      Corpus corpus = fs::exists(corpus_arg) ? load_canonical_jsonl(corpus_arg)
                      : !data_dir.empty()    ? load_split(data_dir, corpus_arg)
                                             : throw Error("no such corpus: " + corpus_arg);
      auto preds = read_predictions(preds_path);
      attach_gold(preds, corpus);
      cfg.eval.goal_set = corpus.goal_set;
      std::optional<double> ppl;
      if (!exp_dir.empty()) {
        Experiment exp(exp_dir);
        cfg = experiment_config(exp, cfg);
        auto models = exp.load_models();
        Backbone* d = models.for_task(Task::D);
        if (!d) throw Error("experiment has no response model");
        Serializer ser(d->vocab(), CatalogIndex(corpus.item_catalog), cfg.train.prompt, cfg.train.budget);
        ppl = response_perplexity(*d, corpus, ser);
      }
      auto report = evaluate(preds, cfg.eval, ppl);
      print_lines(format_report(report));
      auto out = to_json(report);
      if (!compare_path.empty()) {
        auto other = index_predictions(read_predictions(compare_path));
        std::vector<double> a, b;
        for (const auto& p : preds) {
          auto it = other.find({p.dialogue_id, p.turn_index});
          if (it == other.end())
            throw Error("--compare file lacks " + p.dialogue_id + ":" + std::to_string(p.turn_index));
          a.push_back(metrics::word_f1(p.response, p.reference, cfg.eval.rule).f1);
          b.push_back(metrics::word_f1(it->second.response, p.reference, cfg.eval.rule).f1);
        }
        auto bs = metrics::paired_bootstrap(a, b, cfg.bootstrap_resamples, cfg.train.seed);
        say("\npaired bootstrap (response F1, " + std::to_string(bs.resamples) +
            " resamples): diff " + metrics::fmt(bs.mean_diff) + " p " + metrics::fmt(bs.p_value));
        out["bootstrap"] = {{"metric", "response_f1"},
                            {"mean_diff", bs.mean_diff},
                            {"p_value", bs.p_value},
                            {"resamples", bs.resamples}};
      }
      if (!out_path.empty()) write_file(out_path, out.dump(2) + "\n");
      return 0;
    }

    if (*ablate) {
      Experiment exp(exp_dir);
      cfg = experiment_config(exp, cfg);
      auto test = load_split(data_dir, split);
      auto models = exp.load_models();
      auto suite = standard_ablation_suite();
      std::map<std::string, Backbone> skip_models;
      if (!no_retrain) {
        auto data = load_training_data(data_dir);
        auto theta = exp.load("theta");
        auto ctx = make_context(cfg, data, theta.vocab_ptr(), exp);
        for (const auto& e : suite) {
          if (!has_skip(e.overrides)) continue;
          auto name = skip_model_name(e.overrides);
          if (skip_models.count(name)) continue;
          if (exp.has_checkpoint(name)) {
            skip_models.emplace(name, exp.load(name, theta.vocab_ptr()));
          } else {
            auto [m, run] = prompt_tune(theta, Task::D, ctx, skip_conditioning(e.overrides), name);
            exp.save(m);
            skip_models.emplace(name, std::move(m));
          }
        }
        use_skip_models(suite, skip_models);
      }
      Pipeline pipe(test, StageModels::from(models), cfg.pipeline);
      cfg.eval.goal_set = test.goal_set;
      auto rows = run_ablation(pipe, test, suite, cfg.eval, nullptr, limit,
                               [](const AblationRow& r) { say("  " + r.name + " done"); });
      fs::create_directories(out_path);
      auto j = nlohmann::ordered_json::array();
      for (const auto& r : rows) j.push_back(to_json(r));
      write_file(fs::path(out_path) / "ablation.json", j.dump(2) + "\n");
      auto table = format_ablation(rows);
      write_file(fs::path(out_path) / "ablation.txt", table);
      print_lines(table);
      return 0;
    }

    if (*serve || *chat) {
      Experiment exp(exp_dir);
      cfg = experiment_config(exp, cfg);
      auto inventory = load_split(data_dir, "train");
      auto models = std::make_shared<const ModelSet>(exp.load_models());
      ChatEngine engine(inventory, models, cfg.pipeline, cfg.serve.top_items);
      if (!engine.models_loaded()) throw Error("experiment is missing stage checkpoints");
      if (*chat) {
        SessionOptions so;
        so.idle_timeout = std::chrono::seconds(0);
        SessionStore store(so);
        auto s = store.create();
        std::string line;
        std::cout << "> " << std::flush;
        while (std::getline(std::cin, line)) {
          if (line == "/quit") break;
          if (!trim(line).empty()) {
            auto r = engine.serve_turn(*s, line);
            std::cout << "  goal: " << join(r.prediction.goal, ", ") << "\n"
                      << "  topics: " << join(r.prediction.topics, ", ") << "\n";
            if (!r.items.empty()) {
              std::cout << "  items:";
              for (const auto& it : r.items) std::cout << " " << it.name << " (" << metrics::fmt(it.p, 3) << ")";
              std::cout << "\n";
            }
            std::cout << r.prediction.response << "\n";
          }
          std::cout << "> " << std::flush;
        }
        return 0;
      }
      if (host) cfg.serve.host = *host;
      if (port) cfg.serve.port = *port;
      if (idle) cfg.serve.idle_timeout = std::chrono::seconds(*idle);
      SessionOptions so;
      so.idle_timeout = cfg.serve.idle_timeout;
      if (!persist.empty()) so.persist_dir = persist;
      SessionStore store(so);
      ChatServer server(engine, store);
      say("listening on " + cfg.serve.host + ":" + std::to_string(cfg.serve.port));
      server.run(cfg.serve.host, cfg.serve.port);
      return 0;
    }
  } catch (const std::exception& e) {
    die(e.what());
  }
  return 0;
}
