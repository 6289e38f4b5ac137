// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner: one PASS/FAIL/SKIP line per criterion on stdout, training
// progress on stderr. Exits nonzero when any criterion fails.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "golden.hpp"
#include "metric_oracles.hpp"
#include "mgcrs/adapters.hpp"
#include "synthetic_run.hpp"

using namespace mgcrs;
using namespace mgcrs::testing;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::fail;
  std::string detail;
  double untimed = 0;  // seconds spent training checkpoints, outside the bound
  std::optional<double> elapsed;  // set when the work happened before the call
};

Outcome outcome(Status s, std::string detail) {
  Outcome o;
  o.status = s;
  o.detail = std::move(detail);
  return o;
}

Outcome pass_if(bool ok, std::string detail) { return outcome(ok ? Status::pass : Status::fail, std::move(detail)); }

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << x;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// append a runtime verdict; `hard` bounds fail the criterion when exceeded
Outcome timed(Outcome o, double secs, double limit, bool hard) {
  secs = o.elapsed.value_or(secs) - o.untimed;
  if (o.untimed > 0) o.detail += "; checkpoint training " + fmt(o.untimed, 1) + "s";
  o.detail += "; " + fmt(secs, 1) + "s (limit " + fmt(limit, 0) + "s";
  if (secs > limit) {
    o.detail += hard ? ", exceeded)" : ", over target)";
    if (hard) o.status = Status::fail;
  } else {
    o.detail += ")";
  }
  return o;
}

std::shared_ptr<const Vocabulary> fixture_vocab(const Corpus& c) {
  return std::make_shared<Vocabulary>(build_vocabulary(build_base_tokenizer(c), c.item_catalog));
}

ModelConfig d32(std::uint64_t seed, double init) {
  ModelConfig c;
  c.d_model = 32;
  c.heads = 4;
  c.ffn = 64;
  c.max_positions = 64;
  c.seed = seed;
  c.init_std = init;
  return c;
}

std::vector<int> random_ids(Rng& rng, int vocab, std::size_t n) {
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(rng.below(static_cast<std::size_t>(vocab)));
  return v;
}

// ---------------------------------------------------------------------------

Outcome serialization_goldens() {
  auto r = check_serialization_goldens(MGCRS_TEST_DATA, false);
  std::string d = std::to_string(r.compared) + " lines over " + std::to_string(r.turns) + " turns, " +
                  std::to_string(r.mismatches) + " mismatches";
  if (r.mismatches) d += "; " + r.message;
  return pass_if(r.mismatches == 0 && r.turns >= 50, d);
}

Outcome metric_oracles() {
  auto r = oracle::run_metric_oracles(1000);
  std::string d = std::to_string(r.cases) + " cases, " + std::to_string(r.comparisons) +
                  " comparisons, max error " + std::to_string(r.max_err);
  if (!r.ok()) d += "; " + r.failures.front();
  return pass_if(r.ok() && r.cases >= 1000, d);
}

Outcome backbone_correctness() {
  auto corpus = load_canonical_jsonl(fs::path(MGCRS_TEST_DATA) / "fixture_corpus.jsonl");
  auto v = fixture_vocab(corpus);

  // central differences at double precision over 60 sampled parameters
  ModelConfig cfg = d32(11, 0.3);
  cfg.vocab_size = static_cast<int>(v->size());
  nn::Seq2Seq<double> m(cfg, v->sos_id(), v->eos_id());
  Rng rng(5);
  std::vector<IdPair> batch;
  for (int i = 0; i < 3; ++i)
    batch.push_back({random_ids(rng, cfg.vocab_size, 4 + i), random_ids(rng, cfg.vocab_size, 2 + i)});
  m.zero_grad();
  m.loss(batch, true);
  auto grad = m.grads();
  auto& w = m.params();
  std::vector<std::size_t> candidates;
  for (const auto& t : m.tensors())
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.rows * t.cols); ++i)
      if (std::abs(grad[t.offset + i]) > 1e-7) candidates.push_back(t.offset + i);
  double worst = 0;
  for (int k = 0; k < 60 && !candidates.empty(); ++k) {
    std::size_t i = candidates[rng.below(candidates.size())];
    const double orig = w[i], eps = 1e-5;
    w[i] = orig + eps;
    double lp = m.loss(batch, false);
    w[i] = orig - eps;
    double lm = m.loss(batch, false);
    w[i] = orig;
    double num = (lp - lm) / (2 * eps);
    worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-8}));
  }

  // uniform model: zero output head over the fixture's response pairs
  Backbone b(v, d32(3, 0.02));
  b.model().zero_output_head();
  Serializer ser(*v, CatalogIndex(corpus.item_catalog), PromptKind::special_token);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<IdPair> ids;
  for (const auto& p : serialize_task(corpus, Task::D, ser)) {
    pairs.emplace_back(p.input_text, p.target_text);
    ids.push_back(b.encode_pair(p.input_text, p.target_text));
  }
  const double V = static_cast<double>(v->size());
  double loss = b.eval_loss(ids);
  double ppl = metrics::perplexity(b, std::span<const std::pair<std::string, std::string>>(pairs));

  bool ok = !candidates.empty() && worst < 1e-4 && std::abs(loss - std::log(V)) <= 1e-3 &&
            std::abs(ppl - V) <= 1e-3 * V;
  return pass_if(ok, "grad rel err " + std::to_string(worst) + "; uniform loss " + fmt(loss, 6) +
                         " vs ln|V| " + fmt(std::log(V), 6) + "; ppl " + fmt(ppl, 3) + " vs |V| " +
                         fmt(V, 0));
}

Outcome item_decoding() {
  const std::size_t n = 200;
  std::vector<CatalogItem> catalog;
  for (std::size_t i = 0; i < n; ++i) catalog.push_back({std::to_string(i), ""});
  auto base = std::make_shared<WordCharTokenizer>(WordCharTokenizer::from_words({"a", "b", "c"}, {}));
  auto v = std::make_shared<Vocabulary>(build_vocabulary(base, catalog));
  Backbone b(v, d32(8, 0.5));

  double worst_mass = 0;
  bool permutation = true, sorted = true;
  for (const char* input : {"a b c", "c a", "b", "a a b b c c"}) {
    auto r = b.rank_items(input, catalog);
    double z = 0;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < r.size(); ++i) {
      z += r[i].prob;
      ids.insert(r[i].item_id);
      if (i && r[i - 1].prob < r[i].prob) sorted = false;
    }
    worst_mass = std::max(worst_mass, std::abs(z - 1.0));
    permutation = permutation && r.size() == n && ids.size() == n;
  }
  b.model().zero_output_head();
  auto u = b.rank_items("a", catalog);
  bool catalog_order = u.size() == n;
  for (std::size_t i = 0; catalog_order && i < n; ++i) catalog_order = u[i].item_id == catalog[i].id;
  return pass_if(worst_mass <= 1e-6 && permutation && sorted && catalog_order,
                 "mass error " + std::to_string(worst_mass) + "; permutation " + (permutation ? "yes" : "no") +
                     "; uniform tie-break in catalog order " + (catalog_order ? "yes" : "no"));
}

// ---------------------------------------------------------------------------

bool has_run(const fs::path& dir) {
  return fs::exists(dir / "report.json") && fs::exists(dir / "predictions.test.jsonl");
}

// rebuilds a finished run from its directory (development shortcut)
SyntheticRun load_run(const fs::path& dir, const SyntheticRunConfig& cfg) {
  SyntheticRun run;
  run.splits = synthetic_splits(cfg);
  Experiment exp(dir);
  run.models = exp.load_models();
  run.vocab = run.models.for_task(Task::G)->vocab_ptr();
  run.models.checkpoints.emplace("theta", exp.load("theta", run.vocab));
  for (const auto& [name, b] : run.models.checkpoints) run.checkpoint_digests[name] = b.params_digest();
  run.predictions = read_predictions(dir / "predictions.test.jsonl");
  EvalOptions eo;
  eo.goal_set = run.splits[2].goal_set;
  run.report = evaluate(run.predictions, eo);
  return run;
}

struct Thresholds {
  double goal_f1 = 0.95, topic_hit1 = 0.90, ndcg10 = 0.90, bleu1 = 0.80;
};

Outcome synthetic_end_to_end(const SyntheticRun& run) {
  Thresholds th;
  const auto& r = run.report;
  double g = r.goal_micro ? r.goal_micro->score.f1 : 0;
  double t = r.topic_hit1 ? *r.topic_hit1 : 0;
  double nd = 0;
  if (r.items && r.items->ndcg.count(10)) nd = r.items->ndcg.at(10);
  double b1 = r.generation ? r.generation->bleu1 : 0;
  bool ok = g >= th.goal_f1 && t >= th.topic_hit1 && nd >= th.ndcg10 && b1 >= th.bleu1;
  auto o = pass_if(ok, "goal micro-F1 " + fmt(g) + " (>= 0.95), topic Hit@1 " + fmt(t) +
                           " (>= 0.90), item NDCG@10 " + fmt(nd) + " (>= 0.90), BLEU-1 " + fmt(b1) +
                           " (>= 0.80)");
  o.elapsed = run.train_seconds + run.eval_seconds;
  return o;
}

PipelineConfig run_pipeline_config(const SyntheticRunConfig& cfg) {
  PipelineConfig pc = cfg.pipeline;
  pc.prompt = cfg.train.prompt;
  pc.budget = cfg.train.budget;
  pc.recommendation_keywords = {"recommend"};
  return pc;
}

Outcome ablation_ordering(SyntheticRun& run, const SyntheticRunConfig& cfg, const fs::path& dir) {
  const Corpus& test = run.splits[2];
  auto ctx = synthetic_context(run, cfg, nullptr);
  const Backbone& theta = run.models.checkpoints.at("theta");
  auto suite = standard_ablation_suite();

  // skip models are cached next to the run so a rerun does not retrain them
  Experiment exp(dir);
  auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, Backbone> skip;
  for (const auto& e : suite) {
    if (!has_skip(e.overrides)) continue;
    auto name = skip_model_name(e.overrides);
    if (skip.count(name)) continue;
    if (exp.has_checkpoint(name)) {
      skip.emplace(name, exp.load(name, run.vocab));
      continue;
    }
    auto [m, tr] = prompt_tune(theta, Task::D, ctx, skip_conditioning(e.overrides), name);
    exp.save(m);
    skip.emplace(name, std::move(m));
  }
  use_skip_models(suite, skip);
  const double training = seconds_since(t0);

  Pipeline pipe(test, StageModels::from(run.models), run_pipeline_config(cfg));
  EvalOptions eo;
  eo.goal_set = test.goal_set;
  auto rows = run_ablation(pipe, test, suite, eo);
  write_file(dir / "ablation.txt", format_ablation(rows));
  std::map<std::string, double> bleu;
  for (const auto& r : rows) bleu[r.name] = r.generation.bleu1;

  const double full = bleu.at("pipeline");
  const double drop_g = full - bleu.at("w/o goal"), drop_t = full - bleu.at("w/o topic"),
               drop_r = full - bleu.at("w/o item");
  bool order = bleu.at("OracleGen") >= full && full >= bleu.at("DirectGen");
  bool topic_largest = drop_t > 0 && drop_t >= drop_g && drop_t >= drop_r;
  auto o = pass_if(order && topic_largest,
                 "BLEU-1 OracleGen " + fmt(bleu.at("OracleGen")) + " >= pipeline " + fmt(full) +
                     " >= DirectGen " + fmt(bleu.at("DirectGen")) + (order ? "" : " (violated)") +
                     "; drops w/o goal " + fmt(drop_g) + ", w/o topic " + fmt(drop_t) + ", w/o item " +
                     fmt(drop_r) + (topic_largest ? "" : " (topic not largest)"));
  o.untimed = training;
  return o;
}

Outcome propagation(const SyntheticRun& run, const SyntheticRunConfig& cfg) {
  const Corpus& test = run.splits[2];
  Pipeline pipe(test, StageModels::from(run.models), run_pipeline_config(cfg));
  const Serializer& ser = *pipe.serializer();

  // every stage runs its model on oracle upstream labels
  StageOverride up_t = StageOverride::oracle_at(Task::G);
  StageOverride up_r = up_t;
  up_r[Task::T] = StageSource::oracle;
  double em_t = measure_propagation(pipe.run_corpus(test, up_t), test, ser).em(Task::T);
  double em_r = measure_propagation(pipe.run_corpus(test, up_r), test, ser).em(Task::R);
  double em_d = measure_propagation(pipe.run_corpus(test, StageOverride::oracle_gen()), test, ser).em(Task::D);

  // half the external goals corrupted
  const std::size_t n = 200;
  auto gold = pipe.run_corpus(test, StageOverride::oracle_gen(), nullptr, nullptr, n);
  PredictionIndex ext;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto p = gold[i];
    if (i % 2) p.goal = {"not a goal"};
    ext[{p.dialogue_id, p.turn_index}] = p;
  }
  StageOverride corrupt;
  corrupt[Task::G] = StageSource::external;
  corrupt[Task::R] = StageSource::skip;
  corrupt[Task::D] = StageSource::oracle;
  auto preds = pipe.run_corpus(test, corrupt, &ext, nullptr, n);
  double em_c = measure_propagation(preds, test, ser).em(Task::T);

  bool ok = em_t == 1.0 && em_r == 1.0 && em_d == 1.0 && gold.size() == n && em_c == 0.5;
  return pass_if(ok, "oracle-upstream EM T " + fmt(em_t) + ", R " + fmt(em_r) + ", D " + fmt(em_d) +
                         "; 50% goal corruption over " + std::to_string(gold.size()) +
                         " turns gives EM T " + fmt(em_c));
}

struct DatasetExpectation {
  std::string name;
  CorpusFormat format;
  std::size_t dialogues;
  std::optional<std::array<std::size_t, 3>> split;
  std::size_t goals;
  std::optional<std::size_t> topics;
  std::size_t items;
};

Outcome dataset_statistics(const std::string& tgredial, const std::string& durecdial) {
  const std::vector<std::pair<DatasetExpectation, std::string>> sets{
      {{"TG-ReDial", CorpusFormat::tgredial, 10000, std::array<std::size_t, 3>{8495, 757, 748}, 8,
        std::nullopt, 33834},
       tgredial},
      {{"DuRecDial", CorpusFormat::durecdial, 10190, std::nullopt, 21, 701, 11162}, durecdial}};
  std::string detail;
  bool any = false, ok = true;
  for (const auto& [want, path] : sets) {
    if (!detail.empty()) detail += "; ";
    if (path.empty() || !fs::exists(path)) {
      detail += want.name + " absent";
      continue;
    }
    any = true;
    auto parts = load_corpus_splits(path, want.format);
    std::array<std::size_t, 3> split{};
    for (const auto& [s, c] : parts) split[static_cast<std::size_t>(s)] = c.dialogues.size();
    const Corpus& c = parts.begin()->second;
    std::size_t total = split[0] + split[1] + split[2];
    bool good = total == want.dialogues && c.goal_set.size() == want.goals &&
                c.item_catalog.size() == want.items && (!want.split || split == *want.split) &&
                (!want.topics || c.topic_set.size() == *want.topics);
    ok = ok && good;
    detail += want.name + " " + std::to_string(total) + " dialogues (" + std::to_string(split[0]) + "/" +
              std::to_string(split[1]) + "/" + std::to_string(split[2]) + "), " +
              std::to_string(c.goal_set.size()) + " goals, " + std::to_string(c.topic_set.size()) +
              " topics, " + std::to_string(c.item_catalog.size()) + " items" + (good ? "" : " (mismatch)");
  }
  if (!any) return outcome(Status::skip, detail + "; pass --tgredial/--durecdial or set MGCRS_TGREDIAL/MGCRS_DURECDIAL");
  return pass_if(ok, detail);
}

Outcome determinism(const SyntheticRun& a, const SyntheticRun& b) {
  std::size_t same = 0;
  std::string differing;
  for (const auto& [name, digest] : a.checkpoint_digests) {
    auto it = b.checkpoint_digests.find(name);
    if (it != b.checkpoint_digests.end() && it->second == digest)
      ++same;
    else
      differing += (differing.empty() ? "" : ",") + name;
  }
  bool digests = same == a.checkpoint_digests.size() && a.checkpoint_digests.size() == b.checkpoint_digests.size();
  bool report = to_json(a.report) == to_json(b.report);
  return pass_if(digests && report && !a.checkpoint_digests.empty(),
                 std::to_string(same) + "/" + std::to_string(a.checkpoint_digests.size()) +
                     " checkpoint digests equal" + (differing.empty() ? "" : " (differ: " + differing + ")") +
                     "; metric report " + (report ? "identical" : "differs"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "mgcrs_acceptance").string();
  std::string tgredial, durecdial;
  std::set<int> only;
  bool reuse = false;
  app.add_option("--work", work, "directory for synthetic runs");
  app.add_option("--tgredial", tgredial, "TG-ReDial data directory")->envname("MGCRS_TGREDIAL");
  app.add_option("--durecdial", durecdial, "DuRecDial data directory")->envname("MGCRS_DURECDIAL");
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  app.add_flag("--reuse", reuse, "load finished synthetic runs from --work instead of training");
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto report = [&](int n, const std::string& name, const std::function<Outcome()>& fn, double limit,
                    bool hard) {
    if (!only.empty() && !only.count(n)) return;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = outcome(Status::fail, std::string("error: ") + e.what());
    }
    if (o.status != Status::skip) o = timed(o, seconds_since(t0), limit, hard);
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    failures += o.status == Status::fail;
    std::cout << tag << "  [" << n << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "serialization goldens", serialization_goldens, 1, true);
  report(2, "metric oracle equivalence", metric_oracles, 30, true);
  report(3, "backbone correctness", backbone_correctness, 120, true);
  report(4, "constrained item decoding", item_decoding, 10, true);

  SyntheticRunConfig cfg;
  const fs::path dir_a = fs::path(work) / "run_a", dir_b = fs::path(work) / "run_b";
  std::optional<SyntheticRun> run_a;
  std::string run_error;
  auto needs_run = [&](int n) { return only.empty() || only.count(n); };
  if (needs_run(5) || needs_run(6) || needs_run(7) || needs_run(9)) {
    try {
      run_a = reuse && has_run(dir_a) ? load_run(dir_a, cfg) : run_synthetic(dir_a, cfg);
    } catch (const std::exception& e) {
      run_error = e.what();
    }
  }
  auto with_run = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!run_a) return outcome(Status::fail, "synthetic run failed: " + run_error);
      return fn();
    };
  };

  report(5, "synthetic end-to-end", with_run([&] { return synthetic_end_to_end(*run_a); }), 45 * 60, false);
  report(6, "ablation ordering", with_run([&] { return ablation_ordering(*run_a, cfg, dir_a); }), 600, true);
  report(7, "propagation measurement", with_run([&] { return propagation(*run_a, cfg); }), 60, true);
  report(8, "dataset statistics", [&] { return dataset_statistics(tgredial, durecdial); }, 600, false);
  report(9, "determinism", with_run([&] {
           auto b = reuse && has_run(dir_b) ? load_run(dir_b, cfg) : run_synthetic(dir_b, cfg);
           return determinism(*run_a, b);
         }),
         2 * 45 * 60, false);

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria met"))
            << std::endl;
  return failures ? 1 : 0;
}
