// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "metric_oracles.hpp"

using namespace mgcrs;
using namespace mgcrs::metrics;
using Catch::Approx;

TEST_CASE("word F1 hand cases") {
  CHECK(word_f1("a b c", "a b c").f1 == 1.0);
  CHECK(word_f1("a b", "c d").f1 == 0.0);
  auto s = word_f1("a b", "a c");
  CHECK(s.p == 0.5);
  CHECK(s.r == 0.5);
  CHECK(s.f1 == 0.5);
  CHECK(word_f1("", "").f1 == 1.0);
  CHECK(word_f1("", "a").f1 == 0.0);
  // multiset: repeated hypothesis words match at most the reference count
  CHECK(word_f1("a a", "a b").p == 0.5);
  // character rule for unsegmented text
  CHECK(word_f1("你好", "你们", TokenRule::character).f1 == 0.5);
}

TEST_CASE("BLEU and Dist hand cases") {
  std::vector<std::string> h{"a b c"}, r{"a b d"};
  CHECK(bleu(h, r, 1) == Approx(2.0 / 3).epsilon(1e-12));
  CHECK(bleu(h, h, 1) == 1.0);
  CHECK(bleu(h, h, 2) == 1.0);
  CHECK(bleu(std::vector<std::string>{""}, r, 1) == 0.0);
  // single word: no bigram, BLEU-2 is 0 under zero smoothing
  CHECK(bleu(std::vector<std::string>{"a"}, std::vector<std::string>{"a"}, 2) == 0.0);
  // brevity penalty
  CHECK(bleu(std::vector<std::string>{"a"}, std::vector<std::string>{"a b"}, 1) ==
        Approx(std::exp(1.0 - 2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(bleu(h, std::vector<std::string>{}, 1), Error);

  CHECK(distinct_n(std::vector<std::string>{"a b a b"}, 2) == Approx(2.0 / 3).epsilon(1e-12));
  CHECK(distinct_n(std::vector<std::string>{"a b", "a b", "a b", "a b"}, 2) == 0.25);
  CHECK(distinct_n(std::vector<std::string>{"a b", "c d", "e f"}, 2) == 1.0);
  CHECK(distinct_n(std::vector<std::string>{"a", ""}, 2) == 0.0);
}

TEST_CASE("perplexity conventions") {
  // uniform over V: every token scores -ln V
  const double V = 409;
  std::vector<std::vector<double>> s{{-std::log(V), -std::log(V)}, {-std::log(V)}};
  CHECK(perplexity_from_scores(s) == Approx(V).epsilon(1e-12));
  std::swap(s[0], s[1]);
  CHECK(perplexity_from_scores(s) == Approx(V).epsilon(1e-12));
  CHECK_THROWS_AS(perplexity_from_scores(std::vector<std::vector<double>>{}), Error);
}

TEST_CASE("goal macro and micro hand cases") {
  std::vector<std::string> set{"A", "B", "C"};
  std::vector<Labels> gold{{"A"}, {"B"}};
  CHECK(goal_macro_prf(gold, gold, set).score.f1 == 1.0);
  std::vector<Labels> always_a{{"A"}, {"A"}};
  auto m = goal_macro_prf(always_a, gold, set).score;
  CHECK(m.f1 == Approx(1.0 / 3).epsilon(1e-12));
  std::vector<Labels> oov{{"Z"}, {"Z"}};
  auto z = goal_macro_prf(oov, gold, set).score;
  CHECK(z.p == 0.0);
  CHECK(z.r == 0.0);
  CHECK(z.f1 == 0.0);
  CHECK(goal_micro_prf(always_a, gold).score.f1 == 0.5);
}

TEST_CASE("topic micro convention") {
  CHECK(topic_instance_prf({}, {}).f1 == 1.0);
  CHECK(topic_instance_prf({"A"}, {}).f1 == 0.0);
  auto s = topic_instance_prf({"A"}, {"A", "B"});
  CHECK(s.p == 1.0);
  CHECK(s.r == 0.5);
  CHECK(s.f1 == Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("hit, NDCG and MRR hand cases") {
  std::vector<std::string> ranked{"x", "y", "g", "z"};
  std::vector<std::string> gold{"g"};
  CHECK(hit_at_k(ranked, gold, 1) == 0);
  CHECK(hit_at_k(ranked, gold, 3) == 1);
  CHECK(hit_at_k(ranked, gold, 5) == 1);
  CHECK(ndcg_at_k(ranked, "g", 10) == 0.5);
  CHECK(mrr_at_k(ranked, "g", 10) == Approx(1.0 / 3).epsilon(1e-12));
  CHECK(ndcg_at_k(ranked, "x", 10) == 1.0);
  std::vector<std::string> long_list;
  for (int i = 0; i < 20; ++i) long_list.push_back(std::to_string(i));
  CHECK(ndcg_at_k(long_list, "10", 10) == 0.0);
  CHECK(mrr_at_k(long_list, "10", 10) == 0.0);
  CHECK(ndcg_at_k(long_list, "10", 50) > 0.0);
  std::vector<Labels> p{{"A"}, {}}, g{{"A"}, {"B"}};
  CHECK(hit_at_1_generated(p, g) == 0.5);
}

TEST_CASE("metric oracle equivalence on 1000 random cases") {
  auto rep = testing::oracle::run_metric_oracles(1000, 17);
  for (const auto& f : rep.failures) INFO(f);
  CHECK(rep.ok());
  CHECK(rep.cases == 1000);
  CHECK(rep.max_err <= 1e-9);
}

TEST_CASE("ranges, permutation invariance and monotonicity") {
  Rng rng(3);
  const std::vector<std::string> alpha{"a", "b", "c", "d"};
  for (int c = 0; c < 300; ++c) {
    std::vector<std::string> h, r;
    std::vector<Labels> pt, gt;
    for (int i = 0; i < 5; ++i) {
      std::string a, b;
      for (std::size_t k = 0, n = rng.below(6); k < n; ++k) a += alpha[rng.below(4)] + " ";
      for (std::size_t k = 0, n = rng.below(6); k < n; ++k) b += alpha[rng.below(4)] + " ";
      h.push_back(a);
      r.push_back(b);
      pt.push_back({alpha[rng.below(4)]});
      gt.push_back(rng.below(3) ? Labels{alpha[rng.below(4)]} : Labels{});
    }
    auto g = generation_scores(h, r);
    for (double x : {g.word_f1, g.bleu1, g.bleu2, g.dist2}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    auto t = topic_micro_prf(pt, gt).score;
    CHECK(t.f1 >= 0.0);
    CHECK(t.f1 <= 1.0);

    // reversing the sample order changes no corpus-level score
    std::vector<std::string> hr(h.rbegin(), h.rend()), rr(r.rbegin(), r.rend());
    std::vector<Labels> ptr(pt.rbegin(), pt.rend()), gtr(gt.rbegin(), gt.rend());
    auto g2 = generation_scores(hr, rr);
    CHECK(std::abs(g.bleu1 - g2.bleu1) < 1e-12);
    CHECK(std::abs(g.bleu2 - g2.bleu2) < 1e-12);
    CHECK(std::abs(g.dist2 - g2.dist2) < 1e-12);
    CHECK(std::abs(g.word_f1 - g2.word_f1) < 1e-12);
    CHECK(std::abs(t.f1 - topic_micro_prf(ptr, gtr).score.f1) < 1e-12);

    std::vector<std::string> ranked = alpha;
    rng.shuffle(ranked);
    double prev_h = 0, prev_n = 0;
    for (std::size_t k = 1; k <= 5; ++k) {
      double hk = hit_at_k(ranked, std::vector<std::string>{"c"}, k);
      double nk = ndcg_at_k(ranked, "c", k);
      CHECK(hk >= prev_h);
      CHECK(nk >= prev_n);
      prev_h = hk;
      prev_n = nk;
    }
  }
}

TEST_CASE("goal-type stratification") {
  std::vector<EvalRecord> recs;
  for (int i = 0; i < 4; ++i) recs.push_back({{"X"}, {"X"}, {"t"}, {"t"}, "a b", "a b", ""});
  auto rows = stratify_by_goal_type(recs);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].share == 1.0);
  recs.push_back({{"X", "Y"}, {"Y"}, {}, {}, "c", "d", ""});
  rows = stratify_by_goal_type(recs, std::vector<std::string>{"Y", "X"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].goal_type == "Y");
  CHECK(rows[0].count == 1);
  CHECK(rows[1].count == 5);
  CHECK(rows[1].share == 1.0);
}

TEST_CASE("paired bootstrap") {
  std::vector<double> a(50, 1.0), b(50, 0.0);
  auto r = paired_bootstrap(a, b, 200, 5);
  CHECK(r.mean_diff == 1.0);
  CHECK(r.p_value == 0.0);
  auto r2 = paired_bootstrap(b, a, 200, 5);
  CHECK(r2.p_value == 1.0);
  auto r3 = paired_bootstrap(a, b, 200, 5);
  CHECK(r3.p_value == r.p_value);
  CHECK_THROWS_AS(paired_bootstrap(a, std::vector<double>{}, 10, 1), Error);
}

TEST_CASE("report formatting") {
  auto t = format_table({"name", "value"}, {{"bleu1", fmt(0.5)}, {"x", fmt(1, 2)}});
  CHECK(t == "name    value\n-------------\nbleu1  0.5000\nx        1.00\n");
}
