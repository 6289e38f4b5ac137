// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation metrics and report formatting.
//
// Conventions:
//   word F1      multiset token overlap; both empty -> 1, one empty -> 0
//   BLEU-n       sentence BLEU, BP * geometric mean of p_1..p_n, averaged over
//                sentences; any zero precision makes the sentence score 0
//   Dist-n       unique n-grams / total n-grams over all hypotheses
//   goal macro   per-class set P/R/F1 over the goal inventory, classes with
//                no gold and no prediction excluded; out-of-inventory
//                predictions hit no class
//   goal micro   global TP/FP/FN over label sets (out-of-inventory = FP)
//   topic micro  per-instance set P/R/F1, empty gold & empty prediction = 1,
//                empty gold otherwise = 0; averaged over instances
//   Hit@1 (gen)  first generated label in gold, over instances with gold
//   NDCG/MRR@k   single relevant item

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mgcrs/common.hpp"

namespace mgcrs::metrics {

enum class TokenRule { whitespace, character };

inline std::string_view to_string(TokenRule r) {
  return r == TokenRule::whitespace ? "whitespace" : "character";
}

inline TokenRule parse_token_rule(std::string_view s) {
  if (s == "whitespace") return TokenRule::whitespace;
  if (s == "character") return TokenRule::character;
  throw Error("unknown token rule '" + std::string(s) + "'");
}

/// Metric tokens: whitespace words, or every non-space character (for
/// unsegmented scripts).
inline std::vector<std::string> tokenize(std::string_view text, TokenRule rule) {
  if (rule == TokenRule::whitespace) return split_whitespace(text);
  std::vector<std::string> out;
  for (auto& ch : utf8_chars(text))
    if (!std::all_of(ch.begin(), ch.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
      out.push_back(std::move(ch));
  return out;
}

struct PRF {
  double p = 0, r = 0, f1 = 0;
};

inline double harmonic(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

// ---------------------------------------------------------------------------
// Generation

inline PRF word_f1(std::string_view hyp, std::string_view ref,
                   TokenRule rule = TokenRule::whitespace) {
  auto h = tokenize(hyp, rule), r = tokenize(ref, rule);
  if (h.empty() && r.empty()) return {1, 1, 1};
  if (h.empty() || r.empty()) return {0, 0, 0};
  std::map<std::string, long> count;
  for (const auto& w : r) ++count[w];
  long overlap = 0;
  for (const auto& w : h)
    if (auto it = count.find(w); it != count.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  PRF s;
  s.p = static_cast<double>(overlap) / static_cast<double>(h.size());
  s.r = static_cast<double>(overlap) / static_cast<double>(r.size());
  s.f1 = harmonic(s.p, s.r);
  return s;
}

inline double mean_word_f1(std::span<const std::string> hyps,
                           std::span<const std::string> refs,
                           TokenRule rule = TokenRule::whitespace) {
  if (hyps.size() != refs.size()) throw Error("hypothesis/reference count mismatch");
  if (hyps.empty()) return 0;
  double s = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) s += word_f1(hyps[i], refs[i], rule).f1;
  return s / static_cast<double>(hyps.size());
}

inline std::map<std::vector<std::string>, long> ngram_counts(
    const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, long> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + static_cast<long>(i),
                                   toks.begin() + static_cast<long>(i + n))];
  return out;
}

inline double sentence_bleu(const std::vector<std::string>& h,
                            const std::vector<std::string>& r, std::size_t n) {
  if (h.empty()) return 0;
  double log_sum = 0;
  for (std::size_t k = 1; k <= n; ++k) {
    if (h.size() < k) return 0;
    auto hc = ngram_counts(h, k), rc = ngram_counts(r, k);
    long clipped = 0;
    for (const auto& [g, c] : hc)
      if (auto it = rc.find(g); it != rc.end()) clipped += std::min(c, it->second);
    if (clipped == 0) return 0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(h.size() + 1 - k));
  }
  const double c = static_cast<double>(h.size()), rl = static_cast<double>(r.size());
  const double bp = c > rl ? 1.0 : std::exp(1.0 - rl / c);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

inline double bleu(std::span<const std::string> hyps, std::span<const std::string> refs,
                   std::size_t n, TokenRule rule = TokenRule::whitespace) {
  if (hyps.size() != refs.size()) throw Error("hypothesis/reference count mismatch");
  if (n < 1) throw Error("BLEU order must be >= 1");
  if (hyps.empty()) return 0;
  double s = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i)
    s += sentence_bleu(tokenize(hyps[i], rule), tokenize(refs[i], rule), n);
  return s / static_cast<double>(hyps.size());
}

inline double distinct_n(std::span<const std::string> hyps, std::size_t n = 2,
                         TokenRule rule = TokenRule::whitespace) {
  std::map<std::vector<std::string>, long> all;
  long total = 0;
  for (const auto& h : hyps)
    for (const auto& [g, c] : ngram_counts(tokenize(h, rule), n)) {
      all[g] += c;
      total += c;
    }
  return total == 0 ? 0.0 : static_cast<double>(all.size()) / static_cast<double>(total);
}

/// exp(mean NLL) over per-token log-probabilities (end token included).
inline double perplexity_from_scores(std::span<const std::vector<double>> scores) {
  double nll = 0;
  std::size_t n = 0;
  for (const auto& s : scores) {
    for (double x : s) nll -= x;
    n += s.size();
  }
  if (n == 0) throw Error("perplexity over zero tokens");
  return std::exp(nll / static_cast<double>(n));
}

/// `Model` provides score_target(input, target) -> per-token log-probs.
template <class Model>
double perplexity(Model& m, std::span<const std::pair<std::string, std::string>> pairs) {
  std::vector<std::vector<double>> s;
  s.reserve(pairs.size());
  for (const auto& [in, out] : pairs) s.push_back(m.score_target(in, out));
  return perplexity_from_scores(s);
}

struct GenerationScore {
  double word_f1 = 0, bleu1 = 0, bleu2 = 0, dist2 = 0;
  std::optional<double> ppl;
  std::size_t count = 0;
};

inline GenerationScore generation_scores(std::span<const std::string> hyps,
                                         std::span<const std::string> refs,
                                         TokenRule rule = TokenRule::whitespace) {
  GenerationScore g;
  g.count = hyps.size();
  g.word_f1 = mean_word_f1(hyps, refs, rule);
  g.bleu1 = bleu(hyps, refs, 1, rule);
  g.bleu2 = bleu(hyps, refs, 2, rule);
  g.dist2 = distinct_n(hyps, 2, rule);
  return g;
}

// ---------------------------------------------------------------------------
// Labels

using Labels = std::vector<std::string>;

struct LabelScore {
  PRF score;
  std::size_t count = 0;
};

inline LabelScore goal_macro_prf(std::span<const Labels> preds, std::span<const Labels> golds,
                                 std::span<const std::string> goal_set) {
  if (preds.size() != golds.size()) throw Error("prediction/gold count mismatch");
  std::map<std::string, std::array<long, 3>> tab;  // tp, fp, fn
  std::unordered_set<std::string> inv(goal_set.begin(), goal_set.end());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::set<std::string> p, g(golds[i].begin(), golds[i].end());
    for (const auto& x : preds[i])
      if (inv.count(x)) p.insert(x);
    for (const auto& c : p) ++tab[c][g.count(c) ? 0 : 1];
    for (const auto& c : g)
      if (!p.count(c)) ++tab[c][2];
  }
  LabelScore out;
  out.count = preds.size();
  std::size_t classes = 0;
  for (const auto& c : goal_set) {
    auto it = tab.find(c);
    if (it == tab.end()) continue;
    auto [tp, fp, fn] = it->second;
    double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    out.score.p += p;
    out.score.r += r;
    out.score.f1 += harmonic(p, r);
    ++classes;
  }
  if (classes > 0) {
    out.score.p /= static_cast<double>(classes);
    out.score.r /= static_cast<double>(classes);
    out.score.f1 /= static_cast<double>(classes);
  }
  return out;
}

inline LabelScore goal_micro_prf(std::span<const Labels> preds, std::span<const Labels> golds) {
  if (preds.size() != golds.size()) throw Error("prediction/gold count mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::set<std::string> p(preds[i].begin(), preds[i].end()), g(golds[i].begin(), golds[i].end());
    for (const auto& x : p) (g.count(x) ? tp : fp)++;
    for (const auto& x : g)
      if (!p.count(x)) ++fn;
  }
  LabelScore out;
  out.count = preds.size();
  out.score.p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  out.score.r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  out.score.f1 = harmonic(out.score.p, out.score.r);
  return out;
}

inline PRF topic_instance_prf(const Labels& pred, const Labels& gold) {
  std::set<std::string> p(pred.begin(), pred.end()), g(gold.begin(), gold.end());
  if (g.empty()) return p.empty() ? PRF{1, 1, 1} : PRF{0, 0, 0};
  if (p.empty()) return {0, 0, 0};
  long inter = 0;
  for (const auto& x : p) inter += g.count(x) ? 1 : 0;
  PRF s;
  s.p = static_cast<double>(inter) / static_cast<double>(p.size());
  s.r = static_cast<double>(inter) / static_cast<double>(g.size());
  s.f1 = harmonic(s.p, s.r);
  return s;
}

inline LabelScore topic_micro_prf(std::span<const Labels> preds, std::span<const Labels> golds) {
  if (preds.size() != golds.size()) throw Error("prediction/gold count mismatch");
  LabelScore out;
  out.count = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto s = topic_instance_prf(preds[i], golds[i]);
    out.score.p += s.p;
    out.score.r += s.r;
    out.score.f1 += s.f1;
  }
  if (!preds.empty()) {
    const double n = static_cast<double>(preds.size());
    out.score.p /= n;
    out.score.r /= n;
    out.score.f1 /= n;
  }
  return out;
}

/// Hit@1 for generated label lists; instances with empty gold are skipped.
inline double hit_at_1_generated(std::span<const Labels> preds, std::span<const Labels> golds) {
  if (preds.size() != golds.size()) throw Error("prediction/gold count mismatch");
  long hits = 0, n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (golds[i].empty()) continue;
    ++n;
    if (!preds[i].empty() &&
        std::find(golds[i].begin(), golds[i].end(), preds[i].front()) != golds[i].end())
      ++hits;
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

/// 1 when any gold id occurs in the first k ranked ids.
inline double hit_at_k(std::span<const std::string> ranked, std::span<const std::string> gold,
                       std::size_t k) {
  const std::size_t lim = std::min(k, ranked.size());
  for (std::size_t i = 0; i < lim; ++i)
    if (std::find(gold.begin(), gold.end(), ranked[i]) != gold.end()) return 1;
  return 0;
}

/// 1-based rank of `gold` in `ranked`, 0 when absent.
inline std::size_t rank_of(std::span<const std::string> ranked, std::string_view gold) {
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (ranked[i] == gold) return i + 1;
  return 0;
}

inline double ndcg_at_k(std::span<const std::string> ranked, std::string_view gold, std::size_t k) {
  auto r = rank_of(ranked, gold);
  return r == 0 || r > k ? 0.0 : 1.0 / std::log2(static_cast<double>(r) + 1.0);
}

inline double mrr_at_k(std::span<const std::string> ranked, std::string_view gold, std::size_t k) {
  auto r = rank_of(ranked, gold);
  return r == 0 || r > k ? 0.0 : 1.0 / static_cast<double>(r);
}

struct RankScore {
  std::map<std::size_t, double> ndcg, mrr, hit;
  std::size_t count = 0;
};

inline RankScore rank_scores(std::span<const std::vector<std::string>> ranked,
                             std::span<const std::string> gold,
                             std::vector<std::size_t> ks = {1, 10, 50}) {
  if (ranked.size() != gold.size()) throw Error("ranking/gold count mismatch");
  RankScore s;
  s.count = ranked.size();
  for (auto k : ks) s.ndcg[k] = s.mrr[k] = s.hit[k] = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i)
    for (auto k : ks) {
      s.ndcg[k] += ndcg_at_k(ranked[i], gold[i], k);
      s.mrr[k] += mrr_at_k(ranked[i], gold[i], k);
      s.hit[k] += hit_at_k(ranked[i], std::span<const std::string>(&gold[i], 1), k);
    }
  if (!ranked.empty())
    for (auto k : ks) {
      const double n = static_cast<double>(ranked.size());
      s.ndcg[k] /= n;
      s.mrr[k] /= n;
      s.hit[k] /= n;
    }
  return s;
}

// ---------------------------------------------------------------------------
// Goal-type stratification

struct EvalRecord {
  Labels gold_goals, pred_goals;
  Labels gold_topics, pred_topics;
  std::string hypothesis, reference;
  std::string domain;
};

struct StratumRow {
  std::string goal_type;
  std::size_t count = 0;
  double share = 0;
  double goal_f1 = 0;
  double topic_f1 = 0;
  GenerationScore generation;
};

/// A record contributes to every goal type in its gold goal list. Rows follow
/// `order` first, then first appearance.
inline std::vector<StratumRow> stratify_by_goal_type(std::span<const EvalRecord> records,
                                                     std::span<const std::string> order = {},
                                                     TokenRule rule = TokenRule::whitespace) {
  std::vector<std::string> types(order.begin(), order.end());
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::set<std::string> seen;
    for (const auto& g : records[i].gold_goals) {
      if (!seen.insert(g).second) continue;
      if (std::find(types.begin(), types.end(), g) == types.end()) types.push_back(g);
      members[g].push_back(i);
    }
  }
  std::vector<StratumRow> rows;
  for (const auto& t : types) {
    auto it = members.find(t);
    if (it == members.end()) continue;
    std::vector<Labels> pg, gg, pt, gt;
    std::vector<std::string> hyp, ref;
    for (auto i : it->second) {
      pg.push_back(records[i].pred_goals);
      gg.push_back(records[i].gold_goals);
      pt.push_back(records[i].pred_topics);
      gt.push_back(records[i].gold_topics);
      hyp.push_back(records[i].hypothesis);
      ref.push_back(records[i].reference);
    }
    StratumRow r;
    r.goal_type = t;
    r.count = it->second.size();
    r.share = records.empty() ? 0.0 : static_cast<double>(r.count) / static_cast<double>(records.size());
    r.goal_f1 = goal_micro_prf(pg, gg).score.f1;
    r.topic_f1 = topic_micro_prf(pt, gt).score.f1;
    r.generation = generation_scores(hyp, ref, rule);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Paired bootstrap

struct BootstrapResult {
  double mean_diff = 0;  // mean(a) - mean(b)
  double p_value = 0;    // share of resamples with diff <= 0
  std::size_t resamples = 0;
};

inline BootstrapResult paired_bootstrap(std::span<const double> a, std::span<const double> b,
                                        std::size_t resamples = 1000, std::uint64_t seed = 1) {
  if (a.size() != b.size() || a.empty()) throw Error("paired bootstrap needs equal non-empty samples");
  BootstrapResult r;
  r.resamples = resamples;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) r.mean_diff += a[i] - b[i];
  r.mean_diff /= static_cast<double>(n);
  Rng rng(seed);
  std::size_t worse = 0;
  for (std::size_t s = 0; s < resamples; ++s) {
    double d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto j = rng.below(n);
      d += a[j] - b[j];
    }
    if (d <= 0) ++worse;
  }
  r.p_value = resamples ? static_cast<double>(worse) / static_cast<double>(resamples) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::ordered_json to_json(const GenerationScore& g) {
  nlohmann::ordered_json j;
  j["count"] = g.count;
  j["word_f1"] = g.word_f1;
  j["bleu1"] = g.bleu1;
  j["bleu2"] = g.bleu2;
  j["dist2"] = g.dist2;
  if (g.ppl) j["ppl"] = *g.ppl;
  return j;
}

inline nlohmann::ordered_json to_json(const LabelScore& s) {
  return {{"count", s.count}, {"p", s.score.p}, {"r", s.score.r}, {"f1", s.score.f1}};
}

inline nlohmann::ordered_json to_json(const RankScore& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  for (const auto& [k, v] : s.ndcg) j["ndcg@" + std::to_string(k)] = v;
  for (const auto& [k, v] : s.mrr) j["mrr@" + std::to_string(k)] = v;
  for (const auto& [k, v] : s.hit) j["hit@" + std::to_string(k)] = v;
  return j;
}

inline nlohmann::ordered_json to_json(const StratumRow& r) {
  nlohmann::ordered_json j;
  j["goal_type"] = r.goal_type;
  j["count"] = r.count;
  j["share"] = r.share;
  j["goal_f1"] = r.goal_f1;
  j["topic_f1"] = r.topic_f1;
  j["generation"] = to_json(r.generation);
  return j;
}

/// Fixed-width text table; numbers are formatted by the caller.
inline std::string format_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size(), 0);
  auto width = [](const std::string& s) { return utf8_chars(s).size(); };
  for (std::size_t c = 0; c < header.size(); ++c) w[c] = width(header[c]);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < w.size(); ++c) w[c] = std::max(w[c], width(r[c]));
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < w.size(); ++c) {
      const std::string cell = c < r.size() ? r[c] : "";
      if (c) os << "  ";
      if (c == 0) os << cell << std::string(w[c] - width(cell), ' ');
      else os << std::string(w[c] - width(cell), ' ') << cell;
    }
    os << "\n";
  };
  line(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  os << std::string(total + 2 * (w.size() - 1), '-') << "\n";
  for (const auto& r : rows) line(r);
  return os.str();
}

inline std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << x;
  return os.str();
}

}  // namespace mgcrs::metrics
