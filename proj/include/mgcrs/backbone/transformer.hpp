// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Pre-LN encoder-decoder transformer over packed sequences.
//
//   encoder: x = E[src] + Pe[pos];  x += Attn(LN(x));  x += FFN(LN(x));  LN
//   decoder: y = E[in]  + Pd[pos];  y += CausalAttn(LN(y));
//            y += CrossAttn(LN(y), enc);  y += FFN(LN(y));  LN;  logits = yW+b
//
// Token embeddings are shared by encoder and decoder; the output projection
// is a separate matrix. Decoder input is [sos] y_1..y_n, decoder target is
// y_1..y_n [eos]. All parameters live in one flat buffer so optimizers,
// checkpoints and digests operate on a single array.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mgcrs/backbone/ops.hpp"
#include "mgcrs/common.hpp"

namespace mgcrs::nn {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int ffn = 256;
  double dropout = 0.0;
  int max_positions = 512;
  double init_std = 0.02;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 1) throw Error("vocab_size must be positive");
    if (d_model < 1 || heads < 1 || d_model % heads != 0)
      throw Error("d_model must be a positive multiple of heads");
    if (encoder_layers < 0 || decoder_layers < 0 || ffn < 1)
      throw Error("invalid layer sizes");
    if (dropout < 0 || dropout >= 1) throw Error("dropout must be in [0, 1)");
    if (max_positions < 1) throw Error("max_positions must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  bool decay = false;
};

/// One training pair as token ids (no [sos]/[eos]).
struct IdPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

template <class T>
class Seq2Seq {
 public:
  using M = Mat<T>;

  Seq2Seq() = default;
  explicit Seq2Seq(const ModelConfig& cfg, int sos_id, int eos_id)
      : cfg_(cfg), sos_(sos_id), eos_(eos_id), drop_rng_(cfg.seed ^ 0xd5a3u) {
    cfg_.validate();
    build_layout();
    init_parameters();
  }

  const ModelConfig& config() const { return cfg_; }
  int sos_id() const { return sos_; }
  int eos_id() const { return eos_; }
  const std::vector<TensorInfo>& tensors() const { return infos_; }
  Buffer<T>& params() { return w_; }
  const Buffer<T>& params() const { return w_; }
  Buffer<T>& grads() { return g_; }
  std::size_t num_params() const { return w_.size(); }

  const TensorInfo& tensor(const std::string& name) const {
    for (const auto& t : infos_)
      if (t.name == name) return t;
    throw Error("no tensor named " + name);
  }

  /// Output distribution becomes uniform: zero projection and bias.
  void zero_output_head() {
    for (int id : {out_w_, out_b_}) {
      auto& t = infos_[static_cast<std::size_t>(id)];
      std::fill(w_.begin() + static_cast<long>(t.offset),
                w_.begin() + static_cast<long>(t.offset + t.rows * t.cols), T(0));
    }
  }

  void zero_grad() { std::fill(g_.begin(), g_.end(), T(0)); }

  /// Mean per-token NLL over all targets in the batch (targets + [eos]).
  /// With `accumulate`, adds d(loss)/d(params) into grads().
  double loss(const std::vector<IdPair>& batch, bool accumulate,
              bool train_mode = false) {
    double total = 0;
    std::size_t ntok = 0;
    for (const auto& p : batch) ntok += p.tgt.size() + 1;
    if (ntok == 0) throw Error("empty batch");
    Forward f;
    run_forward(batch, f, train_mode && cfg_.dropout > 0);
    // logits -> NLL and d logits
    M& logits = f.logits;
    const T inv = T(1) / static_cast<T>(ntok);
    std::size_t row = 0;
    for (const auto& p : batch) {
      for (std::size_t k = 0; k <= p.tgt.size(); ++k, ++row) {
        int y = k < p.tgt.size() ? p.tgt[k] : eos_;
        auto r = logits.row(static_cast<Eigen::Index>(row));
        T m = r.maxCoeff();
        r = (r.array() - m).exp();
        T z = r.sum();
        total += -(std::log(static_cast<double>(r(y))) - std::log(static_cast<double>(z)));
        if (accumulate) {
          r *= inv / z;
          r(y) -= inv;
        }
      }
    }
    if (accumulate) run_backward(batch, f);
    return total / static_cast<double>(ntok);
  }

  /// Per-token log-probabilities of tgt followed by [eos].
  std::vector<double> score(const std::vector<int>& src,
                            const std::vector<int>& tgt) {
    std::vector<IdPair> batch{{src, tgt}};
    Forward f;
    run_forward(batch, f, false);
    std::vector<double> out;
    for (std::size_t k = 0; k <= tgt.size(); ++k) {
      auto lp = log_softmax(f.logits.row(static_cast<Eigen::Index>(k)));
      int y = k < tgt.size() ? tgt[k] : eos_;
      out.push_back(lp[static_cast<std::size_t>(y)]);
    }
    return out;
  }

  /// Encoder states for one source sequence (inference path).
  M encode(const std::vector<int>& src) const {
    check_length(src.size(), "source");
    Segments seg;
    seg.push(static_cast<int>(src.size()));
    M x = embed(src, pos_enc_, nullptr);
    for (int l = 0; l < cfg_.encoder_layers; ++l) x = enc_layer_infer(l, x, seg);
    return layer_norm<T>(x, crow(enc_ln_g_), crow(enc_ln_b_), nullptr);
  }

  /// Log-probabilities of the next token after decoder input `prefix`
  /// (which starts with [sos]).
  std::vector<double> next_log_probs(const M& enc,
                                     const std::vector<int>& prefix) const {
    check_length(prefix.size(), "target");
    Segments qs, ks;
    qs.push(static_cast<int>(prefix.size()));
    ks.push(static_cast<int>(enc.rows()));
    M y = embed(prefix, pos_dec_, nullptr);
    for (int l = 0; l < cfg_.decoder_layers; ++l) y = dec_layer_infer(l, y, enc, qs, ks);
    M last = y.bottomRows(1);
    last = layer_norm<T>(last, crow(dec_ln_g_), crow(dec_ln_b_), nullptr);
    M logits = linear<T>(last, cmat(out_w_), crow(out_b_));
    return log_softmax(logits.row(0));
  }

  struct Hypothesis {
    std::vector<int> ids;  // without [eos]
    double log_prob = 0;
    bool finished = false;
  };

  /// Greedy decoding; ties go to the lowest token id.
  Hypothesis greedy(const std::vector<int>& src, std::size_t max_len) const {
    M enc = encode(src);
    Hypothesis h;
    std::vector<int> prefix{sos_};
    for (std::size_t step = 0; step < max_len; ++step) {
      auto lp = next_log_probs(enc, prefix);
      int best = 0;
      for (int j = 1; j < static_cast<int>(lp.size()); ++j)
        if (lp[static_cast<std::size_t>(j)] > lp[static_cast<std::size_t>(best)]) best = j;
      h.log_prob += lp[static_cast<std::size_t>(best)];
      if (best == eos_) {
        h.finished = true;
        break;
      }
      h.ids.push_back(best);
      prefix.push_back(best);
    }
    return h;
  }

  /// Beam search on cumulative log-probability, no length normalization.
  /// Candidate ties break by (beam rank, token id), so width 1 is greedy.
  Hypothesis beam(const std::vector<int>& src, std::size_t width,
                  std::size_t max_len) const {
    if (width < 1) throw Error("beam width must be >= 1");
    M enc = encode(src);
    std::vector<Hypothesis> alive{Hypothesis{}};
    std::vector<Hypothesis> done;
    struct Cand {
      double score;
      std::size_t beam;
      int tok;
    };
    for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
      std::vector<Cand> cands;
      for (std::size_t b = 0; b < alive.size(); ++b) {
        std::vector<int> prefix{sos_};
        prefix.insert(prefix.end(), alive[b].ids.begin(), alive[b].ids.end());
        auto lp = next_log_probs(enc, prefix);
        // top `width` tokens of this beam suffice
        std::vector<int> order(lp.size());
        for (std::size_t j = 0; j < lp.size(); ++j) order[j] = static_cast<int>(j);
        std::size_t k = std::min(width, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                          [&](int a, int c) {
                            auto la = lp[static_cast<std::size_t>(a)];
                            auto lc = lp[static_cast<std::size_t>(c)];
                            return la > lc || (la == lc && a < c);
                          });
        for (std::size_t j = 0; j < k; ++j)
          cands.push_back({alive[b].log_prob + lp[static_cast<std::size_t>(order[j])], b,
                           order[j]});
      }
      std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& c) {
        if (a.score != c.score) return a.score > c.score;
        if (a.beam != c.beam) return a.beam < c.beam;
        return a.tok < c.tok;
      });
      std::vector<Hypothesis> next;
      std::size_t taken = 0;  // finished hypotheses also use a slot
      for (const auto& c : cands) {
        if (taken >= width) break;
        ++taken;
        Hypothesis h = alive[c.beam];
        h.log_prob = c.score;
        if (c.tok == eos_) {
          h.finished = true;
          done.push_back(std::move(h));
          continue;
        }
        h.ids.push_back(c.tok);
        next.push_back(std::move(h));
      }
      alive = std::move(next);
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& h : done) best_done = std::max(best_done, h.log_prob);
      double best_alive = -std::numeric_limits<double>::infinity();
      for (const auto& h : alive) best_alive = std::max(best_alive, h.log_prob);
      // log-probabilities only decrease, so nothing alive can overtake
      if (!done.empty() && best_done >= best_alive) break;
      if (done.size() >= width) break;
    }
    const std::vector<Hypothesis>& pool = done.empty() ? alive : done;
    const Hypothesis* best = &pool.front();
    for (const auto& h : pool)
      if (h.log_prob > best->log_prob) best = &h;
    return *best;
  }

 private:
  // -------------------------------------------------------------------------
  // Layout

  struct AttnIds {
    int wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct EncIds {
    int ln1_g, ln1_b;
    AttnIds attn;
    int ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  struct DecIds {
    int ln1_g, ln1_b;
    AttnIds self;
    int ln2_g, ln2_b;
    AttnIds cross;
    int ln3_g, ln3_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  int add(const std::string& name, int rows, int cols, bool decay) {
    // every tensor starts on a 64-byte boundary so vectorized reductions
    // peel the same way regardless of where the heap put the buffer
    constexpr std::size_t align = 64 / sizeof(T);
    total_ = (total_ + align - 1) / align * align;
    TensorInfo t{name, rows, cols, total_, decay};
    total_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    infos_.push_back(t);
    return static_cast<int>(infos_.size() - 1);
  }

  AttnIds add_attn(const std::string& p) {
    const int d = cfg_.d_model;
    AttnIds a{};
    a.wq = add(p + ".wq", d, d, true);
    a.bq = add(p + ".bq", 1, d, false);
    a.wk = add(p + ".wk", d, d, true);
    a.bk = add(p + ".bk", 1, d, false);
    a.wv = add(p + ".wv", d, d, true);
    a.bv = add(p + ".bv", 1, d, false);
    a.wo = add(p + ".wo", d, d, true);
    a.bo = add(p + ".bo", 1, d, false);
    return a;
  }

  void build_layout() {
    const int d = cfg_.d_model, V = cfg_.vocab_size, P = cfg_.max_positions;
    embed_ = add("embed", V, d, true);
    pos_enc_ = add("pos_enc", P, d, true);
    pos_dec_ = add("pos_dec", P, d, true);
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
      auto p = "enc" + std::to_string(l);
      EncIds e{};
      e.ln1_g = add(p + ".ln1.g", 1, d, false);
      e.ln1_b = add(p + ".ln1.b", 1, d, false);
      e.attn = add_attn(p + ".attn");
      e.ln2_g = add(p + ".ln2.g", 1, d, false);
      e.ln2_b = add(p + ".ln2.b", 1, d, false);
      e.ff1_w = add(p + ".ff1.w", d, cfg_.ffn, true);
      e.ff1_b = add(p + ".ff1.b", 1, cfg_.ffn, false);
      e.ff2_w = add(p + ".ff2.w", cfg_.ffn, d, true);
      e.ff2_b = add(p + ".ff2.b", 1, d, false);
      enc_.push_back(e);
    }
    enc_ln_g_ = add("enc.ln.g", 1, d, false);
    enc_ln_b_ = add("enc.ln.b", 1, d, false);
    for (int l = 0; l < cfg_.decoder_layers; ++l) {
      auto p = "dec" + std::to_string(l);
      DecIds e{};
      e.ln1_g = add(p + ".ln1.g", 1, d, false);
      e.ln1_b = add(p + ".ln1.b", 1, d, false);
      e.self = add_attn(p + ".self");
      e.ln2_g = add(p + ".ln2.g", 1, d, false);
      e.ln2_b = add(p + ".ln2.b", 1, d, false);
      e.cross = add_attn(p + ".cross");
      e.ln3_g = add(p + ".ln3.g", 1, d, false);
      e.ln3_b = add(p + ".ln3.b", 1, d, false);
      e.ff1_w = add(p + ".ff1.w", d, cfg_.ffn, true);
      e.ff1_b = add(p + ".ff1.b", 1, cfg_.ffn, false);
      e.ff2_w = add(p + ".ff2.w", cfg_.ffn, d, true);
      e.ff2_b = add(p + ".ff2.b", 1, d, false);
      dec_.push_back(e);
    }
    dec_ln_g_ = add("dec.ln.g", 1, d, false);
    dec_ln_b_ = add("dec.ln.b", 1, d, false);
    out_w_ = add("out.w", d, V, true);
    out_b_ = add("out.b", 1, V, false);
    w_.assign(total_, T(0));
    g_.assign(total_, T(0));
  }

  void init_parameters() {
    Rng rng(cfg_.seed);
    for (const auto& t : infos_) {
      T* p = w_.data() + t.offset;
      const std::size_t n = static_cast<std::size_t>(t.rows) * static_cast<std::size_t>(t.cols);
      bool gain = t.name.ends_with(".g");
      bool bias = t.rows == 1 && !gain;
      for (std::size_t i = 0; i < n; ++i)
        p[i] = gain ? T(1) : bias ? T(0) : static_cast<T>(rng.normal() * cfg_.init_std);
    }
  }

  CMapMat<T> cmat(int id) const {
    const auto& t = infos_[static_cast<std::size_t>(id)];
    return CMapMat<T>(w_.data() + t.offset, t.rows, t.cols);
  }
  CMapRow<T> crow(int id) const {
    const auto& t = infos_[static_cast<std::size_t>(id)];
    return CMapRow<T>(w_.data() + t.offset, t.cols);
  }
  MapMat<T> gmat(int id) {
    const auto& t = infos_[static_cast<std::size_t>(id)];
    return MapMat<T>(g_.data() + t.offset, t.rows, t.cols);
  }
  MapRow<T> grow(int id) {
    const auto& t = infos_[static_cast<std::size_t>(id)];
    return MapRow<T>(g_.data() + t.offset, t.cols);
  }

  void check_length(std::size_t n, const char* what) const {
    if (n > static_cast<std::size_t>(cfg_.max_positions))
      throw Error(std::string(what) + " length " + std::to_string(n) +
                  " exceeds max_positions " + std::to_string(cfg_.max_positions));
  }

  // -------------------------------------------------------------------------
  // Shared pieces

  /// Rows E[ids[i]] + P[i], positions restarting per segment.
  M embed(const std::vector<int>& ids, int pos_id, const Segments* seg) const {
    const int d = cfg_.d_model;
    M x(static_cast<Eigen::Index>(ids.size()), d);
    auto E = cmat(embed_);
    auto P = cmat(pos_id);
    std::size_t row = 0;
    auto fill = [&](int off, int len) {
      for (int i = 0; i < len; ++i, ++row) {
        int tokid = ids[static_cast<std::size_t>(off + i)];
        if (tokid < 0 || tokid >= cfg_.vocab_size) throw Error("token id out of range");
        x.row(static_cast<Eigen::Index>(row)) = E.row(tokid) + P.row(i);
      }
    };
    if (seg)
      for (std::size_t s = 0; s < seg->size(); ++s) fill(seg->offset[s], seg->length[s]);
    else
      fill(0, static_cast<int>(ids.size()));
    return x;
  }

  struct AttnCache {
    M xq, xkv, q, k, v, o;
    std::vector<M> probs;  // per (segment, head)
  };

  /// Multi-head attention. Query segment s attends to key segment s.
  M attention(const AttnIds& a, const M& xq, const M& xkv, const Segments& qs,
              const Segments& ks, bool causal, AttnCache* cache) const {
    const int H = cfg_.heads, dh = cfg_.d_model / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    M q = linear<T>(xq, cmat(a.wq), crow(a.bq));
    M k = linear<T>(xkv, cmat(a.wk), crow(a.bk));
    M v = linear<T>(xkv, cmat(a.wv), crow(a.bv));
    M o(xq.rows(), cfg_.d_model);
    if (cache) cache->probs.clear();
    for (std::size_t s = 0; s < qs.size(); ++s) {
      const int qo = qs.offset[s], ql = qs.length[s];
      const int ko = ks.offset[s], kl = ks.length[s];
      for (int h = 0; h < H; ++h) {
        M sc;
        sc.noalias() = q.block(qo, h * dh, ql, dh) * k.block(ko, h * dh, kl, dh).transpose();
        sc *= scale;
        if (causal)
          for (int i = 0; i < ql; ++i)
            for (int j = i + 1; j < kl; ++j) sc(i, j) = -std::numeric_limits<T>::infinity();
        softmax_rows_inplace(sc);
        o.block(qo, h * dh, ql, dh).noalias() = sc * v.block(ko, h * dh, kl, dh);
        if (cache) cache->probs.push_back(std::move(sc));
      }
    }
    M out = linear<T>(o, cmat(a.wo), crow(a.bo));
    if (cache) {
      cache->xq = xq;
      cache->xkv = xkv;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->o = std::move(o);
    }
    return out;
  }

  /// Returns (dxq, dxkv); for self-attention the caller adds both.
  std::pair<M, M> attention_backward(const AttnIds& a, const M& dout,
                                     const AttnCache& c, const Segments& qs,
                                     const Segments& ks) {
    const int H = cfg_.heads, dh = cfg_.d_model / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    M d_o = linear_backward<T>(dout, c.o, cmat(a.wo), gmat(a.wo), grow(a.bo));
    M dq = M::Zero(c.q.rows(), c.q.cols());
    M dk = M::Zero(c.k.rows(), c.k.cols());
    M dv = M::Zero(c.v.rows(), c.v.cols());
    std::size_t idx = 0;
    for (std::size_t s = 0; s < qs.size(); ++s) {
      const int qo = qs.offset[s], ql = qs.length[s];
      const int ko = ks.offset[s], kl = ks.length[s];
      for (int h = 0; h < H; ++h, ++idx) {
        const M& p = c.probs[idx];
        auto dob = d_o.block(qo, h * dh, ql, dh);
        M dp;
        dp.noalias() = dob * c.v.block(ko, h * dh, kl, dh).transpose();
        dv.block(ko, h * dh, kl, dh).noalias() += p.transpose() * dob;
        // softmax backward: ds = p * (dp - rowsum(dp * p))
        M ds = p.cwiseProduct(dp);
        Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
        ds -= p.cwiseProduct(rs.replicate(1, kl));
        ds *= scale;
        dq.block(qo, h * dh, ql, dh).noalias() += ds * c.k.block(ko, h * dh, kl, dh);
        dk.block(ko, h * dh, kl, dh).noalias() += ds.transpose() * c.q.block(qo, h * dh, ql, dh);
      }
    }
    M dxq = linear_backward<T>(dq, c.xq, cmat(a.wq), gmat(a.wq), grow(a.bq));
    M dxkv = linear_backward<T>(dk, c.xkv, cmat(a.wk), gmat(a.wk), grow(a.bk));
    dxkv += linear_backward<T>(dv, c.xkv, cmat(a.wv), gmat(a.wv), grow(a.bv));
    return {std::move(dxq), std::move(dxkv)};
  }

  // inverted dropout; the mask holds 0 or 1/(1-p)
  void dropout(M& x, M* mask) {
    if (!mask) return;
    const double p = cfg_.dropout;
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    mask->resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      mask->data()[i] = drop_rng_.uniform() < p ? T(0) : keep;
    x = x.cwiseProduct(*mask);
  }

  struct FfnCache {
    LayerNormCache<T> ln;
    M in, pre, act;
    M drop;
  };

  M ffn(int ln_g, int ln_b, int w1, int b1, int w2, int b2, const M& x,
        FfnCache* c, bool drop) {
    LayerNormCache<T>* lnc = c ? &c->ln : nullptr;
    M a = layer_norm<T>(x, crow(ln_g), crow(ln_b), lnc);
    M pre = linear<T>(a, cmat(w1), crow(b1));
    M act = gelu(pre);
    M out = linear<T>(act, cmat(w2), crow(b2));
    if (drop) dropout(out, &c->drop);
    if (c) {
      c->in = std::move(a);
      c->pre = std::move(pre);
      c->act = std::move(act);
    }
    return out;
  }

  M ffn_backward(int ln_g, int ln_b, int w1, int b1, int w2, int b2,
                 const M& dout, const FfnCache& c, bool drop) {
    M d = drop ? M(dout.cwiseProduct(c.drop)) : dout;
    M dact = linear_backward<T>(d, c.act, cmat(w2), gmat(w2), grow(b2));
    M dpre = gelu_backward<T>(dact, c.pre);
    M da = linear_backward<T>(dpre, c.in, cmat(w1), gmat(w1), grow(b1));
    return layer_norm_backward<T>(da, c.ln, crow(ln_g), grow(ln_g), grow(ln_b));
  }

  // -------------------------------------------------------------------------
  // Inference layers (no caches)

  M enc_layer_infer(int l, const M& x, const Segments& seg) const {
    const auto& e = enc_[static_cast<std::size_t>(l)];
    M a = layer_norm<T>(x, crow(e.ln1_g), crow(e.ln1_b), nullptr);
    M h = x + attention(e.attn, a, a, seg, seg, false, nullptr);
    M b = layer_norm<T>(h, crow(e.ln2_g), crow(e.ln2_b), nullptr);
    M f = linear<T>(gelu(linear<T>(b, cmat(e.ff1_w), crow(e.ff1_b))), cmat(e.ff2_w),
                    crow(e.ff2_b));
    return h + f;
  }

  M dec_layer_infer(int l, const M& y, const M& enc, const Segments& qs,
                    const Segments& ks) const {
    const auto& e = dec_[static_cast<std::size_t>(l)];
    M a = layer_norm<T>(y, crow(e.ln1_g), crow(e.ln1_b), nullptr);
    M h = y + attention(e.self, a, a, qs, qs, true, nullptr);
    M b = layer_norm<T>(h, crow(e.ln2_g), crow(e.ln2_b), nullptr);
    M h2 = h + attention(e.cross, b, enc, qs, ks, false, nullptr);
    M c = layer_norm<T>(h2, crow(e.ln3_g), crow(e.ln3_b), nullptr);
    M f = linear<T>(gelu(linear<T>(c, cmat(e.ff1_w), crow(e.ff1_b))), cmat(e.ff2_w),
                    crow(e.ff2_b));
    return h2 + f;
  }

  // -------------------------------------------------------------------------
  // Training forward/backward with caches

  struct EncLayerCache {
    LayerNormCache<T> ln1;
    AttnCache attn;
    M attn_drop;
    FfnCache ffn;
  };
  struct DecLayerCache {
    LayerNormCache<T> ln1, ln2;
    AttnCache self, cross;
    M self_drop, cross_drop;
    FfnCache ffn;
  };
  struct Forward {
    Segments src_seg, dec_seg;
    std::vector<int> src_ids, dec_ids;
    M emb_drop_enc, emb_drop_dec;
    std::vector<EncLayerCache> enc;
    std::vector<DecLayerCache> dec;
    LayerNormCache<T> enc_ln, dec_ln;
    M enc_out, dec_final;
    M logits;
    bool drop = false;
  };

  void run_forward(const std::vector<IdPair>& batch, Forward& f, bool drop) {
    f.drop = drop;
    for (const auto& p : batch) {
      check_length(p.src.size(), "source");
      check_length(p.tgt.size() + 1, "target");
      if (p.src.empty()) throw Error("empty source sequence");
      f.src_seg.push(static_cast<int>(p.src.size()));
      f.src_ids.insert(f.src_ids.end(), p.src.begin(), p.src.end());
      f.dec_seg.push(static_cast<int>(p.tgt.size() + 1));
      f.dec_ids.push_back(sos_);
      f.dec_ids.insert(f.dec_ids.end(), p.tgt.begin(), p.tgt.end());
    }
    M x = embed(f.src_ids, pos_enc_, &f.src_seg);
    if (drop) dropout(x, &f.emb_drop_enc);
    f.enc.resize(static_cast<std::size_t>(cfg_.encoder_layers));
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
      auto& c = f.enc[static_cast<std::size_t>(l)];
      const auto& e = enc_[static_cast<std::size_t>(l)];
      M a = layer_norm<T>(x, crow(e.ln1_g), crow(e.ln1_b), &c.ln1);
      M at = attention(e.attn, a, a, f.src_seg, f.src_seg, false, &c.attn);
      if (drop) dropout(at, &c.attn_drop);
      x += at;
      x += ffn(e.ln2_g, e.ln2_b, e.ff1_w, e.ff1_b, e.ff2_w, e.ff2_b, x, &c.ffn, drop);
    }
    f.enc_out = layer_norm<T>(x, crow(enc_ln_g_), crow(enc_ln_b_), &f.enc_ln);

    M y = embed(f.dec_ids, pos_dec_, &f.dec_seg);
    if (drop) dropout(y, &f.emb_drop_dec);
    f.dec.resize(static_cast<std::size_t>(cfg_.decoder_layers));
    for (int l = 0; l < cfg_.decoder_layers; ++l) {
      auto& c = f.dec[static_cast<std::size_t>(l)];
      const auto& e = dec_[static_cast<std::size_t>(l)];
      M a = layer_norm<T>(y, crow(e.ln1_g), crow(e.ln1_b), &c.ln1);
      M sa = attention(e.self, a, a, f.dec_seg, f.dec_seg, true, &c.self);
      if (drop) dropout(sa, &c.self_drop);
      y += sa;
      M b = layer_norm<T>(y, crow(e.ln2_g), crow(e.ln2_b), &c.ln2);
      M ca = attention(e.cross, b, f.enc_out, f.dec_seg, f.src_seg, false, &c.cross);
      if (drop) dropout(ca, &c.cross_drop);
      y += ca;
      y += ffn(e.ln3_g, e.ln3_b, e.ff1_w, e.ff1_b, e.ff2_w, e.ff2_b, y, &c.ffn, drop);
    }
    f.dec_final = layer_norm<T>(y, crow(dec_ln_g_), crow(dec_ln_b_), &f.dec_ln);
    f.logits = linear<T>(f.dec_final, cmat(out_w_), crow(out_b_));
  }

  /// Expects f.logits to hold d(loss)/d(logits).
  void run_backward(const std::vector<IdPair>&, Forward& f) {
    const bool drop = f.drop;
    M dy = linear_backward<T>(f.logits, f.dec_final, cmat(out_w_), gmat(out_w_),
                              grow(out_b_));
    dy = layer_norm_backward<T>(dy, f.dec_ln, crow(dec_ln_g_), grow(dec_ln_g_),
                                grow(dec_ln_b_));
    M denc = M::Zero(f.enc_out.rows(), f.enc_out.cols());
    for (int l = cfg_.decoder_layers - 1; l >= 0; --l) {
      auto& c = f.dec[static_cast<std::size_t>(l)];
      const auto& e = dec_[static_cast<std::size_t>(l)];
      dy += ffn_backward(e.ln3_g, e.ln3_b, e.ff1_w, e.ff1_b, e.ff2_w, e.ff2_b, dy, c.ffn,
                         drop);
      M dca = drop ? M(dy.cwiseProduct(c.cross_drop)) : dy;
      auto [dq, dkv] = attention_backward(e.cross, dca, c.cross, f.dec_seg, f.src_seg);
      denc += dkv;
      dy += layer_norm_backward<T>(dq, c.ln2, crow(e.ln2_g), grow(e.ln2_g), grow(e.ln2_b));
      M dsa = drop ? M(dy.cwiseProduct(c.self_drop)) : dy;
      auto [dsq, dskv] = attention_backward(e.self, dsa, c.self, f.dec_seg, f.dec_seg);
      dsq += dskv;
      dy += layer_norm_backward<T>(dsq, c.ln1, crow(e.ln1_g), grow(e.ln1_g), grow(e.ln1_b));
    }
    if (drop) dy = dy.cwiseProduct(f.emb_drop_dec);
    scatter_embed(dy, f.dec_ids, f.dec_seg, pos_dec_);

    M dx = layer_norm_backward<T>(denc, f.enc_ln, crow(enc_ln_g_), grow(enc_ln_g_),
                                  grow(enc_ln_b_));
    for (int l = cfg_.encoder_layers - 1; l >= 0; --l) {
      auto& c = f.enc[static_cast<std::size_t>(l)];
      const auto& e = enc_[static_cast<std::size_t>(l)];
      dx += ffn_backward(e.ln2_g, e.ln2_b, e.ff1_w, e.ff1_b, e.ff2_w, e.ff2_b, dx, c.ffn,
                         drop);
      M dat = drop ? M(dx.cwiseProduct(c.attn_drop)) : dx;
      auto [dq, dkv] = attention_backward(e.attn, dat, c.attn, f.src_seg, f.src_seg);
      dq += dkv;
      dx += layer_norm_backward<T>(dq, c.ln1, crow(e.ln1_g), grow(e.ln1_g), grow(e.ln1_b));
    }
    if (drop) dx = dx.cwiseProduct(f.emb_drop_enc);
    scatter_embed(dx, f.src_ids, f.src_seg, pos_enc_);
  }

  void scatter_embed(const M& d, const std::vector<int>& ids, const Segments& seg,
                     int pos_id) {
    auto dE = gmat(embed_);
    auto dP = gmat(pos_id);
    std::size_t row = 0;
    for (std::size_t s = 0; s < seg.size(); ++s)
      for (int i = 0; i < seg.length[s]; ++i, ++row) {
        dE.row(ids[row]) += d.row(static_cast<Eigen::Index>(row));
        dP.row(i) += d.row(static_cast<Eigen::Index>(row));
      }
  }

  ModelConfig cfg_;
  int sos_ = 0, eos_ = 0;
  Rng drop_rng_{1};
  std::vector<TensorInfo> infos_;
  std::size_t total_ = 0;
  Buffer<T> w_, g_;
  int embed_ = 0, pos_enc_ = 0, pos_dec_ = 0;
  std::vector<EncIds> enc_;
  std::vector<DecIds> dec_;
  int enc_ln_g_ = 0, enc_ln_b_ = 0, dec_ln_g_ = 0, dec_ln_b_ = 0;
  int out_w_ = 0, out_b_ = 0;
};

}  // namespace mgcrs::nn
