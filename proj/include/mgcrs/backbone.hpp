// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Text-level sequence-to-sequence contract over the reference transformer:
// training steps, decoding, target scoring, one-step item ranking and
// checkpoint directories.
//
// Checkpoint directory:
//   config.json   {"format", "name", "model", "sos_id", "eos_id",
//                  "vocab_digest", "params_digest", "tensors"}
//   vocab.json    vocabulary (see Vocabulary::to_json)
//   params.bin    float32 little-endian parameters in tensor order

#pragma once

#include <bit>
#include <memory>
#include <string>
#include <vector>

#include "mgcrs/backbone/optim.hpp"
#include "mgcrs/backbone/transformer.hpp"
#include "mgcrs/corpus.hpp"
#include "mgcrs/vocab.hpp"

namespace mgcrs {

using nn::IdPair;
using nn::ModelConfig;
using nn::OptimConfig;

struct DecodeConfig {
  enum class Mode { greedy, beam };
  Mode mode = Mode::greedy;
  std::size_t beam_width = 4;
  std::size_t max_length = 100;

  static DecodeConfig greedy(std::size_t max_len = 100) {
    return {Mode::greedy, 1, max_len};
  }
  static DecodeConfig beam(std::size_t width, std::size_t max_len = 100) {
    return {Mode::beam, width, max_len};
  }
  void validate() const {
    if (beam_width < 1) throw Error("beam width must be >= 1");
    if (max_length < 1) throw Error("max decode length must be >= 1");
  }
};

struct Generation {
  std::string text;
  std::vector<int> ids;
  double log_prob = 0;
};

struct RankedItem {
  std::string item_id;
  double prob = 0;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["heads"] = c.heads;
  j["ffn"] = c.ffn;
  j["dropout"] = c.dropout;
  j["max_positions"] = c.max_positions;
  j["init_std"] = c.init_std;
  j["seed"] = c.seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j,
                                          ModelConfig c = {}) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.dropout = j.value("dropout", c.dropout);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.init_std = j.value("init_std", c.init_std);
  c.seed = j.value("seed", c.seed);
  return c;
}

class Backbone {
 public:
  using Model = nn::Seq2Seq<float>;

  Backbone(std::shared_ptr<const Vocabulary> vocab, ModelConfig cfg,
           std::string name = "theta")
      : vocab_(std::move(vocab)), name_(std::move(name)) {
    cfg.vocab_size = static_cast<int>(vocab_->size());
    model_ = Model(cfg, vocab_->sos_id(), vocab_->eos_id());
  }

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  const ModelConfig& config() const { return model_.config(); }
  Model& model() { return model_; }
  const Model& model() const { return model_; }

  /// Deep copy under a new name (parameters are never shared).
  Backbone clone(std::string new_name) const {
    Backbone b = *this;
    b.name_ = std::move(new_name);
    return b;
  }

  std::string params_digest() const {
    Fnv64 h;
    h.update(model_.params().data(), model_.params().size() * sizeof(float));
    return h.hex();
  }

  IdPair encode_pair(const std::string& input, const std::string& target) const {
    return {vocab_->encode(input), vocab_->encode(target)};
  }

  /// Mean per-token NLL of the batch without updating anything.
  double eval_loss(const std::vector<IdPair>& batch) {
    return model_.loss(batch, false);
  }

  /// One optimizer step on the batch; returns the pre-step loss.
  double train_batch(const std::vector<IdPair>& batch, nn::AdamW<float>& opt) {
    model_.zero_grad();
    double l = model_.loss(batch, true, true);
    opt.step(model_);
    return l;
  }

  Generation generate(const std::string& input, const DecodeConfig& dc) const {
    return generate_ids(vocab_->encode(input), dc);
  }

  Generation generate_ids(const std::vector<int>& src, const DecodeConfig& dc) const {
    dc.validate();
    auto h = dc.mode == DecodeConfig::Mode::greedy
                 ? model_.greedy(src, dc.max_length)
                 : model_.beam(src, dc.beam_width, dc.max_length);
    return {vocab_->decode(h.ids), h.ids, h.log_prob};
  }

  /// Per-token log-probabilities of target followed by [eos].
  std::vector<double> score_target(const std::string& input,
                                   const std::string& target) {
    return model_.score(vocab_->encode(input), vocab_->encode(target));
  }

  /// One decoder step from [sos]; the distribution is restricted to item
  /// tokens and renormalized. Sorted by probability, ties in catalog order.
  std::vector<RankedItem> rank_items(const std::string& input,
                                     std::span<const CatalogItem> catalog) const {
    if (catalog.empty()) throw Error("rank_items needs a non-empty catalog");
    auto enc = model_.encode(vocab_->encode(input));
    auto lp = model_.next_log_probs(enc, {vocab_->sos_id()});
    std::vector<double> logit(catalog.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      auto id = vocab_->item_token_id(catalog[i].id);
      if (!id) throw Error("item '" + catalog[i].id + "' has no vocabulary token");
      logit[i] = lp[static_cast<std::size_t>(*id)];
      m = std::max(m, logit[i]);
    }
    double z = 0;
    for (double& x : logit) z += std::exp(x - m);
    std::vector<RankedItem> out(catalog.size());
    for (std::size_t i = 0; i < catalog.size(); ++i)
      out[i] = {catalog[i].id, std::exp(logit[i] - m) / z};
    std::stable_sort(out.begin(), out.end(),
                     [](const RankedItem& a, const RankedItem& b) { return a.prob > b.prob; });
    return out;
  }

  void snapshot(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    const auto& w = model_.params();
    std::string blob(w.size() * sizeof(float), '\0');
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto bits = std::bit_cast<std::uint32_t>(w[i]);
      for (int b = 0; b < 4; ++b)
        blob[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    nlohmann::ordered_json j;
    j["format"] = "mgcrs-checkpoint/1";
    j["name"] = name_;
    j["model"] = to_json(model_.config());
    j["vocab_digest"] = vocab_->digest();
    j["params_digest"] = digest_hex(blob);
    j["num_params"] = w.size();
    auto tensors = nlohmann::ordered_json::array();
    for (const auto& t : model_.tensors())
      tensors.push_back({t.name, t.rows, t.cols});
    j["tensors"] = std::move(tensors);
    write_file(dir / "params.bin", blob);
    write_file(dir / "vocab.json", vocab_->to_json().dump() + "\n");
    write_file(dir / "config.json", j.dump(2) + "\n");
  }

  /// Restores a checkpoint. With `expected_vocab`, its digest must match the
  /// stored one; the expected vocabulary is then shared by the result.
  static Backbone restore(const std::filesystem::path& dir,
                          std::shared_ptr<const Vocabulary> expected_vocab = nullptr) {
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(read_file(dir / "config.json"));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError((dir / "config.json").string(), 0, e.what());
    }
    if (j.value("format", "") != "mgcrs-checkpoint/1")
      throw Error("not a checkpoint directory: " + dir.string());
    const std::string vdigest = j.at("vocab_digest").get<std::string>();
    std::shared_ptr<const Vocabulary> vocab = expected_vocab;
    if (vocab) {
      if (vocab->digest() != vdigest)
        throw Error("vocabulary digest mismatch for checkpoint " + dir.string() +
                    ": expected " + vocab->digest() + ", stored " + vdigest);
    } else {
      auto v = std::make_shared<Vocabulary>(Vocabulary::from_json(
          nlohmann::ordered_json::parse(read_file(dir / "vocab.json"))));
      if (v->digest() != vdigest)
        throw Error("vocab.json does not match its recorded digest in " + dir.string());
      vocab = std::move(v);
    }
    auto cfg = model_config_from_json(j.at("model"));
    if (cfg.vocab_size != static_cast<int>(vocab->size()))
      throw Error("checkpoint vocabulary size differs from the vocabulary");
    Backbone b(vocab, cfg, j.value("name", "theta"));
    std::string blob = read_file(dir / "params.bin");
    if (blob.size() != b.model_.params().size() * sizeof(float) ||
        digest_hex(blob) != j.value("params_digest", ""))
      throw Error("corrupt parameter file in " + dir.string());
    auto& w = b.model_.params();
    for (std::size_t i = 0; i < w.size(); ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k)
        bits |= static_cast<std::uint32_t>(
                    static_cast<unsigned char>(blob[i * 4 + static_cast<std::size_t>(k)]))
                << (8 * k);
      w[i] = std::bit_cast<float>(bits);
    }
    return b;
  }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::string name_;
  Model model_;
};

}  // namespace mgcrs
