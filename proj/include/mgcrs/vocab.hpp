// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Token vocabulary: special segment tokens, a base subword inventory and one
// token per catalog item.
//
// Id layout: [0, 11) special tokens in tok::kAll order, then the base
// tokenizer's ids, then item tokens in catalog order.
//
// Normalization applied by encode/decode: whitespace runs collapse to a single
// space, leading/trailing whitespace is dropped, and special/item tokens are
// always surrounded by single spaces. No case folding.

#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mgcrs/common.hpp"
#include "mgcrs/corpus.hpp"

namespace mgcrs {

/// Base (non-special) tokenizer. Ids are local to the tokenizer, [0, size()).
class BaseTokenizer {
 public:
  virtual ~BaseTokenizer() = default;
  virtual std::size_t size() const = 0;
  virtual const std::string& piece(int id) const = 0;
  virtual std::optional<int> find(std::string_view piece) const = 0;
  /// Appends ids for a span of plain text (no special tokens). Unknown
  /// characters are reported as -1.
  virtual void encode(std::string_view text, std::vector<int>& out) const = 0;
  /// Text for a run of base ids; the run is one whitespace-separated chunk
  /// sequence, so joining runs with a space reproduces normalized text.
  virtual std::string decode(std::span<const int> ids) const = 0;
  virtual std::string kind() const = 0;
};

/// Whole words from a fixed inventory, falling back to characters. A word
/// that is not in the inventory is emitted as its first code point followed
/// by "##"-prefixed continuation code points.
class WordCharTokenizer final : public BaseTokenizer {
 public:
  WordCharTokenizer() = default;
  explicit WordCharTokenizer(std::vector<std::string> pieces)
      : pieces_(std::move(pieces)) {
    for (std::size_t i = 0; i < pieces_.size(); ++i)
      if (!index_.emplace(pieces_[i], static_cast<int>(i)).second)
        throw Error("duplicate base token '" + pieces_[i] + "'");
  }

  /// Inventory from words plus every code point seen in them.
  static WordCharTokenizer from_words(const std::vector<std::string>& words,
                                      const std::vector<std::string>& chars) {
    std::vector<std::string> pieces;
    std::unordered_map<std::string, bool> seen;
    auto add = [&](const std::string& p) {
      if (seen.emplace(p, true).second) pieces.push_back(p);
    };
    for (const auto& w : words) add(w);
    for (const auto& c : chars) {
      add(c);
      add("##" + c);
    }
    return WordCharTokenizer(std::move(pieces));
  }

  std::size_t size() const override { return pieces_.size(); }
  const std::string& piece(int id) const override { return pieces_.at(id); }
  std::optional<int> find(std::string_view p) const override {
    auto it = index_.find(std::string(p));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::string kind() const override { return "word_char"; }
  const std::vector<std::string>& pieces() const { return pieces_; }

  void encode(std::string_view text, std::vector<int>& out) const override {
    for (const auto& word : split_whitespace(text)) {
      if (!word.starts_with("##")) {
        if (auto id = find(word)) {
          out.push_back(*id);
          continue;
        }
      }
      bool first = true;
      for (const auto& ch : utf8_chars(word)) {
        auto id = find(first ? ch : "##" + ch);
        out.push_back(id ? *id : -1);
        first = false;
      }
    }
  }

  std::string decode(std::span<const int> ids) const override {
    std::string out;
    for (int id : ids) {
      const std::string& p = pieces_.at(id);
      if (p.starts_with("##") && p.size() > 2) {
        out += p.substr(2);
      } else {
        if (!out.empty()) out += ' ';
        out += p;
      }
    }
    return out;
  }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

enum class TokenRole { special, base, item };

class Vocabulary {
 public:
  static constexpr int kNumSpecial = 11;

  Vocabulary() : Vocabulary(std::make_shared<WordCharTokenizer>(), {}) {}

  Vocabulary(std::shared_ptr<const BaseTokenizer> base,
             std::vector<std::string> item_ids)
      : base_(std::move(base)), item_ids_(std::move(item_ids)) {
    for (int i = 0; i < kNumSpecial; ++i)
      special_index_.emplace(std::string(tok::kAll[i]), i);
    for (std::size_t i = 0; i < item_ids_.size(); ++i) {
      std::string t = item_token(item_ids_[i]);
      if (!item_index_.emplace(t, static_cast<int>(i)).second)
        throw Error("duplicate item id '" + item_ids_[i] + "'");
      if (base_->find(t))
        throw Error("item token '" + t + "' collides with a base token");
      if (special_index_.count(t))
        throw Error("item token '" + t + "' collides with a special token");
      item_tokens_.push_back(std::move(t));
    }
    for (int i = 0; i < kNumSpecial; ++i)
      if (base_->find(tok::kAll[i]))
        throw Error("base inventory contains special token '" +
                    std::string(tok::kAll[i]) + "'");
  }

  std::size_t size() const { return kNumSpecial + base_->size() + item_ids_.size(); }
  std::size_t base_size() const { return base_->size(); }
  std::size_t item_count() const { return item_ids_.size(); }
  int base_begin() const { return kNumSpecial; }
  int item_begin() const { return kNumSpecial + static_cast<int>(base_->size()); }
  const BaseTokenizer& base() const { return *base_; }

  int special(std::string_view t) const {
    auto it = special_index_.find(std::string(t));
    if (it == special_index_.end())
      throw Error("not a special token: " + std::string(t));
    return it->second;
  }
  int pad_id() const { return special(tok::kPad); }
  int sos_id() const { return special(tok::kSos); }
  int eos_id() const { return special(tok::kEos); }
  int unk_id() const { return special(tok::kUnk); }
  int sep_id() const { return special(tok::kSep); }

  TokenRole role(int id) const {
    if (id < kNumSpecial) return TokenRole::special;
    if (id < item_begin()) return TokenRole::base;
    return TokenRole::item;
  }

  std::string token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= size())
      throw Error("token id out of range: " + std::to_string(id));
    switch (role(id)) {
      case TokenRole::special: return std::string(tok::kAll[id]);
      case TokenRole::base: return base_->piece(id - kNumSpecial);
      case TokenRole::item: return item_tokens_[id - item_begin()];
    }
    return {};
  }

  std::optional<int> item_token_id(std::string_view item_id) const {
    auto it = item_index_.find(item_token(item_id));
    if (it == item_index_.end()) return std::nullopt;
    return item_begin() + it->second;
  }

  const std::string& item_id_at(int id) const {
    return item_ids_.at(static_cast<std::size_t>(id - item_begin()));
  }

  const std::vector<std::string>& item_ids() const { return item_ids_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    std::size_t plain_start = 0, i = 0;
    auto flush = [&](std::size_t end) {
      if (end > plain_start) {
        std::vector<int> local;
        base_->encode(text.substr(plain_start, end - plain_start), local);
        for (int b : local) out.push_back(b < 0 ? unk_id() : b + kNumSpecial);
      }
    };
    while (i < text.size()) {
      std::size_t len = 0;
      int id = match_atomic(text, i, len);
      if (id >= 0) {
        flush(i);
        out.push_back(id);
        i += len;
        plain_start = i;
      } else {
        ++i;
      }
    }
    flush(text.size());
    return out;
  }

  /// Inverse of encode up to normalization; [pad]/[sos]/[eos] are skipped.
  std::string decode(std::span<const int> ids) const {
    std::string out;
    std::vector<int> run;
    auto emit = [&](const std::string& s) {
      if (s.empty()) return;
      if (!out.empty()) out += ' ';
      out += s;
    };
    auto flush = [&] {
      if (!run.empty()) emit(base_->decode(run));
      run.clear();
    };
    const int pad = pad_id(), sos = sos_id(), eos = eos_id();
    for (int id : ids) {
      if (id == pad || id == sos || id == eos) continue;
      if (role(id) == TokenRole::base) {
        run.push_back(id - kNumSpecial);
      } else {
        flush();
        emit(token(id));
      }
    }
    flush();
    return out;
  }

  /// Whitespace and special-token spacing normalization (no vocabulary
  /// lookups): the form decode(encode(s)) takes when every character is known.
  std::string normalize(std::string_view text) const {
    std::string spaced;
    std::size_t i = 0;
    while (i < text.size()) {
      std::size_t len = 0;
      if (match_atomic(text, i, len) >= 0) {
        spaced += ' ';
        spaced.append(text.substr(i, len));
        spaced += ' ';
        i += len;
      } else {
        spaced += text[i++];
      }
    }
    return join(split_whitespace(spaced), " ");
  }

  std::size_t count_tokens(std::string_view text) const {
    return encode(text).size();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "mgcrs-vocab/1";
    j["base_kind"] = base_->kind();
    auto toks = nlohmann::ordered_json::array();
    for (std::size_t id = 0; id < size(); ++id) {
      const char* r = "base";
      if (role(static_cast<int>(id)) == TokenRole::special) r = "special";
      if (role(static_cast<int>(id)) == TokenRole::item) r = "item";
      toks.push_back({token(static_cast<int>(id)), r});
    }
    j["tokens"] = std::move(toks);
    j["item_ids"] = item_ids_;
    return j;
  }

  static Vocabulary from_json(const nlohmann::ordered_json& j) {
    if (j.value("format", "") != "mgcrs-vocab/1")
      throw Error("unsupported vocabulary format");
    if (j.value("base_kind", "") != "word_char")
      throw Error("only word_char base vocabularies can be restored from JSON");
    std::vector<std::string> base;
    std::size_t idx = 0;
    for (const auto& t : j.at("tokens")) {
      auto role = t.at(1).get<std::string>();
      auto text = t.at(0).get<std::string>();
      if (idx < static_cast<std::size_t>(kNumSpecial)) {
        if (role != "special" || text != tok::kAll[idx])
          throw Error("vocabulary special-token block is corrupt");
      } else if (role == "base") {
        base.push_back(text);
      }
      ++idx;
    }
    auto items = j.at("item_ids").get<std::vector<std::string>>();
    return Vocabulary(std::make_shared<WordCharTokenizer>(std::move(base)),
                      std::move(items));
  }

  std::string digest() const { return digest_hex(to_json().dump()); }

 private:
  // Special or item token starting at text[i]; returns id or -1.
  int match_atomic(std::string_view text, std::size_t i,
                   std::size_t& len) const {
    const char c = text[i];
    if (c == '[' || c == '<') {
      for (int s = 0; s < kNumSpecial; ++s) {
        auto t = tok::kAll[s];
        if (text.substr(i, t.size()) == t) {
          len = t.size();
          return s;
        }
      }
    } else if (c == '_' && !item_index_.empty()) {
      auto j = text.find('_', i + 1);
      if (j != std::string_view::npos) {
        auto it = item_index_.find(std::string(text.substr(i, j - i + 1)));
        if (it != item_index_.end()) {
          len = j - i + 1;
          return item_begin() + it->second;
        }
      }
    }
    return -1;
  }

  std::shared_ptr<const BaseTokenizer> base_;
  std::vector<std::string> item_ids_;
  std::vector<std::string> item_tokens_;
  std::unordered_map<std::string, int> special_index_;
  std::unordered_map<std::string, int> item_index_;
};

struct BaseVocabOptions {
  std::size_t min_count = 1;
  std::size_t max_words = 50000;
  /// Extra texts (prompt sentences, etc.) whose words must be covered.
  std::vector<std::string> extra_texts;
};

/// Word/char inventory collected from every text field of a corpus.
/// Words are ordered by descending frequency, then lexicographically.
inline std::shared_ptr<WordCharTokenizer> build_base_tokenizer(
    const Corpus& c, const BaseVocabOptions& opt = {}) {
  std::map<std::string, std::size_t> counts;
  std::map<std::string, bool> chars;
  auto add_text = [&](std::string_view text) {
    for (const auto& w : split_whitespace(text)) {
      if (contains_segment_literal(w) || w.starts_with("##")) {
        for (const auto& ch : utf8_chars(w)) chars[ch] = true;
        continue;
      }
      ++counts[w];
      for (const auto& ch : utf8_chars(w)) chars[ch] = true;
    }
  };
  for (const auto& d : c.dialogues) {
    for (const auto& t : d.turns) {
      add_text(t.text);
      for (const auto& g : t.goals) add_text(g);
      for (const auto& k : t.topics) add_text(k);
    }
    for (const auto& e : d.profile.entries) add_text(e);
    for (const auto& tr : d.kb) {
      add_text(tr.head);
      add_text(tr.relation);
      add_text(tr.tail);
    }
  }
  for (const auto& g : c.goal_set) add_text(g);
  for (const auto& k : c.topic_set) add_text(k);
  for (const auto& it : c.item_catalog) add_text(it.name);
  for (const auto& x : opt.extra_texts) add_text(x);

  // item tokens must stay atomic; never admit their surface forms as words
  std::unordered_map<std::string, bool> item_surface;
  for (const auto& it : c.item_catalog) item_surface[item_token(it.id)] = true;

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (const auto& [w, n] : counts)
    if (n >= opt.min_count && !item_surface.count(w)) ranked.emplace_back(w, n);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > opt.max_words) ranked.resize(opt.max_words);
  std::vector<std::string> words;
  for (auto& [w, n] : ranked) words.push_back(w);
  std::vector<std::string> char_list;
  for (const auto& [ch, _] : chars) char_list.push_back(ch);
  return std::make_shared<WordCharTokenizer>(
      WordCharTokenizer::from_words(words, char_list));
}

inline Vocabulary build_vocabulary(std::shared_ptr<const BaseTokenizer> base,
                                   std::span<const CatalogItem> catalog) {
  std::vector<std::string> ids;
  ids.reserve(catalog.size());
  for (const auto& it : catalog) ids.push_back(it.id);
  return Vocabulary(std::move(base), std::move(ids));
}

}  // namespace mgcrs
