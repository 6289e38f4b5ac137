// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mgcrs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input record. `line` is 1-based, 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string{}) +
              ": " + what),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

enum class Task { G, T, R, D };

inline constexpr Task kAllTasks[] = {Task::G, Task::T, Task::R, Task::D};

inline char task_letter(Task t) {
  switch (t) {
    case Task::G: return 'G';
    case Task::T: return 'T';
    case Task::R: return 'R';
    case Task::D: return 'D';
  }
  return '?';
}

inline Task parse_task(std::string_view s) {
  if (s == "G" || s == "goal") return Task::G;
  if (s == "T" || s == "topic") return Task::T;
  if (s == "R" || s == "item") return Task::R;
  if (s == "D" || s == "response") return Task::D;
  throw Error("unknown task '" + std::string(s) + "'");
}

inline std::size_t task_index(Task t) { return static_cast<std::size_t>(t); }

// Segment tokens and the multi-label separator.
namespace tok {
inline constexpr std::string_view kUser = "[user]";
inline constexpr std::string_view kSystem = "[system]";
inline constexpr std::string_view kGoal = "[goal]";
inline constexpr std::string_view kTopic = "[topic]";
inline constexpr std::string_view kItem = "[item]";
inline constexpr std::string_view kProfile = "[profile]";
inline constexpr std::string_view kSep = "</k>";
inline constexpr std::string_view kSos = "[sos]";
inline constexpr std::string_view kEos = "[eos]";
inline constexpr std::string_view kPad = "[pad]";
inline constexpr std::string_view kUnk = "[unk]";

inline constexpr std::string_view kAll[] = {kUser, kSystem, kGoal, kTopic,
                                            kItem, kProfile, kSep,  kSos,
                                            kEos,  kPad,   kUnk};
}  // namespace tok

/// " </k> " joined label list; the one separator for every multi-label value.
inline std::string join_labels(std::span<const std::string> labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) {
      out += ' ';
      out += tok::kSep;
      out += ' ';
    }
    out += labels[i];
  }
  return out;
}

/// Surface form of an item's vocabulary token: "_<item_id>_".
inline std::string item_token(std::string_view item_id) {
  std::string s;
  s.reserve(item_id.size() + 2);
  s += '_';
  s += item_id;
  s += '_';
  return s;
}

inline std::string join(std::span<const std::string> parts,
                        std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Splits UTF-8 text into code points (invalid bytes become single units).
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t n = 1;
    if (c >= 0xF0)
      n = 4;
    else if (c >= 0xE0)
      n = 3;
    else if (c >= 0xC0)
      n = 2;
    if (i + n > s.size()) n = 1;
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

// FNV-1a, 64 bit. Used for content digests of corpora, vocabularies and
// parameter blobs; not a security primitive.
class Fnv64 {
 public:
  void update(const void* data, std::size_t n) {
    auto p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string digest_hex(std::string_view s) {
  Fnv64 h;
  h.update(s);
  return h.hex();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view data) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

/// Deterministic generator shared by synthesis, initialization and shuffling.
/// Distribution code is local so streams do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next() {
    // splitmix64
    std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, n).
  std::size_t below(std::size_t n) {
    if (n <= 1) return 0;
    return static_cast<std::size_t>(next() % n);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t s_;
  double spare_ = 0;
  bool has_spare_ = false;
};

}  // namespace mgcrs
