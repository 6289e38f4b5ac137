// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Live serving: sessions of accumulated turns, one pipeline run per user
// utterance, and the HTTP layer over them.
//
// A live session has no gold labels, so each system turn keeps the goal and
// topics the pipeline predicted for it, and each user turn carries the goal
// in effect when it was said (the previous system goal). Later turns see
// those predictions as their goal/topic history.
//
// HTTP (JSON bodies, UTF-8):
//   POST /v1/session                   -> {"session_id"}
//   POST /v1/session/{id}/turn {"text"} -> {"goal", "topics", "items": [{"id","name","p"}], "response"}
//   GET  /v1/session/{id}/transcript   -> {"session_id", "turns": [...]}
//   GET  /healthz                      -> {"status", "models_loaded", "sessions"}
// Errors are {"error": message} with 400 (bad request), 404 (unknown or
// expired session) or 503 (no models).

#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "mgcrs/pipeline.hpp"

// after Eigen: <resolv.h> from httplib defines a `_res` macro
#include <httplib.h>

namespace mgcrs {

class SessionNotFound : public Error {
 public:
  using Error::Error;
};

class ModelsNotLoaded : public Error {
 public:
  using Error::Error;
};

struct ItemView {
  std::string id;
  std::string name;
  double p = 0;
};

struct TurnRecord {
  Speaker speaker = Speaker::user;
  std::string text;
  Labels goal;
  Labels topics;
  std::vector<ItemView> items;  // system turns only
};

struct ServeResult {
  TurnPrediction prediction;
  std::vector<ItemView> items;
};

using Clock = std::chrono::steady_clock;

struct Session {
  std::string id;
  Dialogue state;
  std::vector<TurnRecord> transcript;
  Clock::time_point created, last_active;
  std::mutex mu;  // serializes turns within the session

  std::size_t turn_count() const { return state.turns.size(); }
  /// Predicted goals, one entry per system turn.
  std::vector<std::string> goal_history() const {
    std::vector<std::string> out;
    for (const auto& t : state.turns)
      if (t.speaker == Speaker::system) out.push_back(join_labels(t.goals));
    return out;
  }
  std::vector<std::string> topic_history() const {
    std::vector<std::string> out;
    for (const auto& t : state.turns)
      if (t.speaker == Speaker::system) out.push_back(join_labels(t.topics));
    return out;
  }
};

inline nlohmann::ordered_json to_json(const ItemView& v) {
  return {{"id", v.id}, {"name", v.name}, {"p", v.p}};
}

inline nlohmann::ordered_json to_json(const TurnRecord& r) {
  nlohmann::ordered_json j;
  j["speaker"] = r.speaker == Speaker::user ? "user" : "system";
  j["text"] = r.text;
  j["goal"] = r.goal;
  j["topics"] = r.topics;
  auto items = nlohmann::ordered_json::array();
  for (const auto& it : r.items) items.push_back(to_json(it));
  j["items"] = std::move(items);
  return j;
}

inline TurnRecord turn_record_from_json(const nlohmann::json& j) {
  TurnRecord r;
  r.speaker = j.at("speaker").get<std::string>() == "user" ? Speaker::user : Speaker::system;
  r.text = j.value("text", "");
  r.goal = j.value("goal", Labels{});
  r.topics = j.value("topics", Labels{});
  if (j.contains("items"))
    for (const auto& it : j.at("items"))
      r.items.push_back({it.value("id", ""), it.value("name", ""), it.value("p", 0.0)});
  return r;
}

/// The per-turn pipeline over a fixed model set, shared read-only by all
/// sessions.
class ChatEngine {
 public:
  ChatEngine(const Corpus& inventory, std::shared_ptr<const ModelSet> models,
             PipelineConfig cfg = {}, std::size_t top_n = 5)
      : models_(std::move(models)), top_n_(top_n), catalog_(inventory.item_catalog) {
    StageModels sm;
    if (models_) sm = StageModels::from(*models_);
    loaded_ = true;
    for (Task t : kAllTasks) loaded_ = loaded_ && sm[t];
    pipe_ = std::make_unique<Pipeline>(inventory, sm, std::move(cfg));
  }

  bool models_loaded() const { return loaded_; }

  /// Appends the user turn and the predicted system turn. On failure the
  /// session is left as it was.
  ServeResult serve_turn(Session& s, const std::string& text) const {
    if (!loaded_) throw ModelsNotLoaded("model set not loaded");
    if (trim(text).empty()) throw Error("empty utterance");
    auto& turns = s.state.turns;
    const std::size_t before = turns.size();
    Turn u;
    u.speaker = Speaker::user;
    u.text = text;
    for (auto it = turns.rbegin(); it != turns.rend(); ++it)
      if (it->speaker == Speaker::system) {
        u.goals = it->goals;
        break;
      }
    turns.push_back(u);
    Turn placeholder;
    placeholder.speaker = Speaker::system;
    turns.push_back(placeholder);

    ServeResult r;
    try {
      r.prediction = pipe_->run_turn(s.state, turns.size() - 1, StageOverride::all_model());
    } catch (...) {
      turns.resize(before);
      throw;
    }
    const auto& p = r.prediction;
    if (p.ranked_items)
      for (std::size_t i = 0; i < p.ranked_items->size() && i < top_n_; ++i) {
        const auto& it = (*p.ranked_items)[i];
        const auto* entry = catalog_.find(it.item_id);
        r.items.push_back({it.item_id, entry ? entry->name : "", it.prob});
      }
    Turn& sys = turns.back();
    sys.text = p.response;
    sys.goals = p.goal;
    sys.topics = p.topics;
    if (!r.items.empty()) sys.item_ids = {r.items.front().id};

    s.transcript.push_back({Speaker::user, text, u.goals, {}, {}});
    s.transcript.push_back({Speaker::system, p.response, p.goal, p.topics, r.items});
    return r;
  }

  /// Rebuilds dialogue state from a stored transcript.
  static void replay(Session& s, std::vector<TurnRecord> transcript) {
    s.state.turns.clear();
    for (const auto& r : transcript) {
      Turn t;
      t.speaker = r.speaker;
      t.text = r.text;
      t.goals = r.goal;
      t.topics = r.topics;
      if (!r.items.empty()) t.item_ids = {r.items.front().id};
      s.state.turns.push_back(std::move(t));
    }
    s.transcript = std::move(transcript);
  }

 private:
  std::shared_ptr<const ModelSet> models_;
  std::size_t top_n_;
  CatalogIndex catalog_;
  std::unique_ptr<Pipeline> pipe_;
  bool loaded_ = false;
};

struct SessionOptions {
  /// Idle time after which a session is dropped; zero keeps sessions forever.
  std::chrono::seconds idle_timeout{1800};
  /// When set, each session's transcript is appended to <dir>/<id>.jsonl and
  /// sessions unknown in memory are reloaded from there.
  std::optional<std::filesystem::path> persist_dir;
};

class SessionStore {
 public:
  explicit SessionStore(SessionOptions opt = {}, std::function<Clock::time_point()> now = Clock::now)
      : opt_(std::move(opt)), now_(std::move(now)), rng_(std::random_device{}()) {
    if (opt_.persist_dir) std::filesystem::create_directories(*opt_.persist_dir);
  }

  std::shared_ptr<Session> create() {
    std::unique_lock lock(mu_);
    sweep();
    std::string id;
    do {
      id = fresh_id();
    } while (sessions_.count(id) || (opt_.persist_dir && std::filesystem::exists(path_of(id))));
    auto s = std::make_shared<Session>();
    s->id = id;
    s->state.dialogue_id = id;
    s->created = s->last_active = now_();
    sessions_[id] = s;
    if (opt_.persist_dir) write_file(path_of(id), "");
    return s;
  }

  /// The live session; refreshes its idle timer.
  std::shared_ptr<Session> get(const std::string& id) {
    std::unique_lock lock(mu_);
    auto it = sessions_.find(id);
    if (it != sessions_.end() && expired(*it->second)) {
      expired_ids_.insert(id);
      sessions_.erase(it);
      it = sessions_.end();
    }
    if (it == sessions_.end()) {
      auto restored = restore(id);
      if (!restored) throw SessionNotFound("unknown or expired session " + id);
      it = sessions_.emplace(id, std::move(restored)).first;
    }
    it->second->last_active = now_();
    return it->second;
  }

  std::size_t size() {
    std::unique_lock lock(mu_);
    sweep();
    return sessions_.size();
  }

  /// Appends the last `n` transcript records of a session to its file.
  void persist(const Session& s, std::size_t n) const {
    if (!opt_.persist_dir) return;
    std::ofstream out(path_of(s.id), std::ios::app | std::ios::binary);
    for (std::size_t i = s.transcript.size() - std::min(n, s.transcript.size());
         i < s.transcript.size(); ++i)
      out << to_json(s.transcript[i]).dump() << "\n";
  }

 private:
  bool expired(const Session& s) const {
    return opt_.idle_timeout.count() > 0 && now_() - s.last_active > opt_.idle_timeout;
  }
  void sweep() {
    std::erase_if(sessions_, [&](const auto& kv) {
      if (!expired(*kv.second)) return false;
      expired_ids_.insert(kv.first);
      return true;
    });
  }
  std::string fresh_id() {
    static constexpr char hex[] = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 16; ++i) id += hex[rng_() & 15];
    return id;
  }
  std::filesystem::path path_of(const std::string& id) const { return *opt_.persist_dir / (id + ".jsonl"); }

  std::shared_ptr<Session> restore(const std::string& id) const {
    if (!opt_.persist_dir || id.empty() || expired_ids_.count(id) ||
        id.find_first_not_of("0123456789abcdef") != std::string::npos)
      return nullptr;
    auto p = path_of(id);
    if (!std::filesystem::exists(p)) return nullptr;
    // a file left by an earlier process is as idle as its last write
    auto idle = std::filesystem::file_time_type::clock::now() - std::filesystem::last_write_time(p);
    if (opt_.idle_timeout.count() > 0 && idle > opt_.idle_timeout) return nullptr;
    std::vector<TurnRecord> records;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line))
      if (!trim(line).empty()) records.push_back(turn_record_from_json(nlohmann::json::parse(line)));
    auto s = std::make_shared<Session>();
    s->id = id;
    s->state.dialogue_id = id;
    s->created = now_();
    ChatEngine::replay(*s, std::move(records));
    return s;
  }

  SessionOptions opt_;
  std::function<Clock::time_point()> now_;
  std::mt19937_64 rng_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::set<std::string> expired_ids_;
};

inline nlohmann::ordered_json turn_payload(const ServeResult& r) {
  nlohmann::ordered_json j;
  j["goal"] = r.prediction.goal;
  j["topics"] = r.prediction.topics;
  auto items = nlohmann::ordered_json::array();
  for (const auto& it : r.items) items.push_back(to_json(it));
  j["items"] = std::move(items);
  j["response"] = r.prediction.response;
  return j;
}

inline nlohmann::ordered_json transcript_payload(const Session& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.id;
  auto turns = nlohmann::ordered_json::array();
  for (const auto& t : s.transcript) turns.push_back(to_json(t));
  j["turns"] = std::move(turns);
  return j;
}

class ChatServer {
 public:
  ChatServer(const ChatEngine& engine, SessionStore& store) : engine_(engine), store_(store) {
    routes();
  }
  ~ChatServer() { stop(); }

  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    int bound = port == 0 ? http_.bind_to_any_port(host) : (http_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    return bound;
  }

  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (!http_.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    http_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::ordered_json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json; charset=utf-8");
  }
  static void fail(httplib::Response& res, int status, const std::string& msg) {
    reply(res, status, {{"error", msg}});
  }

  void routes() {
    http_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"},
                       {"models_loaded", engine_.models_loaded()},
                       {"sessions", store_.size()}});
    });
    http_.Post("/v1/session", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"session_id", store_.create()->id}});
    });
    http_.Post(R"(/v1/session/([^/]+)/turn)", [this](const httplib::Request& req,
                                                     httplib::Response& res) {
      std::string text;
      try {
        auto body = nlohmann::json::parse(req.body);
        text = body.at("text").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        return fail(res, 400, "body must be a JSON object with a string field \"text\"");
      }
      try {
        auto s = store_.get(req.matches[1]);
        std::lock_guard lock(s->mu);
        auto r = engine_.serve_turn(*s, text);
        store_.persist(*s, 2);
        reply(res, 200, turn_payload(r));
      } catch (const SessionNotFound& e) {
        fail(res, 404, e.what());
      } catch (const ModelsNotLoaded& e) {
        fail(res, 503, e.what());
      } catch (const Error& e) {
        fail(res, 400, e.what());
      }
    });
    http_.Get(R"(/v1/session/([^/]+)/transcript)", [this](const httplib::Request& req,
                                                          httplib::Response& res) {
      try {
        auto s = store_.get(req.matches[1]);
        std::lock_guard lock(s->mu);
        reply(res, 200, transcript_payload(*s));
      } catch (const SessionNotFound& e) {
        fail(res, 404, e.what());
      }
    });
  }

  const ChatEngine& engine_;
  SessionStore& store_;
  httplib::Server http_;
  std::thread thread_;
};

}  // namespace mgcrs
