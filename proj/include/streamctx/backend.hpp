#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "streamctx/context.hpp"
#include "streamctx/detail/hash.hpp"
#include "streamctx/error.hpp"
#include "streamctx/retrieval.hpp"
#include "streamctx/timeline.hpp"

namespace streamctx {

namespace detail {

inline std::string base64_encode(std::string_view in) {
  static constexpr char table[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const auto n = (std::uint32_t(std::uint8_t(in[i])) << 16) |
                   (std::uint32_t(std::uint8_t(in[i + 1])) << 8) | std::uint8_t(in[i + 2]);
    out += table[(n >> 18) & 63];
    out += table[(n >> 12) & 63];
    out += table[(n >> 6) & 63];
    out += table[n & 63];
  }
  if (i < in.size()) {
    auto n = std::uint32_t(std::uint8_t(in[i])) << 16;
    if (i + 1 < in.size()) n |= std::uint32_t(std::uint8_t(in[i + 1])) << 8;
    out += table[(n >> 18) & 63];
    out += table[(n >> 12) & 63];
    out += i + 1 < in.size() ? table[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Request / response model

/// A frame as it travels on the wire: data is the locator ("ref") or the
/// base64-encoded file bytes ("b64").
struct WireFrame {
  double t = 0.0;
  FrameMode mode = FrameMode::ref;
  std::string data;

  bool operator==(const WireFrame&) const = default;
};

struct WireChunk {
  double span_start = 0.0;
  double span_end = 0.0;
  std::vector<WireFrame> frames;

  bool operator==(const WireChunk&) const = default;
};

struct BackendRequest {
  std::string query_id;
  std::string question;
  std::vector<std::string> options;
  double query_time_s = 0.0;  // not transmitted; checked before dispatch
  std::vector<WireFrame> frames;
  std::vector<WireChunk> retrieved;
  ChunkPlacement placement = ChunkPlacement::before_recent;
  int max_new_tokens = 64;

  std::size_t frame_count() const {
    std::size_t n = frames.size();
    for (const auto& c : retrieved) n += c.frames.size();
    return n;
  }

  bool operator==(const BackendRequest&) const = default;
};

struct BackendResponse {
  std::string query_id;
  std::string answer_text;
  std::optional<int> chosen_option;
  std::optional<double> ttft_ms;
  std::optional<int> token_count;
  // How ttft_ms was obtained ("server", "client_first_byte"); not transmitted.
  std::string ttft_source;

  bool operator==(const BackendResponse&) const = default;
};

inline WireFrame to_wire(const FrameRef& frame, FrameMode mode) {
  auto payload = resolve_frame(frame, mode);
  return {frame.timestamp_s, mode,
          mode == FrameMode::bytes ? detail::base64_encode(payload) : std::move(payload)};
}

inline BackendRequest make_request(std::string query_id, std::string question,
                                   std::vector<std::string> options, const ContextBundle& bundle,
                                   FrameMode mode = FrameMode::ref, int max_new_tokens = 64) {
  BackendRequest req;
  req.query_id = std::move(query_id);
  req.question = std::move(question);
  req.options = std::move(options);
  req.query_time_s = bundle.query_time_s;
  req.placement = bundle.placement;
  req.max_new_tokens = max_new_tokens;
  for (const auto& f : bundle.recent_frames) req.frames.push_back(to_wire(f, mode));
  for (const auto& c : bundle.retrieved_chunks) {
    WireChunk chunk{c.start_s(), c.end_s(), {}};
    for (const auto& f : c.frames) chunk.frames.push_back(to_wire(f, mode));
    req.retrieved.push_back(std::move(chunk));
  }
  return req;
}

/// Latest frame timestamp carried by the request, if any.
inline std::optional<double> latest_frame_time(const BackendRequest& req) {
  std::optional<double> latest;
  auto see = [&](const WireFrame& f) { latest = latest ? std::max(*latest, f.t) : f.t; };
  for (const auto& f : req.frames) see(f);
  for (const auto& c : req.retrieved)
    for (const auto& f : c.frames) see(f);
  return latest;
}

/// Trust-boundary check: no frame may postdate the query.
inline void check_causal(const BackendRequest& req) {
  if (auto latest = latest_frame_time(req); latest && *latest > req.query_time_s)
    throw Error(ErrorKind::invalid_input, "request " + req.query_id + " carries a frame at t=" +
                                              std::to_string(*latest) + " after query time " +
                                              std::to_string(req.query_time_s));
}

// ---------------------------------------------------------------------------
// Wire format (JSON, UTF-8)

inline nlohmann::json to_json(const WireFrame& f) {
  return {{"t", f.t}, {"mode", f.mode == FrameMode::bytes ? "b64" : "ref"}, {"data", f.data}};
}

inline nlohmann::json request_to_json(const BackendRequest& req) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : req.frames) frames.push_back(to_json(f));
  nlohmann::json retrieved = nlohmann::json::array();
  for (const auto& c : req.retrieved) {
    nlohmann::json cf = nlohmann::json::array();
    for (const auto& f : c.frames) cf.push_back(to_json(f));
    retrieved.push_back({{"span", {c.span_start, c.span_end}}, {"frames", std::move(cf)}});
  }
  return {{"query_id", req.query_id},
          {"question", req.question},
          {"options", req.options},
          {"frames", std::move(frames)},
          {"retrieved", std::move(retrieved)},
          {"gen",
           {{"max_new_tokens", req.max_new_tokens},
            {"retrieved_placement",
             req.placement == ChunkPlacement::before_recent ? "before" : "after"}}}};
}

inline BackendRequest request_from_json(const nlohmann::json& j) {
  auto frame = [](const nlohmann::json& f) {
    const auto mode = f.at("mode").get<std::string>();
    if (mode != "b64" && mode != "ref")
      throw Error(ErrorKind::invalid_input, "unknown frame mode '" + mode + "'");
    return WireFrame{f.at("t").get<double>(), mode == "b64" ? FrameMode::bytes : FrameMode::ref,
                     f.at("data").get<std::string>()};
  };
  try {
    BackendRequest req;
    req.query_id = j.at("query_id").get<std::string>();
    req.question = j.at("question").get<std::string>();
    req.options = j.value("options", std::vector<std::string>{});
    for (const auto& f : j.value("frames", nlohmann::json::array())) req.frames.push_back(frame(f));
    for (const auto& c : j.value("retrieved", nlohmann::json::array())) {
      WireChunk chunk;
      chunk.span_start = c.at("span").at(0).get<double>();
      chunk.span_end = c.at("span").at(1).get<double>();
      for (const auto& f : c.at("frames")) chunk.frames.push_back(frame(f));
      req.retrieved.push_back(std::move(chunk));
    }
    if (j.contains("gen")) {
      req.max_new_tokens = j["gen"].value("max_new_tokens", 64);
      req.placement = j["gen"].value("retrieved_placement", "before") == "after"
                          ? ChunkPlacement::after_recent
                          : ChunkPlacement::before_recent;
    }
    return req;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, std::string("malformed request: ") + e.what());
  }
}

inline nlohmann::json response_to_json(const BackendResponse& r) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"query_id", r.query_id},
          {"answer_text", r.answer_text},
          {"chosen_option", opt(r.chosen_option)},
          {"ttft_ms", opt(r.ttft_ms)},
          {"token_count", opt(r.token_count)}};
}

/// Parses and schema-checks a reply against the request it answers.
inline BackendResponse response_from_json(const nlohmann::json& j, const BackendRequest& req) {
  auto fail = [&](const std::string& why) {
    return Error(ErrorKind::backend, "non-conforming reply for " + req.query_id + ": " + why);
  };
  if (!j.is_object()) throw fail("body is not an object");
  if (!j.contains("query_id") || !j["query_id"].is_string()) throw fail("missing query_id");
  if (!j.contains("answer_text") || !j["answer_text"].is_string()) throw fail("missing answer_text");

  BackendResponse r;
  r.query_id = j["query_id"].get<std::string>();
  r.answer_text = j["answer_text"].get<std::string>();
  if (r.query_id != req.query_id) throw fail("query_id echo mismatch '" + r.query_id + "'");

  if (auto it = j.find("chosen_option"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw fail("chosen_option must be an integer");
    r.chosen_option = it->get<int>();
    if (*r.chosen_option < 0 || *r.chosen_option >= static_cast<int>(req.options.size()))
      throw fail("chosen_option out of range");
  }
  if (auto it = j.find("ttft_ms"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw fail("ttft_ms must be a number");
    r.ttft_ms = it->get<double>();
    if (!(*r.ttft_ms >= 0.0)) throw fail("ttft_ms must be non-negative");
  }
  if (auto it = j.find("token_count"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw fail("token_count must be an integer");
    r.token_count = it->get<int>();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Backends

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual BackendResponse answer(const BackendRequest& request) = 0;
};

struct EvidenceInterval {
  double start_s = 0.0;
  double end_s = 0.0;

  bool contains(double t) const { return start_s <= t && t <= end_s; }
  bool operator==(const EvidenceInterval&) const = default;
};

struct Grounding {
  std::vector<EvidenceInterval> evidence;
  double beta = 0.0;

  bool operator==(const Grounding&) const = default;
};

using GroundingMap = std::map<std::string, Grounding>;

/// Ground-truth oracle with a distraction model.
///
/// The base answer is correct when some context frame falls inside an
/// evidence interval. It is then flipped to the wrong option (gold + 1 mod
/// |options|) with probability min(1, beta * n_hist), where n_hist counts
/// context frames outside the most recent `recent_window` frames. The draw is
/// a hash of (seed, query_id), so responses are reproducible.
class MockBackend final : public Backend {
 public:
  struct Entry {
    int gold_option = 0;
    Grounding grounding;
  };

  MockBackend(std::map<std::string, Entry> entries, std::uint64_t seed, std::size_t recent_window)
      : entries_(std::move(entries)), seed_(seed), recent_window_(recent_window) {}

  std::string id() const override { return "mock"; }

  BackendResponse answer(const BackendRequest& req) override {
    auto it = entries_.find(req.query_id);
    if (it == entries_.end())
      throw Error(ErrorKind::grounding_missing, "no grounding for question " + req.query_id);
    const auto& [gold, grounding] = it->second;
    if (req.options.empty() || gold < 0 || gold >= static_cast<int>(req.options.size()))
      throw Error(ErrorKind::invalid_input, "mock needs the gold option among the options of " +
                                                req.query_id);

    bool grounded = false;
    auto see = [&](const WireFrame& f) {
      for (const auto& iv : grounding.evidence) grounded = grounded || iv.contains(f.t);
    };
    for (const auto& f : req.frames) see(f);
    for (const auto& c : req.retrieved)
      for (const auto& f : c.frames) see(f);

    const double p_err = error_probability(grounding.beta, history_frames(req));
    const bool flipped = draw(req.query_id) < p_err;
    const bool correct = grounded && !flipped;

    const int n = static_cast<int>(req.options.size());
    const int chosen = correct ? gold : (gold + 1) % n;
    return {req.query_id, req.options[static_cast<std::size_t>(chosen)], chosen, std::nullopt, 1, ""};
  }

  std::size_t history_frames(const BackendRequest& req) const {
    std::size_t n = req.frames.size() > recent_window_ ? req.frames.size() - recent_window_ : 0;
    for (const auto& c : req.retrieved) n += c.frames.size();
    return n;
  }

  static double error_probability(double beta, std::size_t n_hist) {
    return std::min(1.0, beta * static_cast<double>(n_hist));
  }

  double draw(std::string_view query_id) const {
    return detail::to_unit(
        detail::splitmix64(detail::splitmix64(seed_) ^ detail::fnv1a64(query_id)));
  }

 private:
  std::map<std::string, Entry> entries_;
  std::uint64_t seed_;
  std::size_t recent_window_;
};

/// Sleeps fixed_ms + per_frame_ms * frames before delegating. Scripted-latency
/// stub for timing tests.
class DelayedBackend final : public Backend {
 public:
  DelayedBackend(Backend& inner, double fixed_ms, double per_frame_ms = 0.0)
      : inner_(inner), fixed_ms_(fixed_ms), per_frame_ms_(per_frame_ms) {}

  std::string id() const override { return inner_.id() + "+delay"; }

  BackendResponse answer(const BackendRequest& req) override {
    const double ms = fixed_ms_ + per_frame_ms_ * static_cast<double>(req.frame_count());
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
    return inner_.answer(req);
  }

 private:
  Backend& inner_;
  double fixed_ms_;
  double per_frame_ms_;
};

/// Echoes the question as the answer. Useful as a stand-in server body.
class EchoBackend final : public Backend {
 public:
  std::string id() const override { return "echo"; }
  BackendResponse answer(const BackendRequest& req) override {
    return {req.query_id, req.question, req.options.empty() ? std::nullopt : std::optional<int>(0),
            std::nullopt, 1, ""};
  }
};

struct EndpointConfig {
  std::string url = "http://127.0.0.1:8000";
  double timeout_s = 30.0;
  int retries = 2;
  int max_in_flight = 4;
};

namespace detail {

inline httplib::Client make_client(const EndpointConfig& cfg) {
  httplib::Client client(cfg.url);
  const auto secs = static_cast<time_t>(cfg.timeout_s);
  const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  return client;
}

struct PostResult {
  std::string body;
  double first_byte_ms = 0.0;
};

/// POST with retries on transport errors and 5xx replies.
inline PostResult post_json(const EndpointConfig& cfg, const std::string& path,
                            const std::string& body) {
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    auto client = make_client(cfg);
    httplib::Request req;
    req.method = "POST";
    req.path = path;
    req.body = body;
    req.set_header("Content-Type", "application/json");

    const auto start = std::chrono::steady_clock::now();
    std::optional<std::chrono::steady_clock::time_point> first_byte;
    req.response_handler = [&](const httplib::Response&) {
      first_byte = std::chrono::steady_clock::now();
      return true;
    };
    httplib::Response res;
    httplib::Error err = httplib::Error::Success;
    if (!client.send(req, res, err)) {
      last_error = httplib::to_string(err);
      continue;
    }
    if (res.status >= 500) {
      last_error = "HTTP " + std::to_string(res.status);
      continue;
    }
    if (res.status != 200)
      throw Error(ErrorKind::backend, path + " returned HTTP " + std::to_string(res.status) +
                                          ": " + res.body);
    const auto stop = first_byte.value_or(std::chrono::steady_clock::now());
    return {std::move(res.body),
            std::chrono::duration<double, std::milli>(stop - start).count()};
  }
  throw Error(ErrorKind::backend, path + " failed after " + std::to_string(cfg.retries + 1) +
                                      " attempts: " + last_error);
}

inline nlohmann::json parse_body(const std::string& body, const std::string& what) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::backend, what + " reply is not JSON: " + e.what());
  }
}

}  // namespace detail

/// Client for POST /v1/answer. Server-reported ttft_ms wins; otherwise the
/// time from dispatch to the first response byte is used.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(EndpointConfig cfg)
      : cfg_(std::move(cfg)), slots_(std::max(1, cfg_.max_in_flight)) {}

  std::string id() const override { return "http"; }

  BackendResponse answer(const BackendRequest& req) override {
    check_causal(req);
    const auto body = request_to_json(req).dump();
    slots_.acquire();
    detail::PostResult result;
    try {
      result = detail::post_json(cfg_, "/v1/answer", body);
    } catch (...) {
      slots_.release();
      throw;
    }
    slots_.release();
    auto response = response_from_json(detail::parse_body(result.body, "/v1/answer"), req);
    response.ttft_source = response.ttft_ms ? "server" : "client_first_byte";
    if (!response.ttft_ms) response.ttft_ms = result.first_byte_ms;
    return response;
  }

 private:
  EndpointConfig cfg_;
  std::counting_semaphore<1024> slots_;
};

/// Client for POST /v1/embed.
class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(EndpointConfig cfg, FrameMode mode = FrameMode::ref)
      : cfg_(std::move(cfg)), mode_(mode) {}

  std::string id() const override { return "http:" + cfg_.url; }

  std::vector<Embedding> embed_frames(std::span<const FrameRef> frames) const override {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& f : frames) {
      auto wire = to_wire(f, mode_);
      items.push_back({{"mode", mode_ == FrameMode::bytes ? "b64" : "ref"}, {"data", wire.data}});
    }
    return call(items);
  }

  Embedding embed_query(std::string_view, std::string_view text) const override {
    return call(nlohmann::json::array({{{"mode", "text"}, {"data", std::string(text)}}})).at(0);
  }

 private:
  std::vector<Embedding> call(const nlohmann::json& items) const {
    const auto result =
        detail::post_json(cfg_, "/v1/embed", nlohmann::json{{"items", items}}.dump());
    const auto j = detail::parse_body(result.body, "/v1/embed");
    try {
      const auto dim = j.at("dim").get<std::size_t>();
      auto vectors = j.at("embeddings").get<std::vector<Embedding>>();
      if (vectors.size() != items.size())
        throw Error(ErrorKind::backend, "/v1/embed returned " + std::to_string(vectors.size()) +
                                            " vectors for " + std::to_string(items.size()) +
                                            " items");
      for (const auto& v : vectors) {
        if (v.size() != dim) throw Error(ErrorKind::backend, "/v1/embed dimension mismatch");
        if (std::abs(l2_norm(v) - 1.0) > 1e-4)
          throw Error(ErrorKind::backend, "/v1/embed returned a non-unit vector");
      }
      return vectors;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::backend, std::string("non-conforming /v1/embed reply: ") + e.what());
    }
  }

  EndpointConfig cfg_;
  FrameMode mode_;
};

}  // namespace streamctx
