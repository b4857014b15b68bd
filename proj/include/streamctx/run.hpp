#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "streamctx/backend.hpp"
#include "streamctx/bench.hpp"
#include "streamctx/context.hpp"
#include "streamctx/error.hpp"
#include "streamctx/profiler.hpp"
#include "streamctx/scoring.hpp"
#include "streamctx/timeline.hpp"
#include "streamctx/toml.hpp"

namespace streamctx {

enum class BackendKind { mock, http };
enum class EmbedderKind { automatic, synthetic, hash, http };

struct RunConfig {
  std::string run_id = "run";
  std::string benchmark_path;
  BenchmarkFormat benchmark_format = BenchmarkFormat::native;
  std::string manifest_dir;
  PolicyConfig policy;
  std::vector<std::size_t> sweep_n;
  BackendKind backend = BackendKind::mock;
  std::optional<double> mock_beta;
  EndpointConfig http;
  FrameMode frame_mode = FrameMode::ref;
  int max_new_tokens = 64;
  EmbedderKind embedder = EmbedderKind::automatic;
  std::size_t embedding_dim = 64;
  std::uint64_t seed = 0;
  int concurrency = 1;
  std::string out_dir = "out";
  std::string reference;  // results.json of the reference run
  bool strict = false;
  bool resume = true;
  AccountingModel accounting;
};

// ---------------------------------------------------------------------------
// Config loading: file, then STREAMCTX_* environment, then explicit overrides.

inline nlohmann::json read_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::invalid_config, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::invalid_config, path.string() + ": " + e.what());
    }
  }
  return toml::parse(buf.str());
}

namespace detail {

inline void set_path(nlohmann::json& doc, std::string_view dotted, nlohmann::json value) {
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? dotted.npos : dot - start));
    if (dot == std::string_view::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (!node->is_object()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

inline nlohmann::json scalar_from_text(const std::string& text) {
  try {
    return toml::parse("v = " + text).at("v");
  } catch (const Error&) {
    return text;
  }
}

}  // namespace detail

/// Environment variables and the config keys they override.
inline const std::vector<std::pair<std::string, std::string>>& env_overrides() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"STREAMCTX_RUN_ID", "run_id"},       {"STREAMCTX_SEED", "seed"},
      {"STREAMCTX_OUT", "out"},             {"STREAMCTX_CONCURRENCY", "concurrency"},
      {"STREAMCTX_BACKEND", "backend"},     {"STREAMCTX_POLICY", "policy.kind"},
      {"STREAMCTX_N", "policy.n_recent"},   {"STREAMCTX_BENCHMARK", "benchmark.path"},
      {"STREAMCTX_HTTP_URL", "http.url"},   {"STREAMCTX_REFERENCE", "reference"},
  };
  return table;
}

/// Applies dotted-key overrides ("policy.n_recent" -> 4). Values are parsed as
/// TOML scalars, falling back to strings.
inline void apply_overrides(nlohmann::json& doc, const std::map<std::string, std::string>& overrides) {
  for (const auto& [key, text] : overrides) {
    auto value = detail::scalar_from_text(text);
    if (key == "backend") {
      // An explicit backend choice discards the other backend's table.
      doc.erase(text == "mock" ? "http" : "mock");
    }
    detail::set_path(doc, key, std::move(value));
  }
}

inline void apply_env_overrides(nlohmann::json& doc) {
  std::map<std::string, std::string> overrides;
  for (const auto& [var, key] : env_overrides())
    if (const char* v = std::getenv(var.c_str()); v != nullptr && *v != '\0') overrides[key] = v;
  apply_overrides(doc, overrides);
}

namespace detail {

inline void check_keys(const nlohmann::json& table, const std::string& where,
                       std::initializer_list<std::string_view> allowed) {
  if (!table.is_object()) throw Error(ErrorKind::invalid_config, "'" + where + "' must be a table");
  for (const auto& [k, v] : table.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw Error(ErrorKind::invalid_config, "unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <typename T>
T get_or(const nlohmann::json& table, const char* key, T fallback) {
  if (!table.contains(key)) return fallback;
  try {
    return table.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::invalid_config, std::string("bad value for '") + key + "': " + table.at(key).dump());
  }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& doc) {
  using detail::get_or;
  detail::check_keys(doc, "", {"run_id", "seed", "concurrency", "out", "reference", "strict", "resume",
                               "backend", "benchmark", "policy", "sweep", "mock", "http", "embedder",
                               "accounting", "frame_mode", "max_new_tokens"});
  RunConfig cfg;
  cfg.run_id = get_or<std::string>(doc, "run_id", cfg.run_id);
  cfg.seed = get_or<std::uint64_t>(doc, "seed", cfg.seed);
  cfg.concurrency = get_or<int>(doc, "concurrency", cfg.concurrency);
  cfg.out_dir = get_or<std::string>(doc, "out", cfg.out_dir);
  cfg.reference = get_or<std::string>(doc, "reference", cfg.reference);
  cfg.strict = get_or<bool>(doc, "strict", cfg.strict);
  cfg.resume = get_or<bool>(doc, "resume", cfg.resume);
  cfg.max_new_tokens = get_or<int>(doc, "max_new_tokens", cfg.max_new_tokens);
  const auto mode = get_or<std::string>(doc, "frame_mode", "ref");
  if (mode != "ref" && mode != "b64") throw Error(ErrorKind::invalid_config, "frame_mode must be ref or b64");
  cfg.frame_mode = mode == "b64" ? FrameMode::bytes : FrameMode::ref;
  if (cfg.concurrency < 1) throw Error(ErrorKind::invalid_config, "concurrency must be >= 1");

  if (!doc.contains("benchmark")) throw Error(ErrorKind::invalid_config, "missing [benchmark] table");
  const auto& bench = doc["benchmark"];
  detail::check_keys(bench, "benchmark", {"path", "format", "manifest_dir"});
  cfg.benchmark_path = get_or<std::string>(bench, "path", "");
  if (cfg.benchmark_path.empty()) throw Error(ErrorKind::invalid_config, "benchmark.path is required");
  cfg.benchmark_format = parse_format(get_or<std::string>(bench, "format", "native"));
  cfg.manifest_dir = get_or<std::string>(bench, "manifest_dir", "");

  if (doc.contains("policy")) {
    const auto& p = doc["policy"];
    detail::check_keys(p, "policy", {"kind", "n_recent", "k_retrieved", "chunk_len", "fps",
                                     "retrieved_placement", "index_cache"});
    cfg.policy.kind = parse_policy(get_or<std::string>(p, "kind", "recency"));
    cfg.policy.n_recent = get_or<std::size_t>(p, "n_recent", cfg.policy.n_recent);
    cfg.policy.k_retrieved = get_or<std::size_t>(p, "k_retrieved", cfg.policy.k_retrieved);
    cfg.policy.chunk_len = get_or<std::size_t>(p, "chunk_len", cfg.policy.chunk_len);
    cfg.policy.fps = get_or<double>(p, "fps", cfg.policy.fps);
    const auto placement = get_or<std::string>(p, "retrieved_placement", "before");
    if (placement != "before" && placement != "after")
      throw Error(ErrorKind::invalid_config, "retrieved_placement must be before or after");
    cfg.policy.placement = placement == "after" ? ChunkPlacement::after_recent : ChunkPlacement::before_recent;
    cfg.policy.index_cache = get_or<bool>(p, "index_cache", false);
  }
  validate(cfg.policy);

  if (doc.contains("sweep")) {
    detail::check_keys(doc["sweep"], "sweep", {"n"});
    cfg.sweep_n = get_or<std::vector<std::size_t>>(doc["sweep"], "n", {});
    if (cfg.sweep_n.empty()) throw Error(ErrorKind::invalid_config, "sweep.n must be non-empty");
  }

  const bool has_mock = doc.contains("mock"), has_http = doc.contains("http");
  if (has_mock && has_http)
    throw Error(ErrorKind::invalid_config, "exactly one backend may be configured, found both [mock] and [http]");
  std::string backend = get_or<std::string>(doc, "backend", has_http ? "http" : "mock");
  if (backend != "mock" && backend != "http")
    throw Error(ErrorKind::invalid_config, "backend must be mock or http");
  if ((backend == "mock" && has_http) || (backend == "http" && has_mock))
    throw Error(ErrorKind::invalid_config, "backend = " + backend + " conflicts with the other backend's table");
  cfg.backend = backend == "http" ? BackendKind::http : BackendKind::mock;
  if (has_mock) {
    detail::check_keys(doc["mock"], "mock", {"beta"});
    if (doc["mock"].contains("beta")) cfg.mock_beta = get_or<double>(doc["mock"], "beta", 0.0);
  }
  if (has_http) {
    const auto& h = doc["http"];
    detail::check_keys(h, "http", {"url", "timeout_s", "retries", "max_in_flight"});
    cfg.http.url = get_or<std::string>(h, "url", cfg.http.url);
    cfg.http.timeout_s = get_or<double>(h, "timeout_s", cfg.http.timeout_s);
    cfg.http.retries = get_or<int>(h, "retries", cfg.http.retries);
    cfg.http.max_in_flight = get_or<int>(h, "max_in_flight", cfg.concurrency);
  }

  if (doc.contains("embedder")) {
    const auto& e = doc["embedder"];
    detail::check_keys(e, "embedder", {"kind", "dim"});
    const auto kind = get_or<std::string>(e, "kind", "auto");
    if (kind == "auto") cfg.embedder = EmbedderKind::automatic;
    else if (kind == "synthetic") cfg.embedder = EmbedderKind::synthetic;
    else if (kind == "hash") cfg.embedder = EmbedderKind::hash;
    else if (kind == "http") cfg.embedder = EmbedderKind::http;
    else throw Error(ErrorKind::invalid_config, "unknown embedder '" + kind + "'");
    cfg.embedding_dim = get_or<std::size_t>(e, "dim", cfg.embedding_dim);
  }

  if (doc.contains("accounting")) {
    const auto& a = doc["accounting"];
    detail::check_keys(a, "accounting", {"bytes_per_frame_proxy", "bytes_per_embedding_dim", "fixed_overhead_bytes"});
    cfg.accounting.bytes_per_frame_proxy = get_or<std::uint64_t>(a, "bytes_per_frame_proxy", cfg.accounting.bytes_per_frame_proxy);
    cfg.accounting.bytes_per_embedding_dim = get_or<std::uint64_t>(a, "bytes_per_embedding_dim", cfg.accounting.bytes_per_embedding_dim);
    cfg.accounting.fixed_overhead_bytes = get_or<std::uint64_t>(a, "fixed_overhead_bytes", cfg.accounting.fixed_overhead_bytes);
    if (cfg.accounting.bytes_per_frame_proxy == 0 || cfg.accounting.bytes_per_embedding_dim == 0)
      throw Error(ErrorKind::invalid_config, "accounting sizes must be positive");
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::map<std::string, std::string>& overrides = {}) {
  auto doc = read_config_document(path);
  apply_env_overrides(doc);
  apply_overrides(doc, overrides);
  auto cfg = config_from_json(doc);
  // Relative benchmark paths resolve against the config file.
  if (auto p = std::filesystem::path(cfg.benchmark_path); p.is_relative() && !path.parent_path().empty() &&
                                                          !std::filesystem::exists(p))
    cfg.benchmark_path = (path.parent_path() / p).string();
  return cfg;
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j{{"run_id", cfg.run_id},
                   {"seed", cfg.seed},
                   {"concurrency", cfg.concurrency},
                   {"out", cfg.out_dir},
                   {"strict", cfg.strict},
                   {"resume", cfg.resume},
                   {"backend", cfg.backend == BackendKind::http ? "http" : "mock"},
                   {"frame_mode", cfg.frame_mode == FrameMode::bytes ? "b64" : "ref"},
                   {"max_new_tokens", cfg.max_new_tokens},
                   {"benchmark",
                    {{"path", cfg.benchmark_path},
                     {"format", cfg.benchmark_format == BenchmarkFormat::native ? "native"
                                : cfg.benchmark_format == BenchmarkFormat::ovo  ? "ovo"
                                                                                : "streamingbench"},
                     {"manifest_dir", cfg.manifest_dir}}},
                   {"policy",
                    {{"kind", policy_id(cfg.policy.kind)},
                     {"n_recent", cfg.policy.n_recent},
                     {"k_retrieved", cfg.policy.k_retrieved},
                     {"chunk_len", cfg.policy.chunk_len},
                     {"fps", cfg.policy.fps},
                     {"retrieved_placement", cfg.policy.placement == ChunkPlacement::after_recent ? "after" : "before"},
                     {"index_cache", cfg.policy.index_cache}}},
                   {"embedder",
                    {{"kind", cfg.embedder == EmbedderKind::synthetic ? "synthetic"
                              : cfg.embedder == EmbedderKind::hash    ? "hash"
                              : cfg.embedder == EmbedderKind::http    ? "http"
                                                                      : "auto"},
                     {"dim", cfg.embedding_dim}}},
                   {"accounting",
                    {{"bytes_per_frame_proxy", cfg.accounting.bytes_per_frame_proxy},
                     {"bytes_per_embedding_dim", cfg.accounting.bytes_per_embedding_dim},
                     {"fixed_overhead_bytes", cfg.accounting.fixed_overhead_bytes}}}};
  if (!cfg.reference.empty()) j["reference"] = cfg.reference;
  if (!cfg.sweep_n.empty()) j["sweep"] = {{"n", cfg.sweep_n}};
  if (cfg.backend == BackendKind::mock) {
    j["mock"] = nlohmann::json::object();
    if (cfg.mock_beta) j["mock"]["beta"] = *cfg.mock_beta;
  } else {
    j["http"] = {{"url", cfg.http.url},
                 {"timeout_s", cfg.http.timeout_s},
                 {"retries", cfg.http.retries},
                 {"max_in_flight", cfg.http.max_in_flight}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Run

struct QuestionOutcome {
  std::optional<BackendResponse> response;
  std::string error;
  std::uint64_t observed_frames = 0;
  std::uint64_t context_frames = 0;
  std::uint64_t retained_bytes = 0;
  double latency_ms = 0.0;
  std::string ttft_definition;
  std::string resumed_line;  // original responses.jsonl line of a resumed question
};

struct RunSummary {
  RunResults results;
  std::size_t answered = 0;
  std::size_t failed = 0;
  std::size_t resumed = 0;
  std::vector<EfficiencySample> efficiency;
};

namespace detail {

inline std::string outcome_line(const QuestionRecord& q, const QuestionOutcome& o) {
  if (!o.resumed_line.empty()) return o.resumed_line;
  nlohmann::json j{{"query_id", q.question_id},
                   {"track", q.track},
                   {"gold_option", q.gold_option},
                   {"observed_frames", o.observed_frames},
                   {"context_frames", o.context_frames},
                   {"retained_bytes", o.retained_bytes}};
  if (o.response) j["response"] = response_to_json(*o.response);
  else j["error"] = o.error;
  return j.dump();
}

/// Timelines for every video in the benchmark: a manifest when one is named
/// (or found in manifest_dir), else a fixed-rate grid long enough for the
/// video's latest query.
inline std::map<std::string, StreamTimeline> timelines_for(const BenchmarkSet& set, const RunConfig& cfg) {
  std::map<std::string, double> latest_query;
  for (const auto& q : set.questions)
    latest_query[q.video_id] = std::max(latest_query[q.video_id], q.query_time_s);
  const auto bench_dir = std::filesystem::path(cfg.benchmark_path).parent_path();

  std::map<std::string, StreamTimeline> out;
  for (const auto& [video, latest] : latest_query) {
    std::filesystem::path manifest;
    double duration = latest;
    if (auto it = set.videos.find(video); it != set.videos.end()) {
      duration = it->second.duration_s;
      if (!it->second.manifest.empty()) {
        manifest = it->second.manifest;
        if (manifest.is_relative()) manifest = bench_dir / manifest;
      }
    }
    if (manifest.empty() && !cfg.manifest_dir.empty()) {
      auto candidate = std::filesystem::path(cfg.manifest_dir) / (video + ".json");
      if (std::filesystem::exists(candidate)) manifest = candidate;
    }
    out.emplace(video, manifest.empty() ? sample_timeline(video, duration, cfg.policy.fps)
                                        : load_timeline_manifest(manifest));
  }
  return out;
}

inline std::map<std::string, std::pair<BackendResponse, std::string>> read_completed(
    const std::filesystem::path& path) {
  std::map<std::string, std::pair<BackendResponse, std::string>> done;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.contains("response")) continue;
      const auto& r = j["response"];
      BackendResponse resp;
      resp.query_id = r.at("query_id").get<std::string>();
      resp.answer_text = r.value("answer_text", "");
      if (r.contains("chosen_option") && !r["chosen_option"].is_null()) resp.chosen_option = r["chosen_option"].get<int>();
      if (r.contains("ttft_ms") && !r["ttft_ms"].is_null()) resp.ttft_ms = r["ttft_ms"].get<double>();
      if (r.contains("token_count") && !r["token_count"].is_null()) resp.token_count = r["token_count"].get<int>();
      const auto id = resp.query_id;
      done[id] = {std::move(resp), line};
    } catch (const nlohmann::json::exception&) {
      // A torn final line from an interrupted run; that question is redone.
    }
  }
  return done;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path.string());
  out << text;
}

}  // namespace detail

/// Evaluates every question under the causal protocol, then scores and writes
/// responses.jsonl, results.{json,csv,md}, efficiency.{csv,md} and
/// efficiency_plot.json into the output directory.
///
/// Questions run on a pool of `concurrency` workers. Responses are appended
/// in question order as soon as each one's predecessors are done, so the file
/// is resumable and independent of scheduling.
inline RunSummary run(const RunConfig& cfg) {
  const auto set = load_benchmark(cfg.benchmark_path, cfg.benchmark_format);
  const auto timelines = detail::timelines_for(set, cfg);

  std::unique_ptr<Backend> backend;
  if (cfg.backend == BackendKind::mock) {
    if (!set.grounding)
      throw Error(ErrorKind::invalid_config, "the mock backend needs a benchmark with grounding");
    backend = std::make_unique<MockBackend>(make_mock_backend(set, cfg.seed, cfg.policy.n_recent, cfg.mock_beta));
  } else {
    backend = std::make_unique<HttpBackend>(cfg.http);
  }

  std::unique_ptr<Embedder> embedder;
  if (cfg.policy.kind == PolicyKind::visual_rag) {
    auto kind = cfg.embedder;
    if (kind == EmbedderKind::automatic)
      kind = set.grounding ? EmbedderKind::synthetic
                           : cfg.backend == BackendKind::http ? EmbedderKind::http : EmbedderKind::hash;
    switch (kind) {
      case EmbedderKind::synthetic: embedder = std::make_unique<SyntheticEmbedder>(set, cfg.embedding_dim); break;
      case EmbedderKind::http: embedder = std::make_unique<HttpEmbedder>(cfg.http, cfg.frame_mode); break;
      default: embedder = std::make_unique<HashEmbedder>(cfg.embedding_dim); break;
    }
  }
  IndexCache cache;

  const std::filesystem::path out_dir = cfg.out_dir;
  std::filesystem::create_directories(out_dir);
  const auto jsonl_path = out_dir / "responses.jsonl";
  std::map<std::string, std::pair<BackendResponse, std::string>> completed;
  if (cfg.resume && std::filesystem::exists(jsonl_path)) completed = detail::read_completed(jsonl_path);
  for (auto it = completed.begin(); it != completed.end();) {
    const bool known = std::any_of(set.questions.begin(), set.questions.end(),
                                   [&](const QuestionRecord& q) { return q.question_id == it->first; });
    it = known ? std::next(it) : completed.erase(it);
  }
  // Rewrite the kept prefix of finished questions, then append new ones.
  std::ofstream jsonl(jsonl_path, std::ios::trunc);
  if (!jsonl) throw Error(ErrorKind::invalid_input, "cannot write " + jsonl_path.string());

  const auto n = set.questions.size();
  std::vector<std::optional<QuestionOutcome>> outcomes(n);
  std::size_t resumed = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (auto it = completed.find(set.questions[i].question_id); it != completed.end()) {
      QuestionOutcome o;
      o.response = it->second.first;
      o.resumed_line = it->second.second;
      o.ttft_definition = "resumed";
      outcomes[i] = std::move(o);
      ++resumed;
    }

  std::mutex write_mutex;
  std::size_t next_to_write = 0;
  std::atomic<bool> abort{false};
  std::string abort_message;
  auto flush_ready = [&] {
    while (next_to_write < n && outcomes[next_to_write]) {
      jsonl << detail::outcome_line(set.questions[next_to_write], *outcomes[next_to_write]) << '\n';
      ++next_to_write;
    }
    jsonl.flush();
  };
  {
    std::lock_guard lock(write_mutex);
    flush_ready();
  }

  auto evaluate = [&](const QuestionRecord& q) {
    QuestionOutcome o;
    try {
      const auto& timeline = timelines.at(q.video_id);
      const auto prefix = visible_prefix(timeline, q.query_time_s);
      o.observed_frames = prefix.size();
      RetrievalInputs retrieval;
      Embedding query_embedding;
      if (embedder) {
        query_embedding = embedder->embed_query(q.question_id, q.question);
        retrieval = {embedder.get(), query_embedding, cfg.policy.index_cache ? &cache : nullptr, q.video_id};
      }
      const auto bundle = build_context(prefix, q.query_time_s, cfg.policy, retrieval, cfg.accounting);
      o.context_frames = bundle.budget.total_frames();
      o.retained_bytes = bundle.budget.retained_bytes;
      auto request = make_request(q.question_id, q.question, q.options, bundle, cfg.frame_mode, cfg.max_new_tokens);
      check_causal(request);

      const auto start = std::chrono::steady_clock::now();
      auto response = backend->answer(request);
      const auto stop = std::chrono::steady_clock::now();
      o.latency_ms = response.ttft_ms.value_or(std::chrono::duration<double, std::milli>(stop - start).count());
      o.ttft_definition = response.ttft_ms ? (response.ttft_source.empty() ? std::string(kTtftServer) : response.ttft_source)
                                           : std::string(kTtftDispatchToReturn);
      o.response = std::move(response);
    } catch (const Error& e) {
      o.error = e.what();
    }
    return o;
  };

  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    while (!abort) {
      const auto i = cursor.fetch_add(1);
      if (i >= n) return;
      if (outcomes[i]) continue;
      auto o = evaluate(set.questions[i]);
      std::lock_guard lock(write_mutex);
      if (!o.response && cfg.strict && !abort.exchange(true))
        abort_message = set.questions[i].question_id + ": " + o.error;
      outcomes[i] = std::move(o);
      flush_ready();
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < cfg.concurrency; ++w) pool.emplace_back(worker);
  }
  jsonl.close();
  if (abort) throw Error(ErrorKind::backend, "strict mode: " + abort_message);

  RunSummary summary;
  summary.resumed = resumed;
  std::vector<BackendResponse> responses;
  std::set<std::string> definitions;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = *outcomes[i];
    if (!o.response) {
      ++summary.failed;
      continue;
    }
    ++summary.answered;
    responses.push_back(*o.response);
    if (o.ttft_definition != "resumed") definitions.insert(o.ttft_definition);
    summary.efficiency.push_back({o.observed_frames, o.latency_ms, o.retained_bytes,
                                  std::string(policy_id(cfg.policy.kind)), backend->id(), o.ttft_definition,
                                  o.ttft_definition == "resumed"});
  }

  RunResults& results = summary.results;
  results.run_id = cfg.run_id;
  results.policy = policy_id(cfg.policy.kind);
  results.backend = backend->id();
  results.category_map = set.category_map;
  results.memory_tracks = set.memory_tracks;
  results.per_track = track_accuracy(responses, set, cfg.strict ? MissingPolicy::strict : MissingPolicy::unanswered_is_wrong);
  results.report = category_averages(results.per_track, set.category_map, {set.memory_tracks, false});
  for (const auto& d : definitions) results.ttft_definition += (results.ttft_definition.empty() ? "" : "+") + d;
  if (!cfg.reference.empty()) attach_reference(results, load_results(cfg.reference));

  save_results(out_dir / "results.json", results);
  const std::vector<RunResults> one{results};
  detail::write_text(out_dir / "results.csv", results_csv(one));
  detail::write_text(out_dir / "results.md", results_markdown(one));
  if (std::any_of(summary.efficiency.begin(), summary.efficiency.end(), [](const auto& s) { return !s.failed; })) {
    const auto eff = efficiency_report(summary.efficiency);
    detail::write_text(out_dir / "efficiency.csv", eff.csv);
    detail::write_text(out_dir / "efficiency.md", eff.markdown);
    detail::write_text(out_dir / "efficiency_plot.json", eff.plot_data.dump(2) + "\n");
  }
  detail::write_text(out_dir / "run_config.json", config_to_json(cfg).dump(2) + "\n");
  return summary;
}

struct SweepSummary {
  std::vector<std::pair<std::size_t, RunResults>> runs;
};

/// One run per window size into <out>/n<N>/, plus sweep.csv / sweep.md keyed by N.
inline SweepSummary sweep(const RunConfig& base, std::span<const std::size_t> windows) {
  if (windows.empty()) throw Error(ErrorKind::invalid_config, "sweep needs at least one window size");
  SweepSummary summary;
  for (auto n : windows) {
    auto cfg = base;
    cfg.policy.n_recent = n;
    cfg.run_id = base.run_id + "-n" + std::to_string(n);
    cfg.out_dir = (std::filesystem::path(base.out_dir) / ("n" + std::to_string(n))).string();
    summary.runs.emplace_back(n, run(cfg).results);
  }

  std::vector<RunResults> rows;
  for (const auto& [n, r] : summary.runs) rows.push_back(r);
  auto cell = [](const std::optional<double>& v) { return v ? fixed(*v, 4) : std::string(); };
  std::ostringstream csv, md;
  csv << "n_recent,run_id,rt_avg,bwd_avg,overall_avg,er,bwd_avg_excl_hld\n";
  md << "| N | RT Avg. | Bwd Avg. | Avg. | ER |\n|---|---|---|---|---|\n";
  for (const auto& [n, r] : summary.runs) {
    csv << n << ',' << r.run_id << ',' << cell(r.report.rt_avg) << ',' << cell(r.report.bwd_avg) << ','
        << cell(r.report.overall_avg) << ',' << cell(r.report.er) << ',' << cell(r.report.bwd_avg_excl_hld) << '\n';
    md << "| " << n << " | " << detail::cell(r.report.rt_avg, 1) << " | " << detail::cell(r.report.bwd_avg, 1)
       << " | " << detail::cell(r.report.overall_avg, 2) << " | " << detail::cell(r.report.er, 1) << " |\n";
  }
  std::filesystem::create_directories(base.out_dir);
  detail::write_text(std::filesystem::path(base.out_dir) / "sweep.csv", csv.str());
  detail::write_text(std::filesystem::path(base.out_dir) / "sweep.md", md.str() + "\n" + results_markdown(rows));
  return summary;
}

struct ComparisonReport {
  std::string markdown;
  std::string csv;
  std::string tradeoff_csv;
  std::optional<std::string> ablation_csv;
};

/// Table-style comparison over result files. With a reference, delta_p and
/// delta_m are recomputed against it; with exactly two runs, the second is
/// tabulated against the first.
inline ComparisonReport report(std::vector<RunResults> runs, const std::optional<RunResults>& reference = std::nullopt) {
  if (runs.empty()) throw Error(ErrorKind::invalid_input, "report needs at least one results file");
  if (reference)
    for (auto& r : runs) attach_reference(r, *reference);

  ComparisonReport out;
  out.markdown = results_markdown(runs);
  out.csv = results_csv(runs);
  out.tradeoff_csv = tradeoff_csv(runs);
  if (runs.size() == 2) {
    auto categories = runs[0].category_map;
    categories.insert(runs[1].category_map.begin(), runs[1].category_map.end());
    const auto table = ablation_delta_table(runs[0].per_track, runs[1].per_track, categories, {runs[0].memory_tracks, false});
    out.markdown += "\n" + ablation_markdown(table, runs[0].run_id, runs[1].run_id);
    out.ablation_csv = ablation_csv(table);
  }
  return out;
}

}  // namespace streamctx
