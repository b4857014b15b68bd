#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "streamctx/backend.hpp"
#include "streamctx/detail/hash.hpp"
#include "streamctx/error.hpp"
#include "streamctx/retrieval.hpp"

namespace streamctx {

enum class Category { real_time, backward, other };

constexpr std::string_view to_string(Category c) noexcept {
  switch (c) {
    case Category::real_time: return "real_time";
    case Category::backward: return "backward";
    case Category::other: return "other";
  }
  return "other";
}

inline Category parse_category(std::string_view s) {
  if (s == "real_time") return Category::real_time;
  if (s == "backward") return Category::backward;
  if (s == "other") return Category::other;
  throw Error(ErrorKind::invalid_input, "unknown category '" + std::string(s) + "'");
}

inline const std::vector<std::string> kOvoRealTimeTracks = {"OCR", "ACR", "ATR", "STU", "FPD", "OJR"};
inline const std::vector<std::string> kOvoBackwardTracks = {"EPM", "ASI", "HLD"};
inline const std::vector<std::string> kOvoForwardTracks = {"REC", "SSR", "CRR"};
inline const std::vector<std::string> kEpisodicTracks = {"EPM", "ASI"};
inline constexpr std::string_view kHallucinationTrack = "HLD";
inline constexpr std::size_t kOvoOfficialQuestions = 1640;
inline constexpr std::size_t kStreamingBenchRealTimeQuestions = 2500;

inline std::map<std::string, Category> ovo_category_map() {
  std::map<std::string, Category> m;
  for (const auto& t : kOvoRealTimeTracks) m[t] = Category::real_time;
  for (const auto& t : kOvoBackwardTracks) m[t] = Category::backward;
  return m;
}

struct QuestionRecord {
  std::string question_id;
  std::string video_id;
  std::string track;
  std::string question;
  std::vector<std::string> options;
  int gold_option = 0;
  double query_time_s = 0.0;

  bool operator==(const QuestionRecord&) const = default;
};

struct VideoInfo {
  double duration_s = 0.0;
  double fps = 1.0;
  std::string manifest;  // optional path to a timeline manifest

  bool operator==(const VideoInfo&) const = default;
};

/// A source item that is deliberately not evaluated (e.g. forward-responding
/// OVO tasks), kept so the loader never drops anything silently.
struct Exclusion {
  std::string question_id;
  std::string reason;
  bool operator==(const Exclusion&) const = default;
};

struct BenchmarkSet {
  std::string name;
  std::map<std::string, Category> category_map;
  std::vector<QuestionRecord> questions;
  std::optional<GroundingMap> grounding;
  std::map<std::string, VideoInfo> videos;
  std::vector<std::string> memory_tracks = kEpisodicTracks;
  std::vector<Exclusion> excluded;

  bool operator==(const BenchmarkSet&) const = default;
};

enum class FindingKind {
  duplicate_id,
  gold_out_of_range,
  unmapped_track,
  beyond_duration,
  negative_time,
  malformed_record,
  size_mismatch,
};

constexpr std::string_view to_string(FindingKind k) noexcept {
  switch (k) {
    case FindingKind::duplicate_id: return "duplicate-id";
    case FindingKind::gold_out_of_range: return "gold-out-of-range";
    case FindingKind::unmapped_track: return "unmapped-track";
    case FindingKind::beyond_duration: return "beyond-duration";
    case FindingKind::negative_time: return "negative-time";
    case FindingKind::malformed_record: return "malformed-record";
    case FindingKind::size_mismatch: return "size-mismatch";
  }
  return "unknown";
}

struct Finding {
  FindingKind kind;
  std::string question_id;
  std::string message;

  std::string describe() const {
    return std::string(to_string(kind)) + " [" + question_id + "]: " + message;
  }
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Finding> findings)
      : Error(ErrorKind::validation, summarize(findings)), findings_(std::move(findings)) {}

  const std::vector<Finding>& findings() const noexcept { return findings_; }

 private:
  static std::string summarize(const std::vector<Finding>& findings) {
    std::string s = std::to_string(findings.size()) + " finding(s)";
    for (const auto& f : findings) s += "\n  " + f.describe();
    return s;
  }

  std::vector<Finding> findings_;
};

/// Report-only consistency check.
inline std::vector<Finding> validate(const BenchmarkSet& set) {
  std::vector<Finding> out;
  std::set<std::string> seen;
  for (const auto& q : set.questions) {
    if (!seen.insert(q.question_id).second)
      out.push_back({FindingKind::duplicate_id, q.question_id, "question id appears more than once"});
    if (q.gold_option < 0 || q.gold_option >= static_cast<int>(q.options.size()))
      out.push_back({FindingKind::gold_out_of_range, q.question_id,
                     "gold option " + std::to_string(q.gold_option) + " with " +
                         std::to_string(q.options.size()) + " options"});
    if (!set.category_map.contains(q.track))
      out.push_back({FindingKind::unmapped_track, q.question_id,
                     "track '" + q.track + "' missing from category map"});
    if (!(q.query_time_s >= 0.0))
      out.push_back({FindingKind::negative_time, q.question_id, "query time must be >= 0"});
    if (auto it = set.videos.find(q.video_id);
        it != set.videos.end() && q.query_time_s > it->second.duration_s)
      out.push_back({FindingKind::beyond_duration, q.question_id,
                     "query at " + std::to_string(q.query_time_s) + " s beyond video duration " +
                         std::to_string(it->second.duration_s) + " s"});
  }
  return out;
}

enum class BenchmarkFormat { native, ovo, streamingbench };

inline BenchmarkFormat parse_format(std::string_view s) {
  if (s == "native") return BenchmarkFormat::native;
  if (s == "ovo") return BenchmarkFormat::ovo;
  if (s == "streamingbench") return BenchmarkFormat::streamingbench;
  throw Error(ErrorKind::invalid_config, "unknown benchmark format '" + std::string(s) + "'");
}

namespace detail {

/// Option index from an integer or an "A".."E"-style letter.
inline int parse_gold(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'Z') return s[0] - 'A';
    if (s.size() == 1 && s[0] >= 'a' && s[0] <= 'z') return s[0] - 'a';
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
      return std::stoi(s);
  }
  throw Error(ErrorKind::invalid_input, "unrecognized gold answer " + v.dump());
}

/// Seconds from a number or an "HH:MM:SS(.fff)" / "MM:SS" string.
inline double parse_time(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    double total = 0.0;
    std::size_t pos = 0;
    int fields = 0;
    while (pos <= s.size()) {
      const auto colon = s.find(':', pos);
      const auto part = s.substr(pos, colon == std::string::npos ? std::string::npos : colon - pos);
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(part, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (part.empty() || used != part.size())
        throw Error(ErrorKind::invalid_input, "malformed time '" + s + "'");
      total = total * 60.0 + value;
      ++fields;
      if (colon == std::string::npos) break;
      pos = colon + 1;
    }
    if (fields > 3) throw Error(ErrorKind::invalid_input, "malformed time '" + s + "'");
    return total;
  }
  throw Error(ErrorKind::invalid_input, "malformed time " + v.dump());
}

inline std::string item_id(const nlohmann::json& item, std::size_t ordinal) {
  for (const char* key : {"question_id", "id"}) {
    if (item.contains(key)) {
      const auto& v = item[key];
      return v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  return "#" + std::to_string(ordinal);
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::invalid_input, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, path.string() + ": " + e.what());
  }
}

// Every item becomes a record, an exclusion or a finding.
class LoadCollector {
 public:
  explicit LoadCollector(BenchmarkSet& set) : set_(set) {}

  template <typename Fn>
  void item(const std::string& id, Fn&& build) {
    try {
      set_.questions.push_back(build());
    } catch (const nlohmann::json::exception& e) {
      findings_.push_back({FindingKind::malformed_record, id, e.what()});
    } catch (const Error& e) {
      findings_.push_back({FindingKind::malformed_record, id, e.what()});
    }
  }

  void finish() {
    auto more = validate(set_);
    findings_.insert(findings_.end(), more.begin(), more.end());
    if (!findings_.empty()) throw ValidationError(std::move(findings_));
  }

 private:
  BenchmarkSet& set_;
  std::vector<Finding> findings_;
};

inline void require_known_track(const BenchmarkSet& set, const std::string& track) {
  if (!set.category_map.contains(track))
    throw Error(ErrorKind::invalid_input, "unknown track '" + track + "'");
}

inline void require_valid_time(double t) {
  if (!(t >= 0.0) || !std::isfinite(t))
    throw Error(ErrorKind::invalid_input, "query time must be a finite value >= 0");
}

}  // namespace detail

// Native JSON:
// {name, category_map:{track:category}, questions:[{question_id, video_id, track,
//  question, options, gold_option, query_time_s}], grounding?:{id:{evidence:[[a,b]], beta}},
//  videos?:{id:{duration_s, fps, manifest?}}, memory_tracks?:[track]}

inline nlohmann::json benchmark_to_json(const BenchmarkSet& set) {
  nlohmann::json categories = nlohmann::json::object();
  for (const auto& [track, c] : set.category_map) categories[track] = to_string(c);
  nlohmann::json questions = nlohmann::json::array();
  for (const auto& q : set.questions)
    questions.push_back({{"question_id", q.question_id},
                         {"video_id", q.video_id},
                         {"track", q.track},
                         {"question", q.question},
                         {"options", q.options},
                         {"gold_option", q.gold_option},
                         {"query_time_s", q.query_time_s}});
  nlohmann::json j{{"name", set.name},
                   {"category_map", std::move(categories)},
                   {"questions", std::move(questions)},
                   {"memory_tracks", set.memory_tracks}};
  if (set.grounding) {
    nlohmann::json g = nlohmann::json::object();
    for (const auto& [id, entry] : *set.grounding) {
      nlohmann::json ev = nlohmann::json::array();
      for (const auto& iv : entry.evidence) ev.push_back({iv.start_s, iv.end_s});
      g[id] = {{"evidence", std::move(ev)}, {"beta", entry.beta}};
    }
    j["grounding"] = std::move(g);
  }
  if (!set.videos.empty()) {
    nlohmann::json v = nlohmann::json::object();
    for (const auto& [id, info] : set.videos) {
      v[id] = {{"duration_s", info.duration_s}, {"fps", info.fps}};
      if (!info.manifest.empty()) v[id]["manifest"] = info.manifest;
    }
    j["videos"] = std::move(v);
  }
  return j;
}

inline BenchmarkSet benchmark_from_json(const nlohmann::json& j) {
  BenchmarkSet set;
  try {
    set.name = j.value("name", "");
    for (const auto& [track, c] : j.at("category_map").items())
      set.category_map[track] = parse_category(c.get<std::string>());
    if (j.contains("memory_tracks")) set.memory_tracks = j["memory_tracks"].get<std::vector<std::string>>();
    if (j.contains("videos"))
      for (const auto& [id, v] : j["videos"].items())
        set.videos[id] = {v.at("duration_s").get<double>(), v.value("fps", 1.0),
                          v.value("manifest", "")};
    if (j.contains("grounding")) {
      GroundingMap g;
      for (const auto& [id, entry] : j["grounding"].items()) {
        Grounding gr;
        gr.beta = entry.value("beta", 0.0);
        for (const auto& iv : entry.at("evidence")) {
          EvidenceInterval e{iv.at(0).get<double>(), iv.at(1).get<double>()};
          if (!(e.start_s <= e.end_s))
            throw Error(ErrorKind::invalid_input, "evidence interval of " + id + " is reversed");
          gr.evidence.push_back(e);
        }
        if (!std::isfinite(gr.beta) || gr.beta < 0.0)
          throw Error(ErrorKind::invalid_input, "beta of " + id + " must be finite and >= 0");
        g[id] = std::move(gr);
      }
      set.grounding = std::move(g);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, std::string("malformed benchmark header: ") + e.what());
  }

  detail::LoadCollector collect(set);
  const auto& items = j.contains("questions") ? j["questions"] : nlohmann::json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    collect.item(detail::item_id(item, i), [&] {
      QuestionRecord q;
      q.question_id = item.at("question_id").get<std::string>();
      q.video_id = item.at("video_id").get<std::string>();
      q.track = item.at("track").get<std::string>();
      detail::require_known_track(set, q.track);
      q.question = item.at("question").get<std::string>();
      q.options = item.at("options").get<std::vector<std::string>>();
      if (!item.contains("gold_option"))
        throw Error(ErrorKind::invalid_input, "missing gold option");
      q.gold_option = detail::parse_gold(item["gold_option"]);
      q.query_time_s = detail::parse_time(item.at("query_time_s"));
      detail::require_valid_time(q.query_time_s);
      return q;
    });
  }
  collect.finish();
  return set;
}

/// OVO-Bench release: a JSON array of {id, video, task, question, options, gt,
/// realtime}. Forward-responding tasks are recorded as exclusions.
inline BenchmarkSet ovo_from_json(const nlohmann::json& j, std::string name = "ovo-bench") {
  BenchmarkSet set;
  set.name = std::move(name);
  set.category_map = ovo_category_map();
  if (!j.is_array()) throw Error(ErrorKind::invalid_input, "OVO file must be a JSON array");

  detail::LoadCollector collect(set);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& item = j[i];
    const auto id = detail::item_id(item, i);
    const auto task = item.value("task", std::string{});
    if (std::find(kOvoForwardTracks.begin(), kOvoForwardTracks.end(), task) !=
        kOvoForwardTracks.end()) {
      set.excluded.push_back({id, "forward active responding task " + task + " is not evaluated"});
      continue;
    }
    collect.item(id, [&] {
      QuestionRecord q;
      q.question_id = id;
      q.video_id = item.at("video").get<std::string>();
      q.track = item.at("task").get<std::string>();
      detail::require_known_track(set, q.track);
      q.question = item.at("question").get<std::string>();
      q.options = item.at("options").get<std::vector<std::string>>();
      if (!item.contains("gt")) throw Error(ErrorKind::invalid_input, "missing gold answer");
      q.gold_option = detail::parse_gold(item["gt"]);
      q.query_time_s = detail::parse_time(item.at("realtime"));
      detail::require_valid_time(q.query_time_s);
      return q;
    });
  }
  collect.finish();
  return set;
}

/// StreamingBench real-time release: a JSON array of videos
/// {video_path, questions:[{task_type, question, time_stamp, options, answer}]}.
/// Each task type becomes a real-time track.
inline BenchmarkSet streamingbench_from_json(const nlohmann::json& j,
                                             std::string name = "streamingbench-realtime") {
  BenchmarkSet set;
  set.name = std::move(name);
  set.memory_tracks.clear();
  if (!j.is_array()) throw Error(ErrorKind::invalid_input, "StreamingBench file must be a JSON array");
  for (const auto& video : j)
    for (const auto& q : video.value("questions", nlohmann::json::array()))
      if (q.contains("task_type") && q["task_type"].is_string())
        set.category_map[q["task_type"].get<std::string>()] = Category::real_time;

  detail::LoadCollector collect(set);
  std::size_t ordinal = 0;
  for (std::size_t v = 0; v < j.size(); ++v) {
    const auto& video = j[v];
    std::string video_id = "video" + std::to_string(v);
    if (video.contains("video_path") && video["video_path"].is_string())
      video_id = std::filesystem::path(video["video_path"].get<std::string>()).stem().string();
    const auto& qs = video.value("questions", nlohmann::json::array());
    for (std::size_t i = 0; i < qs.size(); ++i, ++ordinal) {
      const auto& item = qs[i];
      const auto id = item.contains("question_id") ? detail::item_id(item, ordinal)
                                                   : video_id + "-" + std::to_string(i);
      collect.item(id, [&] {
        QuestionRecord q;
        q.question_id = id;
        q.video_id = video_id;
        q.track = item.at("task_type").get<std::string>();
        q.question = item.at("question").get<std::string>();
        q.options = item.at("options").get<std::vector<std::string>>();
        if (!item.contains("answer")) throw Error(ErrorKind::invalid_input, "missing gold answer");
        q.gold_option = detail::parse_gold(item["answer"]);
        q.query_time_s = detail::parse_time(item.at("time_stamp"));
        detail::require_valid_time(q.query_time_s);
        return q;
      });
    }
  }
  collect.finish();
  return set;
}

inline BenchmarkSet load_benchmark(const std::filesystem::path& path, BenchmarkFormat format) {
  const auto j = detail::read_json(path);
  switch (format) {
    case BenchmarkFormat::native: return benchmark_from_json(j);
    case BenchmarkFormat::ovo: return ovo_from_json(j);
    case BenchmarkFormat::streamingbench: return streamingbench_from_json(j);
  }
  throw Error(ErrorKind::invalid_config, "unknown benchmark format");
}

/// Size check for full official releases; empty when the count matches.
inline std::vector<Finding> check_official_size(const BenchmarkSet& set, BenchmarkFormat format) {
  std::size_t expected = 0, got = set.questions.size();
  if (format == BenchmarkFormat::ovo) {
    expected = kOvoOfficialQuestions;
    got += set.excluded.size();
  } else if (format == BenchmarkFormat::streamingbench) {
    expected = kStreamingBenchRealTimeQuestions;
  }
  if (expected == 0 || got == expected) return {};
  return {{FindingKind::size_mismatch, "*",
           "expected " + std::to_string(expected) + " questions in the official release, found " +
               std::to_string(got)}};
}

inline void save_benchmark(const std::filesystem::path& path, const BenchmarkSet& set) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path.string());
  out << benchmark_to_json(set).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic benchmarks with known grounding

inline constexpr std::string_view kSyntheticRealTimeTrack = "SYN-RT";
inline constexpr std::string_view kSyntheticMemoryTrack = "SYN-MEM";

struct DistanceDistribution {
  enum class Kind { fixed, uniform } kind = Kind::uniform;
  double lo_s = 10.0;  // fixed: the distance
  double hi_s = 100.0;

  static DistanceDistribution fixed(double d) { return {Kind::fixed, d, d}; }
  static DistanceDistribution uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
};

struct SyntheticParams {
  std::size_t n_questions = 100;
  // Distances are drawn on the frame grid: uniform over the integer frame
  // offsets between round(lo*fps) and round(hi*fps).
  DistanceDistribution distance = DistanceDistribution::uniform(10.0, 100.0);
  double recent_window_truth_s = 2.0;
  double stream_len_s = 120.0;
  double fps = 1.0;
  double evidence_len_s = 1.0;
  double beta = 0.005;
  double memory_fraction = 0.5;
  std::size_t n_options = 4;
  bool regenerate_on_overflow = false;
};

/// Two tracks over symbolic streams: SYN-RT questions whose evidence lies in
/// the last recent_window_truth_s seconds before the query, and SYN-MEM
/// questions whose evidence ends exactly d seconds before the query.
inline BenchmarkSet gen_synthetic(std::uint64_t seed, const SyntheticParams& p) {
  if (!(p.fps > 0.0)) throw Error(ErrorKind::invalid_config, "fps must be positive");
  if (p.n_options < 2) throw Error(ErrorKind::invalid_config, "need at least two options");
  if (p.memory_fraction < 0.0 || p.memory_fraction > 1.0)
    throw Error(ErrorKind::invalid_config, "memory_fraction must be in [0, 1]");
  if (p.distance.lo_s < 0.0 || p.distance.hi_s < p.distance.lo_s)
    throw Error(ErrorKind::invalid_config, "distance range must satisfy 0 <= lo <= hi");

  auto frames = [&](double s) { return static_cast<std::int64_t>(std::llround(s * p.fps)); };
  const auto last = static_cast<std::int64_t>(std::floor(p.stream_len_s * p.fps + 1e-9));
  const auto rt_span = frames(p.recent_window_truth_s);
  const auto ev_len = frames(p.evidence_len_s);
  const auto d_lo = frames(p.distance.lo_s), d_hi = frames(p.distance.hi_s);
  if (rt_span > last) throw Error(ErrorKind::invalid_config, "recent window exceeds stream length");

  std::mt19937_64 rng(seed);
  BenchmarkSet set;
  set.name = "synthetic-" + std::to_string(seed);
  set.category_map = {{std::string(kSyntheticRealTimeTrack), Category::real_time},
                      {std::string(kSyntheticMemoryTrack), Category::backward}};
  set.memory_tracks = {std::string(kSyntheticMemoryTrack)};
  set.grounding.emplace();

  for (std::size_t i = 0; i < p.n_questions; ++i) {
    const bool memory = std::floor(static_cast<double>(i + 1) * p.memory_fraction) >
                        std::floor(static_cast<double>(i) * p.memory_fraction);
    QuestionRecord q;
    q.question_id = "syn-" + std::to_string(i);
    q.video_id = q.question_id;
    q.track = memory ? kSyntheticMemoryTrack : kSyntheticRealTimeTrack;

    std::int64_t query = 0, ev_start = 0, ev_end = 0;
    if (memory) {
      std::int64_t distance = d_lo;
      for (int attempt = 0;; ++attempt) {
        distance = p.distance.kind == DistanceDistribution::Kind::fixed
                       ? d_lo
                       : detail::to_range(rng(), d_lo, d_hi);
        if (distance + ev_len <= last) break;
        if (!p.regenerate_on_overflow || attempt >= 1000)
          throw Error(ErrorKind::invalid_config,
                      "planted distance " + std::to_string(distance) +
                          " frames does not fit a stream of " + std::to_string(last + 1) + " frames");
      }
      query = detail::to_range(rng(), distance + ev_len, last);
      ev_end = query - distance;
      ev_start = ev_end - ev_len;
    } else {
      query = detail::to_range(rng(), rt_span, last);
      ev_start = query - rt_span;
      ev_end = query;
    }
    q.gold_option = static_cast<int>(detail::to_range(rng(), 0, static_cast<std::int64_t>(p.n_options) - 1));
    q.query_time_s = static_cast<double>(query) / p.fps;
    q.question = std::string(memory ? "What happened earlier in " : "What is visible now in ") +
                 q.video_id + "?";
    for (std::size_t k = 0; k < p.n_options; ++k) q.options.push_back("choice " + std::to_string(k));

    (*set.grounding)[q.question_id] = Grounding{
        {{static_cast<double>(ev_start) / p.fps, static_cast<double>(ev_end) / p.fps}}, p.beta};
    set.videos[q.video_id] = VideoInfo{p.stream_len_s, p.fps, ""};
    set.questions.push_back(std::move(q));
  }
  return set;
}

/// Embeds synthetic frames so that frames inside a memory question's evidence
/// share that question's topic direction and everything else is noise. Query
/// embeddings are the topic directions.
class SyntheticEmbedder final : public Embedder {
 public:
  explicit SyntheticEmbedder(const BenchmarkSet& set, std::size_t dim = 64)
      : dim_(dim), noise_(dim, 0x5eed), topics_(dim, 0x70b1c) {
    if (!set.grounding) return;
    for (const auto& q : set.questions) {
      auto it = set.grounding->find(q.question_id);
      if (it == set.grounding->end() ||
          std::find(set.memory_tracks.begin(), set.memory_tracks.end(), q.track) ==
              set.memory_tracks.end())
        continue;
      auto& list = by_video_[q.video_id];
      for (const auto& iv : it->second.evidence) list.push_back({q.question_id, iv});
    }
  }

  std::string id() const override { return "synthetic-" + std::to_string(dim_); }

  std::vector<Embedding> embed_frames(std::span<const FrameRef> frames) const override {
    std::vector<Embedding> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
      const auto at = f.source.rfind('@');
      const auto video = at == std::string::npos ? f.source : f.source.substr(0, at);
      const std::string* topic = nullptr;
      if (auto it = by_video_.find(video); it != by_video_.end())
        for (const auto& [qid, iv] : it->second)
          if (iv.contains(f.timestamp_s)) topic = &qid;
      out.push_back(topic ? topic_vector(*topic) : noise_.vector_for(f.source));
    }
    return out;
  }

  Embedding embed_query(std::string_view query_id, std::string_view) const override {
    return topic_vector(query_id);
  }

 private:
  Embedding topic_vector(std::string_view qid) const { return topics_.vector_for(qid); }

  std::size_t dim_;
  HashEmbedder noise_;
  HashEmbedder topics_;
  std::map<std::string, std::vector<std::pair<std::string, EvidenceInterval>>> by_video_;
};

/// Mock oracle over a benchmark that carries grounding. A beta override
/// replaces every per-question beta.
inline MockBackend make_mock_backend(const BenchmarkSet& set, std::uint64_t seed,
                                     std::size_t recent_window,
                                     std::optional<double> beta_override = std::nullopt) {
  std::map<std::string, MockBackend::Entry> entries;
  for (const auto& q : set.questions) {
    if (!set.grounding) break;
    auto it = set.grounding->find(q.question_id);
    if (it == set.grounding->end()) continue;
    MockBackend::Entry e{q.gold_option, it->second};
    if (beta_override) e.grounding.beta = *beta_override;
    entries.emplace(q.question_id, std::move(e));
  }
  return MockBackend(std::move(entries), seed, recent_window);
}

}  // namespace streamctx
