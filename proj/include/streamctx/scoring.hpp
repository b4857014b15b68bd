#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "streamctx/backend.hpp"
#include "streamctx/bench.hpp"
#include "streamctx/error.hpp"

namespace streamctx {

struct TrackScore {
  double accuracy = 0.0;  // percent
  std::size_t correct = 0;
  std::size_t total = 0;

  bool operator==(const TrackScore&) const = default;
};

using TrackScores = std::map<std::string, TrackScore>;

/// Scores from published per-track percentages (no counts).
inline TrackScores scores_from_percent(const std::map<std::string, double>& percent) {
  TrackScores out;
  for (const auto& [track, acc] : percent) {
    if (!(acc >= 0.0 && acc <= 100.0))
      throw Error(ErrorKind::scoring, "accuracy of " + track + " outside [0, 100]");
    out[track] = {acc, 0, 0};
  }
  return out;
}

enum class MissingPolicy { strict, unanswered_is_wrong };

/// Exact-match option scoring: correct iff chosen_option == gold_option.
inline TrackScores track_accuracy(std::span<const BackendResponse> responses,
                                  const BenchmarkSet& benchmark,
                                  MissingPolicy missing = MissingPolicy::unanswered_is_wrong) {
  std::map<std::string, const QuestionRecord*> by_id;
  for (const auto& q : benchmark.questions) by_id[q.question_id] = &q;

  std::map<std::string, const BackendResponse*> answered;
  for (const auto& r : responses) {
    if (!by_id.contains(r.query_id))
      throw Error(ErrorKind::scoring, "response for unknown question " + r.query_id);
    if (!answered.emplace(r.query_id, &r).second)
      throw Error(ErrorKind::scoring, "duplicate response for " + r.query_id);
  }

  TrackScores scores;
  for (const auto& q : benchmark.questions) {
    auto& s = scores[q.track];
    ++s.total;
    auto it = answered.find(q.question_id);
    if (it == answered.end()) {
      if (missing == MissingPolicy::strict)
        throw Error(ErrorKind::scoring, "no response for " + q.question_id);
      continue;
    }
    if (it->second->chosen_option && *it->second->chosen_option == q.gold_option) ++s.correct;
  }
  for (auto& [track, s] : scores)
    s.accuracy = 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.total);
  return scores;
}

struct CategoryReport {
  std::optional<double> rt_avg;
  std::optional<double> bwd_avg;
  std::optional<double> overall_avg;
  std::optional<double> er;
  std::optional<double> bwd_avg_excl_hld;

  bool operator==(const CategoryReport&) const = default;
};

struct CategoryOptions {
  std::vector<std::string> memory_tracks = kEpisodicTracks;
  // Require all six real-time and three backward OVO tracks.
  bool strict_ovo = false;
};

namespace detail {

inline std::optional<double> mean_of(const TrackScores& scores, const std::vector<std::string>& tracks) {
  if (tracks.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& t : tracks) sum += scores.at(t).accuracy;
  return sum / static_cast<double>(tracks.size());
}

inline double require(const std::optional<double>& v, const char* what) {
  if (!v) throw Error(ErrorKind::scoring, std::string("report has no ") + what);
  return *v;
}

}  // namespace detail

/// Unweighted track means per category; overall is the mean of the available
/// category means, i.e. (rt + bwd) / 2 on OVO.
inline CategoryReport category_averages(const TrackScores& scores,
                                        const std::map<std::string, Category>& category_map,
                                        const CategoryOptions& options = {}) {
  if (options.strict_ovo) {
    for (const auto* group : {&kOvoRealTimeTracks, &kOvoBackwardTracks})
      for (const auto& t : *group)
        if (!scores.contains(t)) throw Error(ErrorKind::scoring, "missing OVO track " + t);
  }

  std::vector<std::string> rt, bwd, bwd_no_hld, memory;
  for (const auto& [track, s] : scores) {
    auto it = category_map.find(track);
    if (it == category_map.end()) continue;
    if (it->second == Category::real_time) rt.push_back(track);
    if (it->second == Category::backward) {
      bwd.push_back(track);
      if (track != kHallucinationTrack) bwd_no_hld.push_back(track);
    }
  }
  for (const auto& t : options.memory_tracks)
    if (scores.contains(t)) memory.push_back(t);

  CategoryReport r;
  r.rt_avg = detail::mean_of(scores, rt);
  r.bwd_avg = detail::mean_of(scores, bwd);
  r.bwd_avg_excl_hld = detail::mean_of(scores, bwd_no_hld);
  if (memory.size() == options.memory_tracks.size()) r.er = detail::mean_of(scores, memory);
  if (r.rt_avg && r.bwd_avg)
    r.overall_avg = (*r.rt_avg + *r.bwd_avg) / 2.0;
  else
    r.overall_avg = r.rt_avg ? r.rt_avg : r.bwd_avg;
  return r;
}

/// Change in real-time perception, in percentage points.
inline double delta_p(const CategoryReport& method, const CategoryReport& reference) {
  return detail::require(method.rt_avg, "real-time average") -
         detail::require(reference.rt_avg, "real-time average");
}

/// Episodic recall: mean accuracy over the memory tracks (EPM, ASI on OVO).
inline double episodic_recall(const TrackScores& scores,
                              const std::vector<std::string>& memory_tracks = kEpisodicTracks) {
  if (memory_tracks.empty()) throw Error(ErrorKind::scoring, "no memory tracks configured");
  double sum = 0.0;
  for (const auto& t : memory_tracks) {
    auto it = scores.find(t);
    if (it == scores.end()) throw Error(ErrorKind::scoring, "missing memory track " + t);
    sum += it->second.accuracy;
  }
  return sum / static_cast<double>(memory_tracks.size());
}

/// Change in episodic recall, in percentage points.
inline double delta_m(const TrackScores& method, const TrackScores& reference,
                      const std::vector<std::string>& memory_tracks = kEpisodicTracks) {
  return episodic_recall(method, memory_tracks) - episodic_recall(reference, memory_tracks);
}

struct AblationRow {
  std::string track;
  double base = 0.0;
  double variant = 0.0;
  double delta = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // backward tracks first, then real-time, then the rest
  CategoryReport base;
  CategoryReport variant;
  double overall_delta = 0.0;
  std::optional<double> rt_delta;
  std::optional<double> bwd_delta;
  std::optional<double> er_delta;
};

inline AblationTable ablation_delta_table(const TrackScores& base, const TrackScores& variant,
                                          const std::map<std::string, Category>& category_map,
                                          const CategoryOptions& options = {}) {
  for (const auto& [t, s] : base)
    if (!variant.contains(t)) throw Error(ErrorKind::scoring, "variant lacks track " + t);
  for (const auto& [t, s] : variant)
    if (!base.contains(t)) throw Error(ErrorKind::scoring, "base lacks track " + t);

  AblationTable table;
  auto rank = [&](const std::string& t) {
    auto it = category_map.find(t);
    if (it == category_map.end()) return 2;
    return it->second == Category::backward ? 0 : it->second == Category::real_time ? 1 : 2;
  };
  for (const auto& [t, s] : base)
    table.rows.push_back({t, s.accuracy, variant.at(t).accuracy, variant.at(t).accuracy - s.accuracy});
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [&](const AblationRow& a, const AblationRow& b) { return rank(a.track) < rank(b.track); });

  table.base = category_averages(base, category_map, options);
  table.variant = category_averages(variant, category_map, options);
  table.overall_delta = detail::require(table.variant.overall_avg, "overall average") -
                        detail::require(table.base.overall_avg, "overall average");
  auto diff = [](const std::optional<double>& a, const std::optional<double>& b) {
    return a && b ? std::optional<double>(*a - *b) : std::nullopt;
  };
  table.rt_delta = diff(table.variant.rt_avg, table.base.rt_avg);
  table.bwd_delta = diff(table.variant.bwd_avg, table.base.bwd_avg);
  table.er_delta = diff(table.variant.er, table.base.er);
  return table;
}

// ---------------------------------------------------------------------------
// Results file

struct RunResults {
  std::string run_id;
  std::string policy;
  std::string backend;
  TrackScores per_track;
  CategoryReport report;
  std::map<std::string, Category> category_map;
  std::vector<std::string> memory_tracks = kEpisodicTracks;
  std::optional<double> delta_p;
  std::optional<double> delta_m;
  std::optional<std::string> reference_id;
  std::string ttft_definition;
};

/// Fixed-point rendering used for the display fields.
inline std::string fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s = buf;
  if (s == "-0.0" || s == "-0.00") s.erase(0, 1);
  return s;
}

inline std::string signed_fixed(double value, int decimals) {
  auto s = fixed(value, decimals);
  return (s[0] != '-' && std::stod(s) != 0.0) ? "+" + s : s;
}

/// Sets delta_p / delta_m against a reference run.
inline void attach_reference(RunResults& run, const RunResults& reference) {
  run.reference_id = reference.run_id;
  run.delta_p = delta_p(run.report, reference.report);
  std::vector<std::string> memory;
  for (const auto& t : run.memory_tracks)
    if (run.per_track.contains(t) && reference.per_track.contains(t)) memory.push_back(t);
  if (!memory.empty() && memory.size() == run.memory_tracks.size())
    run.delta_m = delta_m(run.per_track, reference.per_track, memory);
}

inline nlohmann::json results_to_json(const RunResults& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json per_track = nlohmann::json::object();
  nlohmann::json display_tracks = nlohmann::json::object();
  for (const auto& [t, s] : r.per_track) {
    per_track[t] = {{"accuracy", s.accuracy}, {"correct", s.correct}, {"total", s.total}};
    display_tracks[t] = fixed(s.accuracy, 1);
  }
  nlohmann::json categories = nlohmann::json::object();
  for (const auto& [t, c] : r.category_map) categories[t] = to_string(c);
  nlohmann::json display{{"per_track", display_tracks}};
  auto show = [&](const char* key, const std::optional<double>& v, int dp, bool sign = false) {
    display[key] = v ? nlohmann::json(sign ? signed_fixed(*v, dp) : fixed(*v, dp)) : nlohmann::json(nullptr);
  };
  show("rt_avg", r.report.rt_avg, 1);
  show("bwd_avg", r.report.bwd_avg, 1);
  show("overall_avg", r.report.overall_avg, 2);
  show("er", r.report.er, 1);
  show("bwd_avg_excl_hld", r.report.bwd_avg_excl_hld, 1);
  show("delta_p", r.delta_p, 1, true);
  show("delta_m", r.delta_m, 1, true);

  return {{"run_id", r.run_id},
          {"policy", r.policy},
          {"backend", r.backend},
          {"per_track", std::move(per_track)},
          {"categories", std::move(categories)},
          {"memory_tracks", r.memory_tracks},
          {"rt_avg", opt(r.report.rt_avg)},
          {"bwd_avg", opt(r.report.bwd_avg)},
          {"overall_avg", opt(r.report.overall_avg)},
          {"er", opt(r.report.er)},
          {"bwd_avg_excl_hld", opt(r.report.bwd_avg_excl_hld)},
          {"delta_p", opt(r.delta_p)},
          {"delta_m", opt(r.delta_m)},
          {"reference_id", r.reference_id ? nlohmann::json(*r.reference_id) : nlohmann::json(nullptr)},
          {"ttft_definition", r.ttft_definition},
          {"display", std::move(display)}};
}

inline RunResults results_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) {
    return j.contains(key) && !j[key].is_null() ? std::optional<double>(j[key].get<double>()) : std::nullopt;
  };
  try {
    RunResults r;
    r.run_id = j.at("run_id").get<std::string>();
    r.policy = j.value("policy", "");
    r.backend = j.value("backend", "");
    for (const auto& [t, s] : j.at("per_track").items()) {
      if (s.is_number())
        r.per_track[t] = {s.get<double>(), 0, 0};
      else
        r.per_track[t] = {s.at("accuracy").get<double>(), s.value("correct", std::size_t{0}),
                          s.value("total", std::size_t{0})};
    }
    if (j.contains("categories"))
      for (const auto& [t, c] : j["categories"].items()) r.category_map[t] = parse_category(c.get<std::string>());
    else
      r.category_map = ovo_category_map();
    if (j.contains("memory_tracks")) r.memory_tracks = j["memory_tracks"].get<std::vector<std::string>>();
    r.report = category_averages(r.per_track, r.category_map, {r.memory_tracks, false});
    r.delta_p = opt("delta_p");
    r.delta_m = opt("delta_m");
    if (j.contains("reference_id") && j["reference_id"].is_string())
      r.reference_id = j["reference_id"].get<std::string>();
    r.ttft_definition = j.value("ttft_definition", "");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, std::string("malformed results file: ") + e.what());
  }
}

inline RunResults load_results(const std::filesystem::path& path) {
  return results_from_json(detail::read_json(path));
}

inline void save_results(const std::filesystem::path& path, const RunResults& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path.string());
  out << results_to_json(r).dump(2) << '\n';
}

namespace detail {

/// Track columns: real-time, then backward, then anything else.
inline std::vector<std::string> ordered_tracks(std::span<const RunResults> runs) {
  std::vector<std::string> rt, bwd, other;
  std::set<std::string> seen;
  auto place = [&](const std::string& t, Category c) {
    if (!seen.insert(t).second) return;
    (c == Category::real_time ? rt : c == Category::backward ? bwd : other).push_back(t);
  };
  for (const auto& order : {kOvoRealTimeTracks, kOvoBackwardTracks})
    for (const auto& t : order)
      for (const auto& r : runs)
        if (r.per_track.contains(t)) place(t, r.category_map.contains(t) ? r.category_map.at(t) : Category::other);
  for (const auto& r : runs)
    for (const auto& [t, s] : r.per_track)
      place(t, r.category_map.contains(t) ? r.category_map.at(t) : Category::other);
  rt.insert(rt.end(), bwd.begin(), bwd.end());
  rt.insert(rt.end(), other.begin(), other.end());
  return rt;
}

inline std::string cell(const std::optional<double>& v, int dp, bool sign = false) {
  return v ? (sign ? signed_fixed(*v, dp) : fixed(*v, dp)) : "--";
}

}  // namespace detail

/// One row per run with per-track columns and category aggregates.
inline std::string results_markdown(std::span<const RunResults> runs) {
  const auto tracks = detail::ordered_tracks(runs);
  std::ostringstream out;
  out << "| Run |";
  for (const auto& t : tracks) out << ' ' << t << " |";
  out << " RT Avg. | Bwd Avg. | Avg. | ER | Bwd w/o HLD | dP | dM |\n|---|";
  for (std::size_t i = 0; i < tracks.size() + 7; ++i) out << "---|";
  out << '\n';
  for (const auto& r : runs) {
    out << "| " << r.run_id << " |";
    for (const auto& t : tracks) {
      auto it = r.per_track.find(t);
      out << ' ' << (it == r.per_track.end() ? std::string("--") : fixed(it->second.accuracy, 1)) << " |";
    }
    out << ' ' << detail::cell(r.report.rt_avg, 1) << " | " << detail::cell(r.report.bwd_avg, 1) << " | "
        << detail::cell(r.report.overall_avg, 2) << " | " << detail::cell(r.report.er, 1) << " | "
        << detail::cell(r.report.bwd_avg_excl_hld, 1) << " | " << detail::cell(r.delta_p, 1, true) << " | "
        << detail::cell(r.delta_m, 1, true) << " |\n";
  }
  return out.str();
}

inline std::string results_csv(std::span<const RunResults> runs) {
  const auto tracks = detail::ordered_tracks(runs);
  auto num = [](const std::optional<double>& v) { return v ? fixed(*v, 4) : std::string(); };
  std::ostringstream out;
  out << "run_id,policy,backend";
  for (const auto& t : tracks) out << ',' << t;
  out << ",rt_avg,bwd_avg,overall_avg,er,bwd_avg_excl_hld,delta_p,delta_m,reference_id\n";
  for (const auto& r : runs) {
    out << r.run_id << ',' << r.policy << ',' << r.backend;
    for (const auto& t : tracks) {
      auto it = r.per_track.find(t);
      out << ',' << (it == r.per_track.end() ? std::string() : fixed(it->second.accuracy, 4));
    }
    out << ',' << num(r.report.rt_avg) << ',' << num(r.report.bwd_avg) << ',' << num(r.report.overall_avg)
        << ',' << num(r.report.er) << ',' << num(r.report.bwd_avg_excl_hld) << ',' << num(r.delta_p) << ','
        << num(r.delta_m) << ',' << r.reference_id.value_or("") << '\n';
  }
  return out.str();
}

/// (delta_p, delta_m) pairs for plotting the trade-off.
inline std::string tradeoff_csv(std::span<const RunResults> runs) {
  std::ostringstream out;
  out << "run_id,reference_id,delta_p,delta_m\n";
  for (const auto& r : runs)
    out << r.run_id << ',' << r.reference_id.value_or("") << ','
        << (r.delta_p ? fixed(*r.delta_p, 4) : "") << ',' << (r.delta_m ? fixed(*r.delta_m, 4) : "") << '\n';
  return out.str();
}

inline std::string ablation_markdown(const AblationTable& t, const std::string& base_name = "Base",
                                     const std::string& variant_name = "Variant") {
  std::ostringstream out;
  out << "| Track | " << base_name << " | " << variant_name << " | Delta Acc. |\n|---|---|---|---|\n";
  for (const auto& row : t.rows)
    out << "| " << row.track << " | " << fixed(row.base, 1) << " | " << fixed(row.variant, 1) << " | "
        << signed_fixed(row.delta, 1) << " |\n";
  out << "| Acc. | " << detail::cell(t.base.overall_avg, 1) << " | " << detail::cell(t.variant.overall_avg, 1)
      << " | " << signed_fixed(t.overall_delta, 1) << " |\n";
  return out.str();
}

inline std::string ablation_csv(const AblationTable& t) {
  std::ostringstream out;
  out << "track,base,variant,delta\n";
  for (const auto& row : t.rows)
    out << row.track << ',' << fixed(row.base, 4) << ',' << fixed(row.variant, 4) << ',' << fixed(row.delta, 4) << '\n';
  out << "overall," << detail::cell(t.base.overall_avg, 4) << ',' << detail::cell(t.variant.overall_avg, 4) << ','
      << fixed(t.overall_delta, 4) << '\n';
  return out.str();
}

}  // namespace streamctx
