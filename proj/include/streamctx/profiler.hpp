#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "streamctx/backend.hpp"
#include "streamctx/context.hpp"
#include "streamctx/error.hpp"
#include "streamctx/scoring.hpp"
#include "streamctx/timeline.hpp"

namespace streamctx {

// TTFT definitions recorded alongside every number.
inline constexpr std::string_view kTtftServer = "server";
inline constexpr std::string_view kTtftClientFirstByte = "client_first_byte";
inline constexpr std::string_view kTtftDispatchToReturn = "dispatch_to_return";

struct EfficiencySample {
  std::uint64_t observed_frames = 0;
  std::optional<double> ttft_ms;
  std::uint64_t peak_retained_bytes = 0;
  std::string policy_id;
  std::string backend_id;
  std::string ttft_definition;
  bool failed = false;
};

struct TtftMeasurement {
  double median_ms = 0.0;
  std::vector<double> samples_ms;
  std::string definition;
  bool failed = false;
  std::string error;
};

inline double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Dispatch-to-first-byte latency, median over repetitions. A TTFT reported
/// by the backend takes precedence over the locally timed call. Runs are
/// sequential; a backend error marks the measurement failed.
inline TtftMeasurement measure_ttft(Backend& backend, const BackendRequest& request,
                                    int repetitions = 5) {
  TtftMeasurement m;
  for (int i = 0; i < std::max(1, repetitions); ++i) {
    try {
      const auto start = std::chrono::steady_clock::now();
      const auto response = backend.answer(request);
      const auto stop = std::chrono::steady_clock::now();
      if (response.ttft_ms) {
        m.samples_ms.push_back(*response.ttft_ms);
        m.definition = response.ttft_source.empty() ? std::string(kTtftServer) : response.ttft_source;
      } else {
        m.samples_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
        m.definition = kTtftDispatchToReturn;
      }
    } catch (const Error& e) {
      m.failed = true;
      m.error = e.what();
      return m;
    }
  }
  m.median_ms = median(m.samples_ms);
  return m;
}

inline TtftMeasurement measure_ttft(Backend& backend, const ContextBundle& bundle,
                                    const QuestionRecord& question, int repetitions = 5) {
  return measure_ttft(
      backend, make_request(question.question_id, question.question, question.options, bundle),
      repetitions);
}

namespace detail {

inline StreamTimeline curve_timeline(std::uint64_t frames, double fps) {
  if (frames == 0) throw Error(ErrorKind::invalid_input, "stream length must be >= 1 frame");
  return sample_timeline("curve", static_cast<double>(frames - 1) / fps, fps);
}

}  // namespace detail

struct CurveOptions {
  std::size_t embedding_dim = 512;
  bool persistent_index = true;  // visual_rag keeps its history index resident
};

/// Retained-state bytes at the end of streams of each length. recency and
/// keep_all retain their bundle; visual_rag retains its recent window plus,
/// when persistent, one embedding per history chunk.
inline std::vector<EfficiencySample> memory_curve(const PolicyConfig& cfg,
                                                  std::span<const std::uint64_t> stream_lengths,
                                                  const AccountingModel& accounting = {},
                                                  const CurveOptions& options = {}) {
  if (!std::is_sorted(stream_lengths.begin(), stream_lengths.end()))
    throw Error(ErrorKind::invalid_input, "stream lengths must be sorted ascending");
  validate(cfg);
  const HashEmbedder embedder(options.embedding_dim);
  std::vector<EfficiencySample> out;
  for (auto length : stream_lengths) {
    const auto timeline = detail::curve_timeline(length, cfg.fps);
    const auto prefix = std::span<const FrameRef>(timeline.frames);
    const double t = timeline.frames.back().timestamp_s;

    std::uint64_t bytes = 0;
    switch (cfg.kind) {
      case PolicyKind::recency: bytes = recency_window(prefix, t, cfg, accounting).budget.retained_bytes; break;
      case PolicyKind::keep_all: bytes = keep_all(prefix, t, cfg, accounting).budget.retained_bytes; break;
      case PolicyKind::visual_rag: {
        const auto recent = std::min<std::uint64_t>(cfg.n_recent, length);
        bytes = accounting.frames(recent) + accounting.fixed_overhead_bytes;
        if (options.persistent_index && length > recent) {
          const auto index = embed_chunks(chunk_frames(prefix.first(length - recent), cfg.chunk_len),
                                          embedder, cfg.chunk_len);
          bytes += accounting.embeddings(index.chunks.size(), index.dim);
        }
        break;
      }
    }
    out.push_back({length, std::nullopt, bytes, std::string(policy_id(cfg.kind)), "accounting", "", false});
  }
  return out;
}

/// TTFT at each observed-frame count, querying at the last observed frame.
inline std::vector<EfficiencySample> ttft_series(Backend& backend, const PolicyConfig& cfg,
                                                 std::span<const std::uint64_t> observed,
                                                 const RetrievalInputs& retrieval = {},
                                                 const AccountingModel& accounting = {},
                                                 int repetitions = 5) {
  std::vector<EfficiencySample> out;
  std::vector<std::string> options{"choice 0", "choice 1"};
  for (auto frames : observed) {
    const auto timeline = detail::curve_timeline(frames, cfg.fps);
    const double t = timeline.frames.back().timestamp_s;
    const auto bundle = build_context(timeline.frames, t, cfg, retrieval, accounting);
    const auto request = make_request("ttft-" + std::to_string(frames), "What is happening now?",
                                      options, bundle);
    const auto m = measure_ttft(backend, request, repetitions);
    EfficiencySample s{frames, std::nullopt, bundle.budget.retained_bytes,
                       std::string(policy_id(cfg.kind)), backend.id(), m.definition, m.failed};
    if (!m.failed) s.ttft_ms = m.median_ms;
    out.push_back(std::move(s));
  }
  return out;
}

struct EfficiencyReport {
  std::string csv;
  std::string markdown;
  nlohmann::json plot_data;
};

/// CSV, markdown and plot-data renderings. Failed samples are dropped; an
/// empty remainder is an error.
inline EfficiencyReport efficiency_report(std::span<const EfficiencySample> samples) {
  std::vector<EfficiencySample> rows;
  for (const auto& s : samples)
    if (!s.failed) rows.push_back(s);
  if (rows.empty()) throw Error(ErrorKind::profiler, "no samples");
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.policy_id, a.observed_frames, a.backend_id) <
           std::tie(b.policy_id, b.observed_frames, b.backend_id);
  });

  EfficiencyReport report;
  std::ostringstream csv, md;
  csv << "policy,backend,observed_frames,ttft_ms,peak_bytes,ttft_definition\n";
  md << "| Policy | Backend | Observed frames | TTFT (ms) | Peak bytes |\n|---|---|---|---|---|\n";
  std::map<std::pair<std::string, std::string>, nlohmann::json> series;
  for (const auto& s : rows) {
    const auto ttft = s.ttft_ms ? fixed(*s.ttft_ms, 3) : std::string();
    csv << s.policy_id << ',' << s.backend_id << ',' << s.observed_frames << ',' << ttft << ','
        << s.peak_retained_bytes << ',' << s.ttft_definition << '\n';
    md << "| " << s.policy_id << " | " << s.backend_id << " | " << s.observed_frames << " | "
       << (ttft.empty() ? "--" : fixed(*s.ttft_ms, 1)) << " | " << s.peak_retained_bytes << " |\n";
    auto& points = series[{s.policy_id, s.backend_id}];
    points.push_back({s.observed_frames, s.ttft_ms ? nlohmann::json(*s.ttft_ms) : nlohmann::json(nullptr),
                      s.peak_retained_bytes});
  }
  report.csv = csv.str();
  report.markdown = md.str();
  report.plot_data = {{"series", nlohmann::json::array()}};
  for (auto& [key, points] : series)
    report.plot_data["series"].push_back(
        {{"policy", key.first}, {"backend", key.second}, {"points", std::move(points)}});
  return report;
}

}  // namespace streamctx
