#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "streamctx/error.hpp"

namespace streamctx {

using Embedding = std::vector<float>;

inline double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * x;
  return std::sqrt(sum);
}

// One sampled frame. Frames are references; pixels are only touched when a
// backend request is serialized.
struct FrameRef {
  std::uint64_t index = 0;
  double timestamp_s = 0.0;
  std::string source;
  std::optional<Embedding> embedding;

  bool operator==(const FrameRef&) const = default;
};

struct StreamTimeline {
  std::string video_id;
  double duration_s = 0.0;
  double fps = 1.0;
  std::vector<FrameRef> frames;

  bool operator==(const StreamTimeline&) const = default;
};

inline std::string default_frame_source(const std::string& video_id, std::uint64_t index) {
  return video_id + "@" + std::to_string(index);
}

/// Fixed-rate frame grid anchored at t = 0: frames at k / fps for
/// k = 0 .. floor(duration_s * fps).
inline StreamTimeline sample_timeline(const std::string& video_id, double duration_s,
                                      double fps = 1.0) {
  if (!(fps > 0.0) || !std::isfinite(fps))
    throw Error(ErrorKind::invalid_config, "fps must be positive, got " + std::to_string(fps));
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s))
    throw Error(ErrorKind::invalid_input,
                "duration must be non-negative, got " + std::to_string(duration_s));

  // The epsilon absorbs products like 0.3 * 10 = 2.9999999999999996.
  auto last = static_cast<std::uint64_t>(std::floor(duration_s * fps + 1e-9));
  while (last > 0 && static_cast<double>(last) / fps > duration_s + 1e-9) --last;

  StreamTimeline timeline{video_id, duration_s, fps, {}};
  timeline.frames.reserve(last + 1);
  for (std::uint64_t k = 0; k <= last; ++k) {
    timeline.frames.push_back(
        FrameRef{k, static_cast<double>(k) / fps, default_frame_source(video_id, k), std::nullopt});
  }
  return timeline;
}

/// Frames observed by time t_query (inclusive), as a view into the timeline.
inline std::span<const FrameRef> visible_prefix(const StreamTimeline& timeline, double t_query) {
  if (!(t_query >= 0.0))
    throw Error(ErrorKind::invalid_input, "query time must be non-negative");
  auto end = std::upper_bound(
      timeline.frames.begin(), timeline.frames.end(), t_query,
      [](double t, const FrameRef& frame) { return t < frame.timestamp_s; });
  return {timeline.frames.data(),
          static_cast<std::size_t>(std::distance(timeline.frames.begin(), end))};
}

enum class FrameMode { ref, bytes };

/// Bytes of the frame file for FrameMode::bytes, the locator itself for
/// FrameMode::ref.
inline std::string resolve_frame(const FrameRef& frame, FrameMode mode) {
  if (mode == FrameMode::ref) return frame.source;
  if (frame.source.empty()) throw Error(ErrorKind::resolution, "empty frame locator");
  std::ifstream in(frame.source, std::ios::binary);
  if (!in) throw Error(ErrorKind::resolution, "cannot open frame '" + frame.source + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Manifest JSON: {video_id, duration_s, fps, frames:[{index, t, source, embedding?}]}

inline nlohmann::json timeline_to_json(const StreamTimeline& timeline) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : timeline.frames) {
    nlohmann::json item{{"index", f.index}, {"t", f.timestamp_s}, {"source", f.source}};
    if (f.embedding) item["embedding"] = *f.embedding;
    frames.push_back(std::move(item));
  }
  return {{"video_id", timeline.video_id},
          {"duration_s", timeline.duration_s},
          {"fps", timeline.fps},
          {"frames", std::move(frames)}};
}

inline StreamTimeline timeline_from_json(const nlohmann::json& j) {
  StreamTimeline timeline;
  try {
    timeline.video_id = j.at("video_id").get<std::string>();
    timeline.duration_s = j.at("duration_s").get<double>();
    timeline.fps = j.value("fps", 1.0);
    if (!(timeline.fps > 0.0)) throw Error(ErrorKind::invalid_config, "manifest fps must be positive");
    if (!(timeline.duration_s >= 0.0))
      throw Error(ErrorKind::invalid_input, "manifest duration must be non-negative");
    for (const auto& item : j.at("frames")) {
      FrameRef f;
      f.index = item.at("index").get<std::uint64_t>();
      f.timestamp_s = item.contains("t") ? item.at("t").get<double>()
                                         : static_cast<double>(f.index) / timeline.fps;
      f.source = item.value("source", default_frame_source(timeline.video_id, f.index));
      if (item.contains("embedding")) f.embedding = item.at("embedding").get<Embedding>();
      timeline.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, std::string("malformed manifest: ") + e.what());
  }

  const auto& frames = timeline.frames;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const std::string where = "manifest frame " + std::to_string(f.index) + ": ";
    if (i > 0 && f.index <= frames[i - 1].index)
      throw Error(ErrorKind::invalid_input, where + "indices must be strictly increasing");
    if (std::abs(f.timestamp_s - static_cast<double>(f.index) / timeline.fps) > 1e-6)
      throw Error(ErrorKind::invalid_input, where + "timestamp off the index/fps grid");
    if (f.timestamp_s > timeline.duration_s + 1e-9)
      throw Error(ErrorKind::invalid_input, where + "timestamp beyond duration");
    if (f.embedding && std::abs(l2_norm(*f.embedding) - 1.0) > 1e-6)
      throw Error(ErrorKind::invalid_input, where + "embedding is not unit-norm");
  }
  return timeline;
}

inline StreamTimeline load_timeline_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::invalid_input, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, path.string() + ": " + e.what());
  }
  return timeline_from_json(j);
}

}  // namespace streamctx
