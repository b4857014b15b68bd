#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "streamctx/error.hpp"
#include "streamctx/retrieval.hpp"
#include "streamctx/timeline.hpp"

namespace streamctx {

enum class PolicyKind { recency, visual_rag, keep_all };

// Stable API strings.
constexpr std::string_view policy_id(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::recency: return "recency";
    case PolicyKind::visual_rag: return "visual_rag";
    case PolicyKind::keep_all: return "keep_all";
  }
  return "recency";
}

inline PolicyKind parse_policy(std::string_view id) {
  if (id == "recency") return PolicyKind::recency;
  if (id == "visual_rag") return PolicyKind::visual_rag;
  if (id == "keep_all") return PolicyKind::keep_all;
  throw Error(ErrorKind::invalid_config, "unknown policy '" + std::string(id) + "'");
}

// Where retrieved chunks go relative to the recent window in a request.
enum class ChunkPlacement { before_recent, after_recent };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::recency;
  std::size_t n_recent = 4;
  std::size_t k_retrieved = kDefaultTopK;
  std::size_t chunk_len = kDefaultChunkLen;
  double fps = 1.0;
  ChunkPlacement placement = ChunkPlacement::before_recent;
  bool index_cache = false;

  /// Upper bound on frames a bundle built under this config may hold.
  std::size_t frame_bound() const {
    switch (kind) {
      case PolicyKind::recency: return n_recent;
      case PolicyKind::visual_rag: return n_recent + k_retrieved * chunk_len;
      case PolicyKind::keep_all: return SIZE_MAX;
    }
    return n_recent;
  }
};

inline void validate(const PolicyConfig& cfg) {
  if (cfg.kind != PolicyKind::keep_all && cfg.n_recent < 1)
    throw Error(ErrorKind::invalid_config, "n_recent must be >= 1");
  if (cfg.chunk_len < 1) throw Error(ErrorKind::invalid_config, "chunk_len must be >= 1");
  if (!(cfg.fps > 0.0)) throw Error(ErrorKind::invalid_config, "fps must be positive");
}

/// Deterministic retained-state cost model. The frame proxy is the raw size
/// of a 448x448 RGB frame.
struct AccountingModel {
  std::uint64_t bytes_per_frame_proxy = 3ULL * 448 * 448;
  std::uint64_t bytes_per_embedding_dim = 4;
  std::uint64_t fixed_overhead_bytes = 0;

  std::uint64_t frames(std::uint64_t count) const { return count * bytes_per_frame_proxy; }
  std::uint64_t embeddings(std::uint64_t count, std::uint64_t dim) const {
    return count * dim * bytes_per_embedding_dim;
  }
};

struct BudgetReport {
  std::uint64_t frame_count = 0;
  std::uint64_t retrieved_frame_count = 0;
  std::uint64_t retained_bytes = 0;

  std::uint64_t total_frames() const { return frame_count + retrieved_frame_count; }
  bool operator==(const BudgetReport&) const = default;
};

/// The bounded working context handed to a backend for one query.
struct ContextBundle {
  std::vector<FrameRef> recent_frames;
  std::vector<Chunk> retrieved_chunks;
  double query_time_s = 0.0;
  std::string policy_id;
  ChunkPlacement placement = ChunkPlacement::before_recent;
  BudgetReport budget;

  bool operator==(const ContextBundle&) const = default;
};

inline BudgetReport context_budget(const ContextBundle& bundle,
                                   const AccountingModel& accounting = {}) {
  BudgetReport report;
  report.frame_count = bundle.recent_frames.size();
  std::uint64_t embedding_values = 0;
  for (const auto& c : bundle.retrieved_chunks) {
    report.retrieved_frame_count += c.frames.size();
    embedding_values += c.embedding.size();
  }
  report.retained_bytes = accounting.frames(report.total_frames()) +
                          embedding_values * accounting.bytes_per_embedding_dim +
                          accounting.fixed_overhead_bytes;
  return report;
}

namespace detail {

inline void require_observation(std::span<const FrameRef> prefix) {
  if (prefix.empty())
    throw Error(ErrorKind::no_observation, "no frame has been observed at query time");
}

inline ContextBundle make_bundle(std::span<const FrameRef> recent, double query_time_s,
                                 PolicyKind kind, ChunkPlacement placement) {
  ContextBundle bundle;
  bundle.recent_frames.assign(recent.begin(), recent.end());
  bundle.query_time_s = query_time_s;
  bundle.policy_id = policy_id(kind);
  bundle.placement = placement;
  return bundle;
}

inline std::span<const FrameRef> last_n(std::span<const FrameRef> prefix, std::size_t n) {
  return prefix.last(std::min(n, prefix.size()));
}

}  // namespace detail

/// The last min(N, |prefix|) frames and nothing else.
inline ContextBundle recency_window(std::span<const FrameRef> prefix, double query_time_s,
                                    const PolicyConfig& cfg, const AccountingModel& accounting = {}) {
  detail::require_observation(prefix);
  if (cfg.n_recent < 1) throw Error(ErrorKind::invalid_config, "n_recent must be >= 1");
  auto bundle = detail::make_bundle(detail::last_n(prefix, cfg.n_recent), query_time_s,
                                    PolicyKind::recency, cfg.placement);
  bundle.budget = context_budget(bundle, accounting);
  return bundle;
}

inline ContextBundle keep_all(std::span<const FrameRef> prefix, double query_time_s,
                              const PolicyConfig& cfg, const AccountingModel& accounting = {}) {
  detail::require_observation(prefix);
  auto bundle = detail::make_bundle(prefix, query_time_s, PolicyKind::keep_all, cfg.placement);
  bundle.budget = context_budget(bundle, accounting);
  return bundle;
}

/// Memoizes embedded chunks of each video's history. Chunks are aligned to the
/// first frame, so a complete chunk never changes as the stream grows; only
/// complete chunks are stored. Reads are concurrent, writes serialize.
class IndexCache {
 public:
  ChunkIndex index_for(const std::string& video_id, std::span<const FrameRef> history,
                       const Embedder& embedder, std::size_t chunk_len) {
    const Key key{video_id, embedder.id(), chunk_len};
    const std::size_t complete = history.size() / chunk_len;

    std::vector<Chunk> cached;
    {
      std::shared_lock lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) cached = it->second;
    }
    std::size_t reusable = 0;
    while (reusable < std::min(complete, cached.size()) &&
           matches(cached[reusable], history, reusable * chunk_len, chunk_len))
      ++reusable;
    cached.resize(reusable);

    auto rest = chunk_frames(history.subspan(reusable * chunk_len), chunk_len);
    auto fresh = rest.empty() ? ChunkIndex{} : embed_chunks(std::move(rest), embedder, chunk_len);

    ChunkIndex index;
    index.embedder_id = embedder.id();
    index.chunk_len = chunk_len;
    index.chunks = std::move(cached);
    for (auto& c : fresh.chunks) index.chunks.push_back(std::move(c));
    for (std::size_t i = 0; i < index.chunks.size(); ++i) index.chunks[i].chunk_id = i;
    if (!index.chunks.empty()) index.dim = index.chunks.front().embedding.size();

    if (complete > reusable) {
      std::unique_lock lock(mutex_);
      auto& slot = entries_[key];
      if (slot.size() < complete)
        slot.assign(index.chunks.begin(),
                    index.chunks.begin() + static_cast<std::ptrdiff_t>(complete));
    }
    return index;
  }

  std::size_t cached_chunks(const std::string& video_id, const std::string& embedder_id,
                            std::size_t chunk_len) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(Key{video_id, embedder_id, chunk_len});
    return it == entries_.end() ? 0 : it->second.size();
  }

  /// Accounted bytes of every cached chunk embedding.
  std::uint64_t retained_bytes(const AccountingModel& accounting = {}) const {
    std::shared_lock lock(mutex_);
    std::uint64_t values = 0;
    for (const auto& [key, chunks] : entries_)
      for (const auto& c : chunks) values += c.embedding.size();
    return values * accounting.bytes_per_embedding_dim;
  }

 private:
  using Key = std::tuple<std::string, std::string, std::size_t>;

  static bool matches(const Chunk& c, std::span<const FrameRef> history, std::size_t offset,
                      std::size_t chunk_len) {
    return c.frames.size() == chunk_len && c.start_index == history[offset].index &&
           c.end_index == history[offset + chunk_len - 1].index;
  }

  mutable std::shared_mutex mutex_;
  std::map<Key, std::vector<Chunk>> entries_;
};

struct RetrievalInputs {
  const Embedder* embedder = nullptr;
  std::span<const float> query_embedding;
  IndexCache* cache = nullptr;
  std::string video_id;  // cache key
};

/// Recent window plus the top-k chunks of the older history. History excludes
/// the recent window; with no history the result is the recent window alone.
inline ContextBundle visual_rag(std::span<const FrameRef> prefix, double query_time_s,
                                const PolicyConfig& cfg, const RetrievalInputs& retrieval,
                                const AccountingModel& accounting = {}) {
  detail::require_observation(prefix);
  validate(cfg);
  auto recent = detail::last_n(prefix, cfg.n_recent);
  auto bundle = detail::make_bundle(recent, query_time_s, PolicyKind::visual_rag, cfg.placement);

  auto history = prefix.first(prefix.size() - recent.size());
  if (!history.empty() && cfg.k_retrieved > 0) {
    if (retrieval.embedder == nullptr)
      throw Error(ErrorKind::invalid_config, "visual_rag requires an embedder");
    const ChunkIndex index =
        retrieval.cache != nullptr
            ? retrieval.cache->index_for(retrieval.video_id, history, *retrieval.embedder,
                                         cfg.chunk_len)
            : embed_chunks(chunk_frames(history, cfg.chunk_len), *retrieval.embedder,
                           cfg.chunk_len);
    bundle.retrieved_chunks = top_k(index, retrieval.query_embedding, cfg.k_retrieved);
  }
  bundle.budget = context_budget(bundle, accounting);
  return bundle;
}

inline ContextBundle build_context(std::span<const FrameRef> prefix, double query_time_s,
                                   const PolicyConfig& cfg, const RetrievalInputs& retrieval = {},
                                   const AccountingModel& accounting = {}) {
  switch (cfg.kind) {
    case PolicyKind::recency: return recency_window(prefix, query_time_s, cfg, accounting);
    case PolicyKind::visual_rag: return visual_rag(prefix, query_time_s, cfg, retrieval, accounting);
    case PolicyKind::keep_all: return keep_all(prefix, query_time_s, cfg, accounting);
  }
  throw Error(ErrorKind::invalid_config, "unknown policy kind");
}

}  // namespace streamctx
