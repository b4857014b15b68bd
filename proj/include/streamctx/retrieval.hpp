#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamctx/detail/hash.hpp"
#include "streamctx/error.hpp"
#include "streamctx/timeline.hpp"

namespace streamctx {

inline constexpr std::size_t kDefaultChunkLen = 8;
inline constexpr std::size_t kDefaultTopK = 5;

/// A contiguous run of historical frames embedded as one retrieval unit.
struct Chunk {
  std::uint64_t chunk_id = 0;
  std::uint64_t start_index = 0;
  std::uint64_t end_index = 0;  // inclusive
  std::vector<FrameRef> frames;
  Embedding embedding;

  double start_s() const { return frames.empty() ? 0.0 : frames.front().timestamp_s; }
  double end_s() const { return frames.empty() ? 0.0 : frames.back().timestamp_s; }

  bool operator==(const Chunk&) const = default;
};

struct ChunkIndex {
  std::vector<Chunk> chunks;
  std::size_t dim = 0;
  std::string embedder_id;
  std::size_t chunk_len = kDefaultChunkLen;

  bool operator==(const ChunkIndex&) const = default;
};

/// Source of unit-norm embeddings for frames and for questions. Implementations
/// must be safe to call concurrently.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual std::vector<Embedding> embed_frames(std::span<const FrameRef> frames) const = 0;
  virtual Embedding embed_query(std::string_view query_id, std::string_view text) const = 0;
};

/// Pseudo-random unit vectors keyed by the frame locator (or query text).
/// Stands in for a real encoder where only determinism matters.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dim = 16, std::uint64_t salt = 0) : dim_(dim), salt_(salt) {}

  std::string id() const override { return "hash-" + std::to_string(dim_); }

  std::vector<Embedding> embed_frames(std::span<const FrameRef> frames) const override {
    std::vector<Embedding> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(vector_for(f.source));
    return out;
  }

  Embedding embed_query(std::string_view, std::string_view text) const override {
    return vector_for(text);
  }

  Embedding vector_for(std::string_view key) const {
    std::uint64_t state = detail::fnv1a64(key) ^ salt_;
    Embedding v(dim_);
    double norm2 = 0.0;
    for (auto& x : v) {
      state = detail::splitmix64(state);
      x = static_cast<float>(2.0 * detail::to_unit(state) - 1.0);
      norm2 += static_cast<double>(x) * x;
    }
    const double norm = std::sqrt(norm2);
    for (auto& x : v) x = static_cast<float>(x / norm);
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t salt_;
};

inline std::vector<Chunk> chunk_frames(std::span<const FrameRef> frames,
                                       std::size_t chunk_len = kDefaultChunkLen) {
  if (chunk_len < 1) throw Error(ErrorKind::invalid_config, "chunk_len must be >= 1");
  std::vector<Chunk> chunks;
  chunks.reserve((frames.size() + chunk_len - 1) / chunk_len);
  for (std::size_t begin = 0; begin < frames.size(); begin += chunk_len) {
    const std::size_t end = std::min(begin + chunk_len, frames.size());
    Chunk c;
    c.chunk_id = chunks.size();
    c.frames.assign(frames.begin() + static_cast<std::ptrdiff_t>(begin),
                    frames.begin() + static_cast<std::ptrdiff_t>(end));
    c.start_index = c.frames.front().index;
    c.end_index = c.frames.back().index;
    chunks.push_back(std::move(c));
  }
  return chunks;
}

/// Renormalized mean of unit vectors; throws when the mean vanishes.
inline Embedding mean_direction(std::span<const Embedding> vectors, std::size_t dim) {
  std::vector<double> sum(dim, 0.0);
  for (const auto& v : vectors)
    for (std::size_t i = 0; i < dim; ++i) sum[i] += v[i];
  double norm2 = 0.0;
  for (double x : sum) norm2 += x * x;
  const double norm = std::sqrt(norm2);
  if (!(norm > 1e-9 * static_cast<double>(vectors.size())))
    throw Error(ErrorKind::degenerate_embedding, "member embeddings cancel to a zero mean");
  Embedding out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(sum[i] / norm);
  return out;
}

/// Fills in chunk embeddings (mean of member frames, renormalized). Frames that
/// already carry an embedding are not re-embedded.
inline ChunkIndex embed_chunks(std::vector<Chunk> chunks, const Embedder& embedder,
                               std::size_t chunk_len = kDefaultChunkLen) {
  std::vector<FrameRef> pending;
  for (const auto& c : chunks)
    for (const auto& f : c.frames)
      if (!f.embedding) pending.push_back(f);
  std::vector<Embedding> fresh = pending.empty() ? std::vector<Embedding>{}
                                                 : embedder.embed_frames(pending);
  if (fresh.size() != pending.size())
    throw Error(ErrorKind::index_build, "embedder returned " + std::to_string(fresh.size()) +
                                            " vectors for " + std::to_string(pending.size()) +
                                            " frames");

  ChunkIndex index;
  index.embedder_id = embedder.id();
  index.chunk_len = chunk_len;
  std::size_t next = 0;
  std::vector<Embedding> members;
  for (auto& c : chunks) {
    if (c.frames.empty()) throw Error(ErrorKind::index_build, "empty chunk");
    members.clear();
    for (const auto& f : c.frames) members.push_back(f.embedding ? *f.embedding : fresh[next++]);
    for (const auto& v : members) {
      if (index.dim == 0) index.dim = v.size();
      if (v.size() != index.dim || v.empty())
        throw Error(ErrorKind::index_build, "embedding dimension mismatch: expected " +
                                                std::to_string(index.dim) + ", got " +
                                                std::to_string(v.size()));
    }
    c.embedding = mean_direction(members, index.dim);
  }
  std::sort(chunks.begin(), chunks.end(),
            [](const Chunk& a, const Chunk& b) { return a.start_index < b.start_index; });
  for (std::size_t i = 0; i < chunks.size(); ++i) chunks[i].chunk_id = i;
  index.chunks = std::move(chunks);
  return index;
}

inline double cosine_similarity(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size())
    throw Error(ErrorKind::invalid_input, "dimension mismatch: " + std::to_string(u.size()) +
                                              " vs " + std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  if (!(nu > 0.0) || !(nv > 0.0)) throw Error(ErrorKind::invalid_input, "zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

/// The k most similar chunks by exact scan, returned in chronological order.
/// Equal scores prefer the earlier chunk.
inline std::vector<Chunk> top_k(const ChunkIndex& index, std::span<const float> query,
                                std::size_t k = kDefaultTopK) {
  if (k == 0 || index.chunks.empty()) return {};
  if (query.size() != index.dim)
    throw Error(ErrorKind::invalid_input, "query dimension " + std::to_string(query.size()) +
                                              " does not match index dimension " +
                                              std::to_string(index.dim));
  std::vector<double> scores;
  scores.reserve(index.chunks.size());
  for (const auto& c : index.chunks) scores.push_back(cosine_similarity(c.embedding, query));

  std::vector<std::size_t> order(index.chunks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.chunks[a].start_index < index.chunks[b].start_index;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    better);
  order.resize(take);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return index.chunks[a].start_index < index.chunks[b].start_index;
  });

  std::vector<Chunk> out;
  out.reserve(take);
  for (auto i : order) out.push_back(index.chunks[i]);
  return out;
}

// Index file, all integers little-endian:
//   "SCIX" u32 version  u32 dim  u32 chunk_len  u32 id_len  id bytes  u64 n_chunks
//   per chunk: u64 chunk_id  u64 start_index  u64 end_index  f32[dim] embedding
// Frames are not persisted; attach_frames rebinds them from a timeline.

namespace detail {

inline void put_le(std::ostream& out, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(std::istream& in, int bytes) {
  std::uint64_t value = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof())
      throw Error(ErrorKind::invalid_input, "truncated index file");
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return value;
}

}  // namespace detail

inline void write_index(std::ostream& out, const ChunkIndex& index) {
  out.write("SCIX", 4);
  detail::put_le(out, 1, 4);
  detail::put_le(out, index.dim, 4);
  detail::put_le(out, index.chunk_len, 4);
  detail::put_le(out, index.embedder_id.size(), 4);
  out.write(index.embedder_id.data(), static_cast<std::streamsize>(index.embedder_id.size()));
  detail::put_le(out, index.chunks.size(), 8);
  for (const auto& c : index.chunks) {
    if (c.embedding.size() != index.dim)
      throw Error(ErrorKind::index_build, "chunk embedding dimension mismatch");
    detail::put_le(out, c.chunk_id, 8);
    detail::put_le(out, c.start_index, 8);
    detail::put_le(out, c.end_index, 8);
    for (float x : c.embedding) detail::put_le(out, std::bit_cast<std::uint32_t>(x), 4);
  }
}

inline ChunkIndex read_index(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SCIX", 4) != 0)
    throw Error(ErrorKind::invalid_input, "not an index file");
  if (const auto version = detail::get_le(in, 4); version != 1)
    throw Error(ErrorKind::invalid_input, "unsupported index version " + std::to_string(version));
  ChunkIndex index;
  index.dim = detail::get_le(in, 4);
  index.chunk_len = detail::get_le(in, 4);
  index.embedder_id.resize(detail::get_le(in, 4));
  in.read(index.embedder_id.data(), static_cast<std::streamsize>(index.embedder_id.size()));
  if (!in) throw Error(ErrorKind::invalid_input, "truncated index file");
  const auto n = detail::get_le(in, 8);
  for (std::uint64_t i = 0; i < n; ++i) {
    Chunk c;
    c.chunk_id = detail::get_le(in, 8);
    c.start_index = detail::get_le(in, 8);
    c.end_index = detail::get_le(in, 8);
    c.embedding.resize(index.dim);
    for (auto& x : c.embedding)
      x = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(in, 4)));
    index.chunks.push_back(std::move(c));
  }
  return index;
}

inline void save_index(const std::filesystem::path& path, const ChunkIndex& index) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path.string());
  write_index(out, index);
}

inline ChunkIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::invalid_input, "cannot open " + path.string());
  return read_index(in);
}

/// Restores chunk frames from the timeline the index was built over.
inline void attach_frames(ChunkIndex& index, const StreamTimeline& timeline) {
  for (auto& c : index.chunks) {
    c.frames.clear();
    for (const auto& f : timeline.frames)
      if (f.index >= c.start_index && f.index <= c.end_index) c.frames.push_back(f);
  }
}

}  // namespace streamctx
