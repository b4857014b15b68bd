#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "streamctx/context.hpp"

using namespace streamctx;

namespace {

PolicyConfig recency(std::size_t n) {
  PolicyConfig cfg;
  cfg.kind = PolicyKind::recency;
  cfg.n_recent = n;
  return cfg;
}

PolicyConfig rag(std::size_t n, std::size_t k, std::size_t len) {
  PolicyConfig cfg;
  cfg.kind = PolicyKind::visual_rag;
  cfg.n_recent = n;
  cfg.k_retrieved = k;
  cfg.chunk_len = len;
  return cfg;
}

// Embeds one planted chunk (frames [start, start+len)) along e0 and every
// other frame along some other basis axis.
class PlantedEmbedder final : public Embedder {
 public:
  PlantedEmbedder(std::size_t dim, std::uint64_t start, std::uint64_t len) : dim_(dim), start_(start), len_(len) {}
  std::string id() const override { return "planted"; }
  std::vector<Embedding> embed_frames(std::span<const FrameRef> frames) const override {
    std::vector<Embedding> out;
    for (const auto& f : frames) {
      Embedding e(dim_, 0.0f);
      const bool planted = f.index >= start_ && f.index < start_ + len_;
      e[planted ? 0 : 1 + (f.index / len_) % (dim_ - 1)] = 1.0f;
      out.push_back(e);
    }
    return out;
  }
  Embedding embed_query(std::string_view, std::string_view) const override {
    Embedding e(dim_, 0.0f);
    e[0] = 1.0f;
    return e;
  }

 private:
  std::size_t dim_;
  std::uint64_t start_, len_;
};

}  // namespace

TEST(RecencyWindow, SuffixOfPrefix) {
  const auto tl = sample_timeline("v", 9.0);
  const auto b = recency_window(tl.frames, 9.0, recency(4));
  ASSERT_EQ(b.recent_frames.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.recent_frames[i].timestamp_s, 6.0 + i);
  EXPECT_TRUE(b.retrieved_chunks.empty());
  EXPECT_EQ(b.policy_id, "recency");
  EXPECT_EQ(b.budget.frame_count, 4u);
  EXPECT_EQ(b.budget.retrieved_frame_count, 0u);
  EXPECT_EQ(b.budget.retained_bytes, 4u * 602112u);
}

TEST(RecencyWindow, ShortStreamClampsAndEmptyFails) {
  const auto tl = sample_timeline("v", 1.0);
  EXPECT_EQ(recency_window(tl.frames, 1.0, recency(4)).recent_frames.size(), 2u);
  try {
    recency_window({}, 0.0, recency(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::no_observation);
  }
}

TEST(RecencyWindow, MainTableWindowsNest) {
  const auto tl = sample_timeline("v", 50.0);
  const auto prefix = visible_prefix(tl, 37.0);
  auto previous = recency_window(prefix, 37.0, recency(2)).recent_frames;
  for (std::size_t n : {4u, 8u, 16u}) {
    const auto wider = recency_window(prefix, 37.0, recency(n)).recent_frames;
    ASSERT_EQ(wider.size(), n);
    EXPECT_TRUE(std::equal(previous.begin(), previous.end(), wider.end() - static_cast<long>(previous.size())));
    EXPECT_EQ(wider.back().timestamp_s, 37.0);
    previous = wider;
  }
}

TEST(KeepAll, KeepsEverything) {
  const auto tl = sample_timeline("v", 9.0);
  PolicyConfig cfg;
  cfg.kind = PolicyKind::keep_all;
  EXPECT_EQ(keep_all(tl.frames, 9.0, cfg).recent_frames.size(), 10u);
  EXPECT_THROW(keep_all({}, 0.0, cfg), Error);
  const auto big = sample_timeline("v", 255.0);
  EXPECT_EQ(keep_all(big.frames, 255.0, cfg).budget.frame_count, 256u);
}

TEST(VisualRag, BudgetArithmetic) {
  const auto tl = sample_timeline("v", 99.0);
  const HashEmbedder embedder(16);
  const auto q = embedder.embed_query("q", "what happened");
  const auto b = visual_rag(tl.frames, 99.0, rag(4, 5, 8), {&embedder, q, nullptr, "v"});
  ASSERT_EQ(b.recent_frames.size(), 4u);
  EXPECT_EQ(b.recent_frames.front().index, 96u);
  ASSERT_EQ(b.retrieved_chunks.size(), 5u);
  for (std::size_t i = 0; i < b.retrieved_chunks.size(); ++i) {
    const auto& c = b.retrieved_chunks[i];
    EXPECT_LE(c.end_index, 95u);
    EXPECT_EQ(c.frames.size(), 8u);
    if (i > 0) EXPECT_LT(b.retrieved_chunks[i - 1].start_index, c.start_index);
  }
  EXPECT_EQ(b.budget.frame_count, 4u);
  EXPECT_EQ(b.budget.retrieved_frame_count, 40u);
  EXPECT_EQ(b.budget.retained_bytes, 44u * 602112u + 5u * 16u * 4u);
}

TEST(VisualRag, NoHistoryMeansRecencyOnly) {
  const auto tl = sample_timeline("v", 3.0);
  const HashEmbedder embedder(16);
  const auto q = embedder.embed_query("q", "x");
  const auto b = visual_rag(tl.frames, 3.0, rag(4, 5, 8), {&embedder, q, nullptr, "v"});
  EXPECT_EQ(b.recent_frames.size(), 4u);
  EXPECT_TRUE(b.retrieved_chunks.empty());
  EXPECT_EQ(b.policy_id, "visual_rag");
}

TEST(VisualRag, RetrievesPlantedChunk) {
  const auto tl = sample_timeline("v", 99.0);
  const PlantedEmbedder embedder(12, 40, 8);
  const auto q = embedder.embed_query("", "");

  // Oracle: score every history chunk by brute force and confirm chunk 5 is
  // the unique maximizer.
  const auto history = std::span(tl.frames).first(96);
  const auto index = embed_chunks(chunk_frames(history, 8), embedder, 8);
  std::size_t best = 0, best_count = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < index.chunks.size(); ++i) {
    const double s = cosine_similarity(index.chunks[i].embedding, q);
    if (s > best_score) {
      best_score = s;
      best = i;
      best_count = 1;
    } else if (s == best_score) {
      ++best_count;
    }
  }
  ASSERT_EQ(best, 5u);
  ASSERT_EQ(best_count, 1u);

  const auto b = visual_rag(tl.frames, 99.0, rag(4, 1, 8), {&embedder, q, nullptr, "v"});
  ASSERT_EQ(b.retrieved_chunks.size(), 1u);
  EXPECT_EQ(b.retrieved_chunks[0].start_index, 40u);
  EXPECT_EQ(b.retrieved_chunks[0].end_index, 47u);
}

TEST(VisualRag, RequiresEmbedderWhenHistoryExists) {
  const auto tl = sample_timeline("v", 20.0);
  EXPECT_THROW(visual_rag(tl.frames, 20.0, rag(4, 5, 8), {}), Error);
}

TEST(Policies, BoundedBudgetAndCausalityProperty) {
  std::mt19937_64 rng(77);
  const HashEmbedder embedder(8);
  std::vector<double> durations{0, 1, 3, 7, 31, 250, 1000, 5000};
  for (int i = 0; i < 20; ++i) durations.push_back(static_cast<double>(rng() % 600));
  durations.push_back(99999);  // 10^5 frames
  for (double d : durations) {
    const auto tl = sample_timeline("v", d);
    const double t = static_cast<double>(rng() % static_cast<std::uint64_t>(d + 1)) + 0.5;
    const auto prefix = visible_prefix(tl, t);
    const std::size_t n = 1 + rng() % 16, k = rng() % 7, len = 1 + rng() % 10;
    const auto q = embedder.embed_query("q", std::to_string(d));

    const auto r = recency_window(prefix, t, recency(n));
    EXPECT_LE(r.budget.total_frames(), n);
    const auto v = visual_rag(prefix, t, rag(n, k, len), {&embedder, q, nullptr, "v"});
    EXPECT_LE(v.budget.total_frames(), n + k * len);
    EXPECT_LE(v.retrieved_chunks.size(), k);
    for (const auto& c : v.retrieved_chunks) {
      EXPECT_LT(c.end_index, v.recent_frames.front().index);  // disjoint from the window
      for (const auto& f : c.frames) EXPECT_LE(f.timestamp_s, t);
    }
    for (const auto& f : v.recent_frames) EXPECT_LE(f.timestamp_s, t);
    EXPECT_EQ(v.recent_frames.back().index, prefix.back().index);
  }
}

TEST(Policies, BuildIsStateless) {
  const auto tl = sample_timeline("v", 60.0);
  const auto copy = tl;
  const HashEmbedder embedder(8);
  const auto q = embedder.embed_query("q", "x");
  const auto a = build_context(tl.frames, 60.0, rag(4, 3, 8), {&embedder, q, nullptr, "v"});
  const auto b = build_context(tl.frames, 60.0, rag(4, 3, 8), {&embedder, q, nullptr, "v"});
  EXPECT_EQ(a, b);
  EXPECT_EQ(tl, copy);
}

TEST(IndexCache, MatchesFreshBuildAsStreamGrows) {
  const auto tl = sample_timeline("v", 200.0);
  const HashEmbedder embedder(8);
  const auto q = embedder.embed_query("q", "x");
  IndexCache cache;
  for (double t = 0.0; t <= 200.0; t += 7.0) {
    const auto prefix = visible_prefix(tl, t);
    const auto fresh = visual_rag(prefix, t, rag(4, 5, 8), {&embedder, q, nullptr, "v"});
    const auto cached = visual_rag(prefix, t, rag(4, 5, 8), {&embedder, q, &cache, "v"});
    ASSERT_EQ(fresh, cached) << "t=" << t;
  }
  EXPECT_EQ(cache.cached_chunks("v", embedder.id(), 8), (201u - 4u) / 8u);
  EXPECT_EQ(cache.retained_bytes(), cache.cached_chunks("v", embedder.id(), 8) * 8u * 4u);
}

TEST(IndexCache, ConcurrentReadersAgree) {
  const auto tl = sample_timeline("v", 300.0);
  const HashEmbedder embedder(8);
  const auto q = embedder.embed_query("q", "x");
  const auto expected = visual_rag(tl.frames, 300.0, rag(4, 5, 8), {&embedder, q, nullptr, "v"});
  IndexCache cache;
  std::vector<std::jthread> pool;
  std::atomic<int> mismatches{0};
  for (int w = 0; w < 4; ++w)
    pool.emplace_back([&] {
      for (int i = 0; i < 10; ++i)
        if (visual_rag(tl.frames, 300.0, rag(4, 5, 8), {&embedder, q, &cache, "v"}) != expected) ++mismatches;
    });
  pool.clear();
  EXPECT_EQ(mismatches, 0);
}

TEST(PolicyConfig, ValidationAndIds) {
  EXPECT_EQ(parse_policy("visual_rag"), PolicyKind::visual_rag);
  EXPECT_EQ(policy_id(PolicyKind::keep_all), "keep_all");
  EXPECT_THROW(parse_policy("slidingwindow"), Error);
  PolicyConfig bad = recency(0);
  EXPECT_THROW(validate(bad), Error);
  bad = rag(4, 5, 0);
  EXPECT_THROW(validate(bad), Error);
  EXPECT_EQ(rag(4, 5, 8).frame_bound(), 44u);
}
