#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "streamctx/timeline.hpp"

using namespace streamctx;

TEST(SampleTimeline, OneFpsGridIncludesStart) {
  const auto tl = sample_timeline("v", 9.0, 1.0);
  ASSERT_EQ(tl.frames.size(), 10u);
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_EQ(tl.frames[k].index, k);
    EXPECT_DOUBLE_EQ(tl.frames[k].timestamp_s, static_cast<double>(k));
  }
}

TEST(SampleTimeline, ZeroDurationHasSingleFrame) {
  const auto tl = sample_timeline("v", 0.0, 1.0);
  ASSERT_EQ(tl.frames.size(), 1u);
  EXPECT_EQ(tl.frames[0].timestamp_s, 0.0);
}

TEST(SampleTimeline, FractionalRateMatchesEnumeration) {
  // Enumerate k with k / fps <= duration directly.
  const double duration = 2.5, fps = 2.0;
  std::vector<double> expected;
  for (int k = 0; k / fps <= duration; ++k) expected.push_back(k / fps);
  ASSERT_EQ(expected.size(), 6u);

  const auto tl = sample_timeline("v", duration, fps);
  ASSERT_EQ(tl.frames.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(tl.frames[i].timestamp_s, expected[i]);
}

TEST(SampleTimeline, RoundingDoesNotDropLastFrame) {
  const auto tl = sample_timeline("v", 0.3, 10.0);
  EXPECT_EQ(tl.frames.size(), 4u);
  EXPECT_LE(tl.frames.back().timestamp_s, 0.3);
}

TEST(SampleTimeline, RejectsBadArguments) {
  try {
    sample_timeline("v", 5.0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_config);
  }
  try {
    sample_timeline("v", -1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

TEST(VisiblePrefix, ThresholdIsInclusive) {
  const auto tl = sample_timeline("v", 9.0);
  EXPECT_EQ(visible_prefix(tl, 3.5).size(), 4u);
  EXPECT_EQ(visible_prefix(tl, 100.0).size(), 10u);
  const auto at_zero = visible_prefix(tl, 0.0);
  ASSERT_EQ(at_zero.size(), 1u);
  EXPECT_EQ(at_zero[0].index, 0u);
  EXPECT_EQ(visible_prefix(tl, 3.0).back().timestamp_s, 3.0);
  EXPECT_THROW(visible_prefix(tl, -0.5), Error);
}

TEST(VisiblePrefix, CausalAndMonotoneUnderFuzz) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> duration(0.0, 300.0), rate(0.1, 8.0), when(0.0, 400.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto tl = sample_timeline("v", duration(rng), rate(rng));
    double t1 = when(rng), t2 = when(rng);
    if (t1 > t2) std::swap(t1, t2);
    const auto p1 = visible_prefix(tl, t1);
    const auto p2 = visible_prefix(tl, t2);
    for (const auto& f : p2) ASSERT_LE(f.timestamp_s, t2);
    ASSERT_LE(p1.size(), p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) ASSERT_EQ(p1[i], p2[i]);
    // Nothing visible is left out.
    if (p2.size() < tl.frames.size()) ASSERT_GT(tl.frames[p2.size()].timestamp_s, t2);
  }
}

TEST(ResolveFrame, ReadsBytesOrPassesLocator) {
  const auto path = std::filesystem::temp_directory_path() / "streamctx_frame.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << std::string("\x89PNG\0data", 9);
  }
  FrameRef f{0, 0.0, path.string(), std::nullopt};
  EXPECT_EQ(resolve_frame(f, FrameMode::bytes), std::string("\x89PNG\0data", 9));
  EXPECT_EQ(resolve_frame(f, FrameMode::ref), path.string());
  std::filesystem::remove(path);
  try {
    resolve_frame(f, FrameMode::bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::resolution);
  }
}

TEST(Manifest, RoundTripIsDeterministic) {
  auto tl = sample_timeline("clip", 4.0, 2.0);
  tl.frames[1].embedding = Embedding{0.6f, 0.8f};
  const auto a = timeline_to_json(tl).dump();
  const auto back = timeline_from_json(nlohmann::json::parse(a));
  EXPECT_EQ(back, tl);
  EXPECT_EQ(timeline_to_json(back).dump(), a);
  EXPECT_EQ(timeline_to_json(sample_timeline("clip", 4.0, 2.0)).dump(),
            timeline_to_json(sample_timeline("clip", 4.0, 2.0)).dump());
}

TEST(Manifest, RejectsBrokenInvariants) {
  auto j = timeline_to_json(sample_timeline("clip", 3.0));
  auto unordered = j;
  std::swap(unordered["frames"][0], unordered["frames"][1]);
  EXPECT_THROW(timeline_from_json(unordered), Error);
  auto off_grid = j;
  off_grid["frames"][2]["t"] = 2.5;
  EXPECT_THROW(timeline_from_json(off_grid), Error);
  auto too_late = j;
  too_late["duration_s"] = 2.0;
  EXPECT_THROW(timeline_from_json(too_late), Error);
  auto not_unit = j;
  not_unit["frames"][0]["embedding"] = {1.0, 1.0};
  EXPECT_THROW(timeline_from_json(not_unit), Error);
}
