#include <gtest/gtest.h>

#include <atomic>
#include <future>
#include <random>
#include <set>
#include <thread>

#include "streamctx/backend.hpp"

using namespace streamctx;

namespace {

const std::vector<std::string> kOptions{"A", "B", "C", "D"};

WireFrame frame_at(double t) { return {t, FrameMode::ref, "v@" + std::to_string(t)}; }

BackendRequest request(std::string id, std::vector<double> recent, std::vector<double> retrieved = {},
                       double query_time = 1e9) {
  BackendRequest req;
  req.query_id = std::move(id);
  req.question = "what?";
  req.options = kOptions;
  req.query_time_s = query_time;
  for (double t : recent) req.frames.push_back(frame_at(t));
  if (!retrieved.empty()) {
    WireChunk chunk{retrieved.front(), retrieved.back(), {}};
    for (double t : retrieved) chunk.frames.push_back(frame_at(t));
    req.retrieved.push_back(std::move(chunk));
  }
  return req;
}

std::vector<double> range(double from, double to) {
  std::vector<double> out;
  for (double t = from; t <= to; t += 1.0) out.push_back(t);
  return out;
}

MockBackend mock_for(const std::vector<std::string>& ids, double beta, int gold = 2,
                     std::uint64_t seed = 7, std::size_t window = 4) {
  std::map<std::string, MockBackend::Entry> entries;
  for (const auto& id : ids) entries[id] = {gold, {{{50.0, 60.0}}, beta}};
  return MockBackend(std::move(entries), seed, window);
}

// In-process server on an ephemeral port.
class StubServer {
 public:
  StubServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  EndpointConfig endpoint() const {
    EndpointConfig cfg;
    cfg.url = "http://127.0.0.1:" + std::to_string(port_);
    cfg.timeout_s = 5.0;
    cfg.retries = 0;
    return cfg;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

void serve_echo(httplib::Server& server, double delay_ms = 0.0) {
  server.Post("/v1/answer", [delay_ms](const httplib::Request& rq, httplib::Response& rs) {
    const auto req = request_from_json(nlohmann::json::parse(rq.body));
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms));
    rs.set_content(response_to_json(EchoBackend().answer(req)).dump(), "application/json");
  });
}

}  // namespace

TEST(MockBackend, EvidenceVisibleIsCorrect) {
  auto mock = mock_for({"q"}, 0.0);
  const auto r = mock.answer(request("q", {52, 53, 54, 55}));
  EXPECT_EQ(r.chosen_option, 2);
  EXPECT_EQ(r.answer_text, "C");
  EXPECT_EQ(r.query_id, "q");
}

TEST(MockBackend, EvidenceMissedIsDeterministicWrong) {
  auto mock = mock_for({"q"}, 0.0);
  EXPECT_EQ(mock.answer(request("q", range(90, 99))).chosen_option, 3);
  auto wraps = mock_for({"q"}, 0.0, 3);
  EXPECT_EQ(wraps.answer(request("q", range(90, 99))).chosen_option, 0);
}

TEST(MockBackend, ZeroBetaIgnoresHistory) {
  auto mock = mock_for({"q"}, 0.0);
  const auto plain = mock.answer(request("q", {55, 56, 57, 58}));
  const auto with_history = mock.answer(request("q", {55, 56, 57, 58}, range(0, 39)));
  EXPECT_EQ(plain, with_history);
}

TEST(MockBackend, BetaOneWithHistoryAlwaysWrong) {
  auto mock = mock_for({"q"}, 1.0);
  const auto r = mock.answer(request("q", {55, 56, 57, 58}, range(0, 39)));
  EXPECT_EQ(mock.history_frames(request("q", {55, 56, 57, 58}, range(0, 39))), 40u);
  EXPECT_EQ(r.chosen_option, 3);
}

TEST(MockBackend, HistoryCountsFramesOutsideRecentWindow) {
  auto mock = mock_for({"q"}, 0.0, 2, 7, 4);
  EXPECT_EQ(mock.history_frames(request("q", range(0, 9))), 6u);
  EXPECT_EQ(mock.history_frames(request("q", range(0, 2))), 0u);
  EXPECT_EQ(mock.history_frames(request("q", range(0, 3), range(10, 17))), 8u);
  EXPECT_DOUBLE_EQ(MockBackend::error_probability(0.005, 40), 0.2);
  EXPECT_DOUBLE_EQ(MockBackend::error_probability(0.5, 40), 1.0);
}

TEST(MockBackend, MonteCarloErrorRate) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10000; ++i) ids.push_back("trial-" + std::to_string(i));
  auto mock = mock_for(ids, 0.01);
  int wrong = 0;
  for (const auto& id : ids)
    if (mock.answer(request(id, {55, 56, 57, 58}, range(0, 39))).chosen_option != 2) ++wrong;
  EXPECT_NEAR(wrong / 10000.0, 0.40, 0.02);
}

TEST(MockBackend, DeterministicBytes) {
  auto a = mock_for({"q1", "q2"}, 0.3, 1, 99);
  auto b = mock_for({"q1", "q2"}, 0.3, 1, 99);
  for (const char* id : {"q1", "q2"}) {
    const auto req = request(id, {55, 56, 57, 58}, range(0, 7));
    EXPECT_EQ(response_to_json(a.answer(req)).dump(), response_to_json(b.answer(req)).dump());
    EXPECT_EQ(a.answer(req), a.answer(req));
  }
  EXPECT_NE(mock_for({"q"}, 0, 0, 1).draw("q"), mock_for({"q"}, 0, 0, 2).draw("q"));
}

TEST(MockBackend, MonotoneInEvidenceAtZeroBeta) {
  auto mock = mock_for({"q"}, 0.0);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> frames;
    for (int i = 0; i < 6; ++i) frames.push_back(static_cast<double>(rng() % 120));
    const bool before = mock.answer(request("q", frames)).chosen_option == 2;
    frames.push_back(50.0 + static_cast<double>(rng() % 11));
    const bool after = mock.answer(request("q", frames)).chosen_option == 2;
    EXPECT_TRUE(after);
    if (before) EXPECT_TRUE(after);
  }
}

TEST(MockBackend, UnknownQuestionIsGroundingMissing) {
  auto mock = mock_for({"q"}, 0.0);
  try {
    mock.answer(request("other", {1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::grounding_missing);
  }
}

TEST(Wire, RequestRoundTripAndSchema) {
  auto req = request("q-1", {3, 4}, {0, 1});
  req.placement = ChunkPlacement::after_recent;
  req.max_new_tokens = 16;
  const auto j = request_to_json(req);
  EXPECT_EQ(j.at("frames").size(), 2u);
  EXPECT_EQ(j.at("frames")[0].at("mode"), "ref");
  EXPECT_EQ(j.at("retrieved")[0].at("span"), nlohmann::json::array({0.0, 1.0}));
  EXPECT_EQ(j.at("gen").at("max_new_tokens"), 16);
  EXPECT_FALSE(j.contains("query_time_s"));
  auto back = request_from_json(j);
  back.query_time_s = req.query_time_s;
  EXPECT_EQ(back, req);
  EXPECT_THROW(request_from_json(nlohmann::json{{"question", "x"}}), Error);
}

TEST(Wire, ResponseValidation) {
  const auto req = request("q", {1});
  const auto ok = response_from_json(
      {{"query_id", "q"}, {"answer_text", "B"}, {"chosen_option", 1}, {"ttft_ms", 12.5}, {"token_count", nullptr}},
      req);
  EXPECT_EQ(ok.chosen_option, 1);
  EXPECT_EQ(ok.ttft_ms, 12.5);
  EXPECT_FALSE(ok.token_count);
  for (const auto& bad : {nlohmann::json{{"query_id", "q"}},
                          nlohmann::json{{"query_id", "x"}, {"answer_text", "B"}},
                          nlohmann::json{{"query_id", "q"}, {"answer_text", "B"}, {"chosen_option", 9}},
                          nlohmann::json::array()}) {
    try {
      response_from_json(bad, req);
      FAIL() << bad.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::backend);
    }
  }
}

TEST(Wire, BytesModeEncodesBase64) {
  EXPECT_EQ(detail::base64_encode(""), "");
  EXPECT_EQ(detail::base64_encode("f"), "Zg==");
  EXPECT_EQ(detail::base64_encode("fo"), "Zm8=");
  EXPECT_EQ(detail::base64_encode("foobar"), "Zm9vYmFy");
}

TEST(Wire, MakeRequestFollowsBundle) {
  ContextBundle bundle;
  bundle.query_time_s = 12.0;
  bundle.recent_frames = {{11, 11.0, "v@11", {}}, {12, 12.0, "v@12", {}}};
  Chunk c{0, 0, 1, {{0, 0.0, "v@0", {}}, {1, 1.0, "v@1", {}}}, {}};
  bundle.retrieved_chunks = {c};
  const auto req = make_request("q", "why", kOptions, bundle);
  EXPECT_EQ(req.frame_count(), 4u);
  EXPECT_EQ(req.frames[1].data, "v@12");
  EXPECT_EQ(req.retrieved[0].span_end, 1.0);
  EXPECT_EQ(latest_frame_time(req), 12.0);
  EXPECT_NO_THROW(check_causal(req));
}

TEST(Wire, CausalityCheckedAtTrustBoundary) {
  auto req = request("q", {9, 10, 11}, {}, 10.0);
  try {
    check_causal(req);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
  HttpBackend http(EndpointConfig{"http://127.0.0.1:1", 0.5, 0, 1});
  EXPECT_THROW(http.answer(req), Error);  // rejected before any connection attempt
}

TEST(HttpBackend, EchoRoundTripPreservesAnswer) {
  StubServer stub;
  serve_echo(stub.server());
  HttpBackend http(stub.endpoint());
  auto req = request("q-echo", {1, 2}, {}, 2.0);
  req.question = "Ünïcode question \"quoted\"";
  const auto r = http.answer(req);
  EXPECT_EQ(r.answer_text, req.question);
  EXPECT_EQ(r.query_id, "q-echo");
  EXPECT_EQ(r.ttft_source, "client_first_byte");
  ASSERT_TRUE(r.ttft_ms);
  EXPECT_GE(*r.ttft_ms, 0.0);
}

TEST(HttpBackend, ServerTtftWins) {
  StubServer stub;
  stub.server().Post("/v1/answer", [](const httplib::Request& rq, httplib::Response& rs) {
    const auto j = nlohmann::json::parse(rq.body);
    rs.set_content(nlohmann::json{{"query_id", j["query_id"]}, {"answer_text", "A"}, {"chosen_option", 0},
                                  {"ttft_ms", 123.0}, {"token_count", 3}}
                       .dump(),
                   "application/json");
  });
  HttpBackend http(stub.endpoint());
  const auto r = http.answer(request("q", {1}, {}, 1.0));
  EXPECT_EQ(r.ttft_ms, 123.0);
  EXPECT_EQ(r.ttft_source, "server");
}

TEST(HttpBackend, ConcurrentRequestsMatchedById) {
  StubServer stub;
  serve_echo(stub.server(), 30.0);
  HttpBackend http(stub.endpoint());
  std::vector<std::future<BackendResponse>> futures;
  for (int i = 0; i < 3; ++i)
    futures.push_back(std::async(std::launch::async, [&, i] {
      auto req = request("c" + std::to_string(i), {1}, {}, 1.0);
      req.question = "question " + std::to_string(i);
      return http.answer(req);
    }));
  std::set<std::string> ids;
  for (int i = 0; i < 3; ++i) {
    const auto r = futures[static_cast<std::size_t>(i)].get();
    EXPECT_EQ(r.query_id, "c" + std::to_string(i));
    EXPECT_EQ(r.answer_text, "question " + std::to_string(i));
    ids.insert(r.query_id);
  }
  EXPECT_EQ(ids.size(), 3u);
}

TEST(HttpBackend, SchemaViolationIsBackendError) {
  StubServer stub;
  stub.server().Post("/v1/answer", [](const httplib::Request& rq, httplib::Response& rs) {
    rs.set_content(nlohmann::json{{"query_id", nlohmann::json::parse(rq.body)["query_id"]}}.dump(),
                   "application/json");
  });
  HttpBackend http(stub.endpoint());
  try {
    http.answer(request("q", {1}, {}, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::backend);
  }
}

TEST(HttpBackend, RetriesServerErrorsThenFails) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/v1/answer", [&](const httplib::Request& rq, httplib::Response& rs) {
    if (++calls < 3) {
      rs.status = 503;
      return;
    }
    rs.set_content(response_to_json(EchoBackend().answer(request_from_json(nlohmann::json::parse(rq.body)))).dump(),
                   "application/json");
  });
  auto cfg = stub.endpoint();
  cfg.retries = 2;
  EXPECT_EQ(HttpBackend(cfg).answer(request("q", {1}, {}, 1.0)).query_id, "q");
  EXPECT_EQ(calls, 3);

  calls = -100;
  cfg.retries = 1;
  try {
    HttpBackend(cfg).answer(request("q", {1}, {}, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::backend);
  }
}

TEST(HttpBackend, ClientErrorStatusIsBackendError) {
  StubServer stub;
  stub.server().Post("/v1/answer", [](const httplib::Request&, httplib::Response& rs) { rs.status = 400; });
  EXPECT_THROW(HttpBackend(stub.endpoint()).answer(request("q", {1}, {}, 1.0)), Error);
}

TEST(HttpEmbedder, ValidatesReply) {
  StubServer stub;
  std::atomic<bool> broken{false};
  stub.server().Post("/v1/embed", [&](const httplib::Request& rq, httplib::Response& rs) {
    const auto items = nlohmann::json::parse(rq.body).at("items");
    nlohmann::json vectors = nlohmann::json::array();
    for (std::size_t i = 0; i < items.size(); ++i)
      vectors.push_back(broken ? std::vector<float>{1.0f, 1.0f} : std::vector<float>{0.6f, 0.8f});
    rs.set_content(nlohmann::json{{"dim", 2}, {"normalized", true}, {"embeddings", vectors}}.dump(),
                   "application/json");
  });
  HttpEmbedder embedder(stub.endpoint());
  const std::vector<FrameRef> frames{{0, 0.0, "v@0", {}}, {1, 1.0, "v@1", {}}};
  const auto out = embedder.embed_frames(frames);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_FLOAT_EQ(out[1][1], 0.8f);
  EXPECT_EQ(embedder.embed_query("q", "text").size(), 2u);
  broken = true;
  EXPECT_THROW(embedder.embed_frames(frames), Error);
}
