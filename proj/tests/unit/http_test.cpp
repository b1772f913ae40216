#include <chrono>

#include <gtest/gtest.h>

#include "svllm/error.hpp"
#include "svllm/http.hpp"
#include "test_support.hpp"

namespace svllm {
namespace {

TEST(CanonicalUrl, SortsParamsAndRedactsCredentials) {
  EXPECT_EQ(canonical_url("HTTPS://Maps.Example.COM/sv?size=640x640&key=SECRET&location=1,2"),
            "https://maps.example.com/sv?key=REDACTED&location=1,2&size=640x640");
  EXPECT_EQ(canonical_url("http://h/p?b=2&a=1&api_key=x&token=y"),
            "http://h/p?a=1&api_key=REDACTED&b=2&token=REDACTED");
  EXPECT_EQ(canonical_url("http://h/p"), "http://h/p");
}

TEST(RequestFingerprint, IgnoresCredentialValues) {
  HttpRequest a{Provider::Imagery, "GET", "http://h/sv?location=1,2&key=AAA", "", {}};
  HttpRequest b = a;
  b.url = "http://h/sv?key=BBB&location=1,2";
  EXPECT_EQ(request_fingerprint(a), request_fingerprint(b));
  b.url = "http://h/sv?key=BBB&location=1,3";
  EXPECT_NE(request_fingerprint(a), request_fingerprint(b));
  HttpRequest c = a;
  c.method = "POST";
  c.body = "{}";
  EXPECT_NE(request_fingerprint(a), request_fingerprint(c));
}

TEST(UrlEncode, Unreserved) {
  EXPECT_EQ(url_encode("a-b_c.d~e"), "a-b_c.d~e");
  EXPECT_EQ(url_encode("[out:json];"), "%5Bout%3Ajson%5D%3B");
  EXPECT_EQ(url_encode("a b"), "a%20b");
}

TEST(FixtureStore, RoundTripsBinaryWithoutSecrets) {
  testing::TempDir dir;
  FixtureStore store(dir.path());
  HttpRequest req{Provider::Imagery, "GET", "http://h/sv?location=1,2&key=TOPSECRET", "", {{"X-Api-Key", "TOPSECRET"}}};
  HttpResponse resp;
  resp.status = 200;
  resp.content_type = "image/jpeg";
  resp.body = std::string("\xFF\xD8\x00\x01\xFF\xD9", 6);
  store.save(req, resp);
  const auto back = store.load(req);
  ASSERT_TRUE(back);
  EXPECT_EQ(back->status, 200);
  EXPECT_EQ(back->body, resp.body);
  EXPECT_EQ(back->content_type, "image/jpeg");
  const std::string text = testing::read_text(store.path_for(req));
  EXPECT_EQ(text.find("TOPSECRET"), std::string::npos);
  EXPECT_NE(text.find("REDACTED"), std::string::npos);
}

TEST(FixtureTransport, ReplayMissNeverReachesUpstream) {
  testing::TempDir dir;
  auto upstream = testing::refusing_transport();
  FixtureTransport t(ProviderMode::Replay, FixtureStore(dir.path()), upstream);
  HttpRequest req{Provider::Geocode, "GET", "http://h/reverse?lat=1&lon=2", "", {}};
  try {
    t.send(req);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::FixtureMiss);
  }
  EXPECT_EQ(upstream->calls(), 0u);
  EXPECT_EQ(t.upstream_calls(), 0u);
}

TEST(FixtureTransport, RecordThenReplay) {
  testing::TempDir dir;
  auto upstream = std::make_shared<CallbackTransport>([](const HttpRequest& r) {
    HttpResponse resp;
    resp.status = 200;
    resp.body = "echo:" + r.url;
    return resp;
  });
  HttpRequest req{Provider::Places, "GET", "http://h/interpreter?data=x", "", {}};
  {
    FixtureTransport rec(ProviderMode::Record, FixtureStore(dir.path()), upstream);
    EXPECT_EQ(rec.send(req).body, "echo:http://h/interpreter?data=x");
    EXPECT_EQ(rec.upstream_calls(), 1u);
  }
  auto refusing = testing::refusing_transport();
  FixtureTransport replay(ProviderMode::Replay, FixtureStore(dir.path()), refusing);
  EXPECT_EQ(replay.send(req).body, "echo:http://h/interpreter?data=x");
  EXPECT_EQ(replay.fixture_hits(), 1u);
  EXPECT_EQ(refusing->calls(), 0u);
}

TEST(FixtureTransport, RecordSkipsTransportFailures) {
  testing::TempDir dir;
  FixtureStore store(dir.path());
  FixtureTransport rec(ProviderMode::Record, store, testing::refusing_transport());
  HttpRequest req{Provider::Places, "GET", "http://h/x", "", {}};
  EXPECT_EQ(rec.send(req).status, 0);
  EXPECT_FALSE(store.load(req));
}

TEST(RateLimiter, SpacesRequests) {
  RateLimiter limiter(20.0);  // 50 ms apart
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) limiter.acquire();
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_GE(elapsed, std::chrono::milliseconds(140));
}

TEST(RateLimiter, DisabledWhenNonPositive) {
  RateLimiter limiter(0.0);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 100; ++i) limiter.acquire();
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(50));
}

TEST(Files, AtomicWriteCreatesParents) {
  testing::TempDir dir;
  const auto p = dir / "a/b/c.txt";
  write_file_atomic(p, "hello");
  EXPECT_EQ(read_file(p), "hello");
  write_file_atomic(p, "bye");
  EXPECT_EQ(read_file(p), "bye");
}

}  // namespace
}  // namespace svllm
