#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace svllm {

/// External service a request is addressed to; selects the rate limiter.
enum class Provider { Geocode, Places, Imagery, Chat };

std::string_view to_string(Provider provider) noexcept;

enum class ProviderMode { Live, Replay, Record };

std::string_view to_string(ProviderMode mode) noexcept;
std::optional<ProviderMode> parse_provider_mode(std::string_view text) noexcept;

struct HttpRequest {
  Provider provider = Provider::Geocode;
  std::string method = "GET";
  std::string url;
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;  // never recorded
};

/// status == 0 means the request never produced an HTTP response (connect
/// failure, timeout); `error` then describes the transport failure.
struct HttpResponse {
  int status = 0;
  std::string body;
  std::string content_type;
  std::string error;
  bool timed_out = false;

  bool ok() const noexcept { return status >= 200 && status < 300; }
  bool retryable() const noexcept { return status == 0 || status == 429 || status >= 500; }
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// Percent-encodes everything outside the RFC 3986 unreserved set.
std::string url_encode(std::string_view text);

/// Lowercased scheme/host, query parameters sorted by (name, value), and
/// credential parameters (key, api_key, apikey, token, access_token,
/// signature) replaced by REDACTED.
std::string canonical_url(std::string_view url);

/// Stable fixture identity: sha256(method \n canonical_url \n body).
std::string request_fingerprint(const HttpRequest& request);

/// Live HTTP(S) transport backed by cpp-httplib. Setting SVLLM_OFFLINE to
/// anything but "" or "0" makes every request fail without connecting.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::chrono::milliseconds timeout = std::chrono::seconds(30),
                         std::string user_agent = "svllm/0.1");
  HttpResponse send(const HttpRequest& request) override;
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::chrono::milliseconds timeout_;
  std::string user_agent_;
  std::atomic<std::size_t> calls_{0};
};

/// Delegates every request to a callback; counts calls. Used for fakes in
/// tests and for scripted providers.
class CallbackTransport final : public Transport {
 public:
  using Handler = std::function<HttpResponse(const HttpRequest&)>;
  explicit CallbackTransport(Handler handler) : handler_(std::move(handler)) {}
  HttpResponse send(const HttpRequest& request) override {
    ++calls_;
    return handler_(request);
  }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  Handler handler_;
  std::atomic<std::size_t> calls_{0};
};

/// Minimum-interval limiter shared by all threads using it. rps <= 0 disables.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);
  void acquire();

 private:
  std::mutex mutex_;
  std::chrono::steady_clock::duration interval_{};
  std::chrono::steady_clock::time_point next_{};
};

class RateLimitedTransport final : public Transport {
 public:
  RateLimitedTransport(std::shared_ptr<Transport> upstream,
                       std::map<Provider, std::shared_ptr<RateLimiter>> limiters)
      : upstream_(std::move(upstream)), limiters_(std::move(limiters)) {}
  HttpResponse send(const HttpRequest& request) override;

 private:
  std::shared_ptr<Transport> upstream_;
  std::map<Provider, std::shared_ptr<RateLimiter>> limiters_;
};

/// Persisted request/response pairs keyed by request_fingerprint, stored as
/// `<dir>/<fp[0:2]>/<fp>.json`.
class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path path_for(const HttpRequest& request) const;
  std::optional<HttpResponse> load(const HttpRequest& request) const;
  void save(const HttpRequest& request, const HttpResponse& response) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
};

/// Record/Replay wrapper. Live passes through; Record passes through and
/// persists every HTTP response; Replay answers from fixtures only and throws
/// Error(FixtureMiss) for unrecorded requests without contacting upstream.
class FixtureTransport final : public Transport {
 public:
  FixtureTransport(ProviderMode mode, FixtureStore store, std::shared_ptr<Transport> upstream);
  HttpResponse send(const HttpRequest& request) override;

  std::size_t upstream_calls() const noexcept { return upstream_calls_.load(); }
  std::size_t fixture_hits() const noexcept { return fixture_hits_.load(); }
  ProviderMode mode() const noexcept { return mode_; }

 private:
  ProviderMode mode_;
  FixtureStore store_;
  std::shared_ptr<Transport> upstream_;
  std::atomic<std::size_t> upstream_calls_{0};
  std::atomic<std::size_t> fixture_hits_{0};
};

/// Writes `contents` to `path` through a temporary file and rename, creating
/// parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace svllm
