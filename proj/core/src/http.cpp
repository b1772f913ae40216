#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "svllm/http.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/error.hpp"
#include "svllm/hashing.hpp"

namespace svllm {

std::string_view to_string(Provider provider) noexcept {
  switch (provider) {
    case Provider::Geocode: return "geocode";
    case Provider::Places: return "places";
    case Provider::Imagery: return "imagery";
    case Provider::Chat: return "chat";
  }
  return "unknown";
}

std::string_view to_string(ProviderMode mode) noexcept {
  switch (mode) {
    case ProviderMode::Live: return "live";
    case ProviderMode::Replay: return "replay";
    case ProviderMode::Record: return "record";
  }
  return "unknown";
}

std::optional<ProviderMode> parse_provider_mode(std::string_view text) noexcept {
  if (text == "live") return ProviderMode::Live;
  if (text == "replay") return ProviderMode::Replay;
  if (text == "record") return ProviderMode::Record;
  return std::nullopt;
}

std::string url_encode(std::string_view text) {
  std::string out;
  out.reserve(text.size() * 3);
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out += fmt::format("%{:02X}", c);
    }
  }
  return out;
}

namespace {

struct UrlParts {
  std::string scheme;
  std::string authority;
  std::string path;
  std::string query;
};

UrlParts split_url(std::string_view url) {
  UrlParts parts;
  if (const auto hash = url.find('#'); hash != std::string_view::npos) url = url.substr(0, hash);
  if (const auto sep = url.find("://"); sep != std::string_view::npos) {
    parts.scheme = std::string(url.substr(0, sep));
    url.remove_prefix(sep + 3);
  }
  const auto path_start = url.find_first_of("/?");
  parts.authority = std::string(url.substr(0, path_start));
  if (path_start == std::string_view::npos) return parts;
  url.remove_prefix(path_start);
  if (const auto q = url.find('?'); q != std::string_view::npos) {
    parts.path = std::string(url.substr(0, q));
    parts.query = std::string(url.substr(q + 1));
  } else {
    parts.path = std::string(url);
  }
  return parts;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_credential_param(std::string_view name) {
  const std::string n = lower(std::string(name));
  return n == "key" || n == "api_key" || n == "apikey" || n == "token" || n == "access_token" ||
         n == "signature";
}

}  // namespace

std::string canonical_url(std::string_view url) {
  const UrlParts parts = split_url(url);
  std::vector<std::pair<std::string, std::string>> params;
  std::string_view q = parts.query;
  while (!q.empty()) {
    const auto amp = q.find('&');
    const std::string_view item = q.substr(0, amp);
    if (!item.empty()) {
      const auto eq = item.find('=');
      std::string name(item.substr(0, eq));
      std::string value = eq == std::string_view::npos ? std::string() : std::string(item.substr(eq + 1));
      if (is_credential_param(name)) value = "REDACTED";
      params.emplace_back(std::move(name), std::move(value));
    }
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  std::sort(params.begin(), params.end());

  std::string out = lower(parts.scheme);
  if (!out.empty()) out += "://";
  out += lower(parts.authority);
  out += parts.path.empty() ? "/" : parts.path;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out += i == 0 ? '?' : '&';
    out += params[i].first;
    out += '=';
    out += params[i].second;
  }
  return out;
}

std::string request_fingerprint(const HttpRequest& request) {
  return sha256_hex(request.method + "\n" + canonical_url(request.url) + "\n" + request.body);
}

// ---------------------------------------------------------------------------

HttpTransport::HttpTransport(std::chrono::milliseconds timeout, std::string user_agent)
    : timeout_(timeout), user_agent_(std::move(user_agent)) {}

HttpResponse HttpTransport::send(const HttpRequest& request) {
  ++calls_;
  if (const char* off = std::getenv("SVLLM_OFFLINE"); off && *off && std::string_view(off) != "0") {
    HttpResponse refused;
    refused.error = "network disabled by SVLLM_OFFLINE";
    return refused;
  }
  const UrlParts parts = split_url(request.url);
  httplib::Client client(parts.scheme + "://" + parts.authority);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_follow_location(true);

  httplib::Headers headers{{"User-Agent", user_agent_}};
  std::string content_type = "application/json";
  for (const auto& [name, value] : request.headers) {
    if (lower(name) == "content-type") {
      content_type = value;
    } else {
      headers.emplace(name, value);
    }
  }
  const std::string target = (parts.path.empty() ? "/" : parts.path) +
                             (parts.query.empty() ? "" : "?" + parts.query);

  httplib::Result result = request.method == "POST"
                               ? client.Post(target, headers, request.body, content_type)
                               : client.Get(target, headers);
  HttpResponse response;
  if (!result) {
    response.error = httplib::to_string(result.error());
    response.timed_out = result.error() == httplib::Error::ConnectionTimeout ||
                         result.error() == httplib::Error::Read;
    return response;
  }
  response.status = result->status;
  response.body = result->body;
  response.content_type = result->get_header_value("Content-Type");
  return response;
}

// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(double requests_per_second) {
  if (requests_per_second > 0) {
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / requests_per_second));
  }
}

void RateLimiter::acquire() {
  if (interval_ == std::chrono::steady_clock::duration::zero()) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    slot = std::max(std::chrono::steady_clock::now(), next_);
    next_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

HttpResponse RateLimitedTransport::send(const HttpRequest& request) {
  if (const auto it = limiters_.find(request.provider); it != limiters_.end() && it->second) {
    it->second->acquire();
  }
  return upstream_->send(request);
}

// ---------------------------------------------------------------------------

std::filesystem::path FixtureStore::path_for(const HttpRequest& request) const {
  const std::string fp = request_fingerprint(request);
  return dir_ / fp.substr(0, 2) / (fp + ".json");
}

std::optional<HttpResponse> FixtureStore::load(const HttpRequest& request) const {
  const auto path = path_for(request);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  const auto doc = nlohmann::json::parse(in);
  const auto& r = doc.at("response");
  HttpResponse response;
  response.status = r.at("status").get<int>();
  response.content_type = r.value("content_type", "");
  const std::string body = r.at("body").get<std::string>();
  response.body = r.value("encoding", "utf8") == "base64" ? base64_decode(body) : body;
  return response;
}

void FixtureStore::save(const HttpRequest& request, const HttpResponse& response) const {
  nlohmann::json body = response.body;
  std::string encoding = "utf8";
  try {
    (void)body.dump();
  } catch (const nlohmann::json::type_error&) {
    body = base64_encode(response.body);
    encoding = "base64";
  }
  const nlohmann::json doc = {
      {"request",
       {{"provider", to_string(request.provider)},
        {"method", request.method},
        {"url", canonical_url(request.url)},
        {"body", request.body}}},
      {"response",
       {{"status", response.status},
        {"content_type", response.content_type},
        {"encoding", encoding},
        {"body", body}}},
  };
  write_file_atomic(path_for(request), doc.dump(1) + "\n");
}

FixtureTransport::FixtureTransport(ProviderMode mode, FixtureStore store,
                                   std::shared_ptr<Transport> upstream)
    : mode_(mode), store_(std::move(store)), upstream_(std::move(upstream)) {}

HttpResponse FixtureTransport::send(const HttpRequest& request) {
  if (mode_ == ProviderMode::Replay) {
    if (auto hit = store_.load(request)) {
      ++fixture_hits_;
      return *hit;
    }
    throw Error(ErrorKind::FixtureMiss,
                fmt::format("no recording for {} {}", request.method, canonical_url(request.url)));
  }
  if (!upstream_) throw Error(ErrorKind::ConfigError, "live transport not configured");
  ++upstream_calls_;
  HttpResponse response = upstream_->send(request);
  if (mode_ == ProviderMode::Record && response.status != 0) store_.save(request, response);
  return response;
}

// ---------------------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  static std::atomic<std::uint64_t> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + fmt::format(
                                       ".tmp{}.{}", std::hash<std::thread::id>{}(std::this_thread::get_id()),
                                       counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::MissingArtifact, "cannot write " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::MissingArtifact, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingArtifact, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace svllm
