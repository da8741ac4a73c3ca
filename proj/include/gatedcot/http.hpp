#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <type_traits>

#include "gatedcot/error.hpp"

namespace gatedcot {

struct HttpRequest {
  std::string method = "POST";
  std::string url;
  std::map<std::string, std::string> headers;
  std::string body;
  std::chrono::milliseconds timeout{60000};
};

struct HttpResponse {
  int status = 0;
  std::string body;

  bool operator==(const HttpResponse&) const = default;
};

// Synchronous request/response exchange. Implementations throw
// EndpointUnavailable when no response arrives (connect failure, timeout);
// any HTTP status, including errors, is returned as a response.
// Implementations must be safe to call from several threads.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// Real network transport backed by cpp-httplib; supports http:// and
/// https:// URLs.
std::shared_ptr<HttpTransport> make_network_transport();

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
};

/// Calls `fn` and retries on TransientError with exponential backoff.
/// The last TransientError propagates once the retries are spent.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto delay = policy.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const TransientError&) {
      if (attempt >= policy.max_retries) throw;
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    delay = std::chrono::milliseconds(static_cast<long long>(
        static_cast<double>(delay.count()) * policy.backoff_factor));
  }
}

/// True for statuses worth retrying (408, 429, 5xx).
inline bool is_transient_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

}  // namespace gatedcot
