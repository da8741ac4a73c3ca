#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "gatedcot/http.hpp"

namespace gatedcot {

// One captured exchange. Requests are kept as a fingerprint only: bodies may
// carry base64 images and credentials never enter a cassette.
struct Interaction {
  std::string method;
  std::string url;
  std::string request_hash;
  HttpResponse response;

  bool operator==(const Interaction&) const = default;
};

struct Cassette {
  std::vector<Interaction> interactions;

  bool operator==(const Cassette&) const = default;
};

/// sha256 over method, URL and body; headers are ignored.
std::string request_fingerprint(const HttpRequest& request);

// Forwards to `inner` and appends every exchange that produced a response.
class RecordingTransport final : public HttpTransport {
 public:
  explicit RecordingTransport(std::shared_ptr<HttpTransport> inner);

  HttpResponse send(const HttpRequest& request) override;
  Cassette cassette() const;

 private:
  std::shared_ptr<HttpTransport> inner_;
  mutable std::mutex mutex_;
  Cassette cassette_;
};

// Serves recorded responses. A request is answered by the earliest unused
// interaction with the same fingerprint, so identical requests replay in
// recording order even when independent requests were issued concurrently.
class ReplayTransport final : public HttpTransport {
 public:
  explicit ReplayTransport(Cassette cassette);

  /// Throws CassetteMismatch when no unused interaction matches.
  HttpResponse send(const HttpRequest& request) override;
  std::size_t remaining() const;

 private:
  mutable std::mutex mutex_;
  Cassette cassette_;
  std::vector<bool> used_;
};

}  // namespace gatedcot
