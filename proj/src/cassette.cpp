#include "gatedcot/cassette.hpp"

#include <algorithm>

#include "gatedcot/digest.hpp"

namespace gatedcot {

std::string request_fingerprint(const HttpRequest& request) {
  std::string material;
  material.reserve(request.method.size() + request.url.size() +
                   request.body.size() + 2);
  material += request.method;
  material += '\n';
  material += request.url;
  material += '\n';
  material += request.body;
  return sha256_hex(material);
}

RecordingTransport::RecordingTransport(std::shared_ptr<HttpTransport> inner)
    : inner_(std::move(inner)) {}

HttpResponse RecordingTransport::send(const HttpRequest& request) {
  HttpResponse response = inner_->send(request);
  std::lock_guard lock(mutex_);
  cassette_.interactions.push_back(
      {request.method, request.url, request_fingerprint(request), response});
  return response;
}

Cassette RecordingTransport::cassette() const {
  std::lock_guard lock(mutex_);
  return cassette_;
}

ReplayTransport::ReplayTransport(Cassette cassette)
    : cassette_(std::move(cassette)),
      used_(cassette_.interactions.size(), false) {}

HttpResponse ReplayTransport::send(const HttpRequest& request) {
  const std::string hash = request_fingerprint(request);
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < cassette_.interactions.size(); ++i) {
    if (!used_[i] && cassette_.interactions[i].request_hash == hash) {
      used_[i] = true;
      return cassette_.interactions[i].response;
    }
  }
  throw CassetteMismatch("no recorded interaction for " + request.method +
                         " " + request.url + " (request " +
                         hash.substr(0, 12) + ")");
}

std::size_t ReplayTransport::remaining() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count(used_.begin(), used_.end(), false));
}

}  // namespace gatedcot
