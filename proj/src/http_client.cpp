// cpp-httplib is expensive to compile; it is confined to this unit.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "gatedcot/http.hpp"

namespace gatedcot {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("URL without scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class NetworkTransport final : public HttpTransport {
 public:
  HttpResponse send(const HttpRequest& request) override {
    const auto [origin, path] = split_url(request.url);
    httplib::Client client(origin);
    const auto seconds =
        std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(
        request.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());

    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [key, value] : request.headers) {
      if (key == "Content-Type") {
        content_type = value;
      } else {
        headers.emplace(key, value);
      }
    }
    httplib::Result result;
    if (request.method == "GET") {
      result = client.Get(path, headers);
    } else if (request.method == "POST") {
      result = client.Post(path, headers, request.body, content_type);
    } else {
      throw ConfigError("unsupported HTTP method " + request.method);
    }
    if (!result) {
      throw EndpointUnavailable(request.url + ": " +
                                httplib::to_string(result.error()));
    }
    return {result->status, result->body};
  }
};

}  // namespace

std::shared_ptr<HttpTransport> make_network_transport() {
  return std::make_shared<NetworkTransport>();
}

}  // namespace gatedcot
