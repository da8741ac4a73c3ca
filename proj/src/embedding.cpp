#include "gatedcot/embedding.hpp"

#include <cmath>
#include <future>
#include <json.hpp>
#include <limits>

#include "gatedcot/digest.hpp"
#include "gatedcot/error.hpp"

namespace gatedcot {

using nlohmann::json;

EmbeddingClient::EmbeddingClient(EmbeddingEndpoints endpoints,
                                 std::shared_ptr<HttpTransport> transport)
    : endpoints_(std::move(endpoints)),
      transport_(std::move(transport)),
      in_flight_(std::max<std::ptrdiff_t>(1, endpoints_.max_in_flight)) {}

std::optional<std::size_t> EmbeddingClient::dimension() const {
  std::lock_guard lock(mutex_);
  return dimension_;
}

std::vector<double> EmbeddingClient::post(const std::string& url,
                                          const std::string& body) {
  HttpRequest request;
  request.url = url;
  request.body = body;
  request.timeout = endpoints_.timeout;
  request.headers["Content-Type"] = "application/json";
  if (!endpoints_.api_key.empty()) {
    request.headers["Authorization"] = "Bearer " + endpoints_.api_key;
  }
  const HttpResponse response = with_retry(endpoints_.retry, [&] {
    in_flight_.acquire();
    HttpResponse r;
    try {
      r = transport_->send(request);
    } catch (const TransientError& e) {
      in_flight_.release();
      throw ProviderUnavailable(e.what());
    } catch (...) {
      in_flight_.release();
      throw;
    }
    in_flight_.release();
    if (is_transient_status(r.status)) {
      throw ProviderUnavailable("embedding HTTP " + std::to_string(r.status));
    }
    return r;
  });
  if (response.status != 200) {
    throw ProviderRejected("embedding HTTP " + std::to_string(response.status) +
                           ": " + response.body.substr(0, 256));
  }
  const json doc = json::parse(response.body, nullptr, false);
  const json* vec = nullptr;
  if (doc.is_object() && doc.contains("embedding")) {
    vec = &doc["embedding"];
  } else if (doc.is_object() && doc.contains("data") && doc["data"].is_array() &&
             !doc["data"].empty() && doc["data"][0].contains("embedding")) {
    vec = &doc["data"][0]["embedding"];
  }
  if (vec == nullptr || !vec->is_array() || vec->empty()) {
    throw ProviderRejected("embedding response carries no vector");
  }
  auto values = vec->get<std::vector<double>>();
  std::lock_guard lock(mutex_);
  if (!dimension_) {
    dimension_ = values.size();
  } else if (*dimension_ != values.size()) {
    throw DimensionMismatch("embedding dimension " +
                            std::to_string(values.size()) + " != " +
                            std::to_string(*dimension_));
  }
  return values;
}

std::vector<double> EmbeddingClient::embed_text(const std::string& text) {
  return post(endpoints_.text_url,
              json{{"model", endpoints_.model}, {"input", text}}.dump());
}

std::vector<double> EmbeddingClient::embed_image(const ImageRef& image) {
  const auto bytes = read_file_bytes(image.path);
  const std::string url =
      "data:" + sniff_image_mime(bytes) + ";base64," + base64_encode(bytes);
  return post(endpoints_.image_url,
              json{{"model", endpoints_.model}, {"image", url}}.dump());
}

double cosine_similarity(std::span<const double> a,
                         std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("cosine over vectors of different length");
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

CosineRelevanceProvider::CosineRelevanceProvider(
    std::shared_ptr<EmbeddingClient> client)
    : client_(std::move(client)) {}

template <typename Fetch>
std::vector<double> CosineRelevanceProvider::cached(Cache& cache,
                                                    const std::string& key,
                                                    Fetch&& fetch) {
  std::promise<std::vector<double>> promise;
  std::shared_future<std::vector<double>> future;
  bool owner = false;
  {
    std::lock_guard lock(mutex_);
    auto it = cache.find(key);
    if (it == cache.end()) {
      future = promise.get_future().share();
      cache.emplace(key, future);
      owner = true;
    } else {
      future = it->second;
    }
  }
  if (owner) {
    // Exactly one request per key, even under concurrent scoring, so that
    // recorded cassettes replay with the same request multiset.
    try {
      promise.set_value(fetch());
    } catch (...) {
      promise.set_exception(std::current_exception());
      std::lock_guard lock(mutex_);
      cache.erase(key);
    }
  }
  return future.get();
}

std::vector<double> CosineRelevanceProvider::text_vector(
    std::string_view rationale) {
  const std::string key(rationale);
  return cached(text_cache_, key, [&] { return client_->embed_text(key); });
}

std::vector<double> CosineRelevanceProvider::image_vector(
    const ImageRef& image) {
  const std::string key = image.digest.empty() ? image.path : image.digest;
  return cached(image_cache_, key,
                [&] { return client_->embed_image(image); });
}

double CosineRelevanceProvider::score(const ScoringQuery& query,
                                      const ObjectCandidate& candidate) {
  const auto text = text_vector(query.rationale);
  const auto image = image_vector(candidate.crop);
  return cosine_similarity(text, image);
}

}  // namespace gatedcot
