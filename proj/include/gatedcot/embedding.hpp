#pragma once

#include <chrono>
#include <cstddef>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include "gatedcot/http.hpp"
#include "gatedcot/image.hpp"
#include "gatedcot/relevance.hpp"

namespace gatedcot {

struct EmbeddingEndpoints {
  std::string text_url;
  std::string image_url;
  std::string model;
  std::string api_key;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  std::ptrdiff_t max_in_flight = 4;
};

// Text and image embedding endpoints sharing one vector space.
//
// Wire format, both endpoints:
//   request  {"model": str, "input": str}                       (text)
//            {"model": str, "image": "data:<mime>;base64,..."}   (image)
//   response {"data": [{"embedding": [...]}]} or {"embedding": [...]}
//
// The dimensionality of the first response is enforced on every later one
// (DimensionMismatch).
class EmbeddingClient {
 public:
  EmbeddingClient(EmbeddingEndpoints endpoints,
                  std::shared_ptr<HttpTransport> transport);

  std::vector<double> embed_text(const std::string& text);
  std::vector<double> embed_image(const ImageRef& image);
  std::optional<std::size_t> dimension() const;

 private:
  std::vector<double> post(const std::string& url, const std::string& body);

  EmbeddingEndpoints endpoints_;
  std::shared_ptr<HttpTransport> transport_;
  std::counting_semaphore<> in_flight_;
  mutable std::mutex mutex_;
  std::optional<std::size_t> dimension_;
};

/// Cosine of the angle between two vectors; NaN when either has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// f_attn realized as embedding similarity: cosine between the rationale's
// text embedding and each crop's image embedding. Crop embeddings are
// cached by digest (or path when no digest is known).
class CosineRelevanceProvider final : public RelevanceProvider {
 public:
  explicit CosineRelevanceProvider(std::shared_ptr<EmbeddingClient> client);

  double score(const ScoringQuery& query,
               const ObjectCandidate& candidate) override;

 private:
  using Cache =
      std::map<std::string, std::shared_future<std::vector<double>>>;

  template <typename Fetch>
  std::vector<double> cached(Cache& cache, const std::string& key,
                             Fetch&& fetch);
  std::vector<double> text_vector(std::string_view rationale);
  std::vector<double> image_vector(const ImageRef& image);

  std::shared_ptr<EmbeddingClient> client_;
  std::mutex mutex_;
  Cache text_cache_;
  Cache image_cache_;
};

}  // namespace gatedcot
