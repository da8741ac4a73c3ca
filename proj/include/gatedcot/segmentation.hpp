#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "gatedcot/http.hpp"
#include "gatedcot/objectpool.hpp"

namespace gatedcot {

struct SegmentationRegion {
  BoundingBox box;
  std::optional<std::string> mask_ref;
};

// Object-level segmenter reached over some transport. Throws
// ProviderUnavailable for retryable failures and ProviderRejected when the
// provider refuses this image.
class SegmentationProvider {
 public:
  virtual ~SegmentationProvider() = default;
  virtual std::vector<SegmentationRegion> segment(
      const std::string& image_id, const std::vector<unsigned char>& bytes) = 0;
};

struct SegmentationEndpoint {
  std::string url;
  std::string api_key;
  std::chrono::milliseconds timeout{60000};
  std::ptrdiff_t max_in_flight = 4;
};

// JSON wire client:
//   request  {"image_id": str, "mime": str, "image": base64}
//   response {"regions": [{"box": [x, y, w, h], "mask_ref": str?}, ...]}
class HttpSegmentationProvider final : public SegmentationProvider {
 public:
  HttpSegmentationProvider(SegmentationEndpoint endpoint,
                           std::shared_ptr<HttpTransport> transport);

  std::vector<SegmentationRegion> segment(
      const std::string& image_id,
      const std::vector<unsigned char>& bytes) override;

 private:
  SegmentationEndpoint endpoint_;
  std::shared_ptr<HttpTransport> transport_;
  std::counting_semaphore<> in_flight_;
};

struct SegmentationOptions {
  RetryPolicy retry;
  // When set, each region is cropped from the source image and written
  // here as <sha256>.png; otherwise crops stay unmaterialized.
  std::optional<std::filesystem::path> crop_dir;
};

/// Segments `image` and converts the regions to candidates, in provider
/// order. Zero-area or out-of-bounds regions are dropped and noted in
/// pool.warnings. Candidate ids are "<image_id>#<region index>".
ObjectPool request_segmentation(const ImageRef& image,
                                SegmentationProvider& provider,
                                const SegmentationOptions& options = {});

/// Encodes the `box` region of an encoded image as PNG.
std::vector<unsigned char> crop_to_png(const std::vector<unsigned char>& image,
                                       const BoundingBox& box);

}  // namespace gatedcot
