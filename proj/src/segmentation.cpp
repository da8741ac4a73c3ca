#include "gatedcot/segmentation.hpp"

#include <fstream>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "gatedcot/digest.hpp"
#include "gatedcot/error.hpp"

namespace gatedcot {

using nlohmann::json;

HttpSegmentationProvider::HttpSegmentationProvider(
    SegmentationEndpoint endpoint, std::shared_ptr<HttpTransport> transport)
    : endpoint_(std::move(endpoint)),
      transport_(std::move(transport)),
      in_flight_(std::max<std::ptrdiff_t>(1, endpoint_.max_in_flight)) {}

std::vector<SegmentationRegion> HttpSegmentationProvider::segment(
    const std::string& image_id, const std::vector<unsigned char>& bytes) {
  HttpRequest request;
  request.url = endpoint_.url;
  request.timeout = endpoint_.timeout;
  request.headers["Content-Type"] = "application/json";
  if (!endpoint_.api_key.empty()) {
    request.headers["Authorization"] = "Bearer " + endpoint_.api_key;
  }
  request.body = json{{"image_id", image_id},
                      {"mime", sniff_image_mime(bytes)},
                      {"image", base64_encode(bytes)}}
                     .dump();

  HttpResponse response;
  in_flight_.acquire();
  try {
    response = transport_->send(request);
  } catch (const TransientError& e) {
    in_flight_.release();
    throw ProviderUnavailable(e.what());
  } catch (...) {
    in_flight_.release();
    throw;
  }
  in_flight_.release();

  if (is_transient_status(response.status)) {
    throw ProviderUnavailable("segmentation HTTP " +
                              std::to_string(response.status));
  }
  if (response.status != 200) {
    throw ProviderRejected("segmentation HTTP " +
                           std::to_string(response.status) + ": " +
                           response.body.substr(0, 256));
  }
  const json doc = json::parse(response.body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("regions") ||
      !doc["regions"].is_array()) {
    throw ProviderRejected("segmentation response has no 'regions' array");
  }
  std::vector<SegmentationRegion> regions;
  for (const auto& r : doc["regions"]) {
    SegmentationRegion region;
    const auto box = r.value("box", std::vector<std::int64_t>{});
    if (box.size() == 4) region.box = {box[0], box[1], box[2], box[3]};
    if (r.contains("mask_ref") && r["mask_ref"].is_string()) {
      region.mask_ref = r["mask_ref"].get<std::string>();
    }
    regions.push_back(std::move(region));
  }
  return regions;
}

std::vector<unsigned char> crop_to_png(const std::vector<unsigned char>& image,
                                       const BoundingBox& box) {
  const cv::Mat encoded(1, static_cast<int>(image.size()), CV_8UC1,
                        const_cast<unsigned char*>(image.data()));
  const cv::Mat decoded = cv::imdecode(encoded, cv::IMREAD_UNCHANGED);
  if (decoded.empty()) throw ProviderRejected("image bytes are not decodable");
  const cv::Rect roi(static_cast<int>(box.x), static_cast<int>(box.y),
                     static_cast<int>(box.width), static_cast<int>(box.height));
  if ((roi & cv::Rect(0, 0, decoded.cols, decoded.rows)) != roi ||
      roi.area() == 0) {
    throw GeometryError("crop box lies outside the image");
  }
  std::vector<unsigned char> png;
  cv::imencode(".png", decoded(roi), png);
  return png;
}

ObjectPool request_segmentation(const ImageRef& image,
                                SegmentationProvider& provider,
                                const SegmentationOptions& options) {
  const auto bytes = read_file_bytes(image.path);
  ObjectPool pool;
  pool.source_image_id = image.id;
  pool.source_dimensions = decode_dimensions(bytes);

  const auto regions = with_retry(
      options.retry, [&] { return provider.segment(image.id, bytes); });

  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& region = regions[i];
    const std::string id = image.id + "#" + std::to_string(i);
    if (region.box.area() <= 0 || region.box.width <= 0 ||
        region.box.height <= 0) {
      pool.warnings.push_back("dropped region " + id + ": zero area");
      continue;
    }
    if (!region.box.inside(pool.source_dimensions)) {
      pool.warnings.push_back("dropped region " + id + ": outside image");
      continue;
    }
    ImageRef crop;
    crop.id = id;
    if (options.crop_dir) {
      const auto png = crop_to_png(bytes, region.box);
      const std::string hex = sha256_hex(png);
      std::filesystem::create_directories(*options.crop_dir);
      const auto path = *options.crop_dir / (hex + ".png");
      if (!std::filesystem::exists(path)) {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(png.data()),
                  static_cast<std::streamsize>(png.size()));
        if (!out) throw IoError("cannot write crop " + path.string());
      }
      crop.path = path.string();
      crop.digest = "sha256:" + hex;
    }
    auto candidate =
        make_candidate(id, image.id, region.box, pool.source_dimensions,
                       std::move(crop), Provenance::SegmentationService);
    candidate.mask_ref = region.mask_ref;
    pool.candidates.push_back(std::move(candidate));
  }
  return pool;
}

}  // namespace gatedcot
