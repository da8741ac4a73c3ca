#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gatedcot/image.hpp"

namespace gatedcot {

// Axis-aligned pixel box in source-image coordinates.
struct BoundingBox {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;

  std::int64_t area() const { return width * height; }
  std::int64_t right() const { return x + width; }
  std::int64_t bottom() const { return y + height; }
  bool inside(const ImageDimensions& dims) const {
    return x >= 0 && y >= 0 && width >= 0 && height >= 0 &&
           right() <= dims.width && bottom() <= dims.height;
  }
  bool operator==(const BoundingBox&) const = default;
};

std::int64_t intersection_area(const BoundingBox& a, const BoundingBox& b);
double intersection_over_union(const BoundingBox& a, const BoundingBox& b);

enum class Provenance { Manifest, SegmentationService };

const char* to_string(Provenance provenance);

struct ObjectCandidate {
  std::string candidate_id;
  std::string source_image_id;
  BoundingBox box;
  ImageRef crop;
  double area_fraction = 0.0;
  Provenance provenance = Provenance::Manifest;
  // Opaque mask reference passed through from segmentation providers.
  std::optional<std::string> mask_ref;

  bool operator==(const ObjectCandidate&) const = default;
};

/// Validates geometry and fills area_fraction. Throws GeometryError naming
/// the candidate when the box is empty or leaves the image.
ObjectCandidate make_candidate(std::string candidate_id,
                               std::string source_image_id,
                               const BoundingBox& box,
                               const ImageDimensions& source, ImageRef crop,
                               Provenance provenance);

struct ObjectPool {
  std::string source_image_id;
  ImageDimensions source_dimensions;
  std::vector<ObjectCandidate> candidates;
  // Regions dropped during construction (degenerate provider output).
  std::vector<std::string> warnings;

  std::size_t size() const { return candidates.size(); }
  bool empty() const { return candidates.empty(); }
  bool operator==(const ObjectPool&) const = default;
};

inline constexpr const char* kManifestSchemaVersion = "1";

/// Reads a segmentation manifest (one record per source image). Crop paths
/// resolve relative to the manifest's directory.
/// Throws ManifestParseError or GeometryError.
std::map<std::string, ObjectPool> load_manifest(
    const std::filesystem::path& path);

struct FilterOptions {
  double min_area_fraction = 0.01;
  std::size_t max_candidates = 16;
  double overlap_threshold = 0.9;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Drops small regions, suppresses later duplicates whose IoU with an
/// already kept candidate exceeds the threshold, then truncates. Order of
/// the survivors is preserved and the operation is idempotent.
ObjectPool filter_candidates(const ObjectPool& pool,
                             const FilterOptions& options);

}  // namespace gatedcot
