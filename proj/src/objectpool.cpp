#include "gatedcot/objectpool.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "gatedcot/error.hpp"

namespace gatedcot {

using nlohmann::json;

std::int64_t intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const std::int64_t w =
      std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const std::int64_t h =
      std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (w <= 0 || h <= 0) return 0;
  return w * h;
}

double intersection_over_union(const BoundingBox& a, const BoundingBox& b) {
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

const char* to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::Manifest:
      return "manifest";
    case Provenance::SegmentationService:
      return "segmentation_service";
  }
  return "unknown";
}

ObjectCandidate make_candidate(std::string candidate_id,
                               std::string source_image_id,
                               const BoundingBox& box,
                               const ImageDimensions& source, ImageRef crop,
                               Provenance provenance) {
  if (source.width <= 0 || source.height <= 0) {
    throw GeometryError("source image " + source_image_id +
                        " has non-positive dimensions");
  }
  if (box.width <= 0 || box.height <= 0) {
    throw GeometryError("candidate " + candidate_id + " has an empty box");
  }
  if (!box.inside(source)) {
    throw GeometryError("candidate " + candidate_id +
                        " box extends outside image " + source_image_id);
  }
  ObjectCandidate c;
  c.candidate_id = std::move(candidate_id);
  c.source_image_id = std::move(source_image_id);
  c.box = box;
  c.area_fraction = static_cast<double>(box.area()) /
                    (static_cast<double>(source.width) *
                     static_cast<double>(source.height));
  c.crop = std::move(crop);
  c.crop.area_fraction = c.area_fraction;
  if (c.crop.id.empty()) c.crop.id = c.candidate_id;
  c.provenance = provenance;
  return c;
}

namespace {

template <typename T>
T required(const json& node, const char* key, const std::string& where) {
  if (!node.is_object() || !node.contains(key)) {
    throw ManifestParseError(where + ": missing field '" + key + "'");
  }
  try {
    return node.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ManifestParseError(where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

std::map<std::string, ObjectPool> load_manifest(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestParseError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestParseError(path.string() + ": " + e.what());
  }
  const auto version = required<std::string>(doc, "schema_version", "manifest");
  if (version != kManifestSchemaVersion) {
    throw ManifestParseError("unsupported manifest schema_version '" +
                             version + "'");
  }
  if (!doc.contains("images") || !doc["images"].is_array()) {
    throw ManifestParseError("manifest: 'images' must be an array");
  }
  const auto base = path.parent_path();
  std::map<std::string, ObjectPool> pools;
  for (const auto& record : doc["images"]) {
    ObjectPool pool;
    pool.source_image_id = required<std::string>(record, "image_id", "image");
    const std::string where = "image " + pool.source_image_id;
    pool.source_dimensions = {required<std::int64_t>(record, "width", where),
                              required<std::int64_t>(record, "height", where)};
    if (pools.contains(pool.source_image_id)) {
      throw ManifestParseError("duplicate image_id " + pool.source_image_id);
    }
    const auto candidates = required<json>(record, "candidates", where);
    if (!candidates.is_array()) {
      throw ManifestParseError(where + ": 'candidates' must be an array");
    }
    for (const auto& entry : candidates) {
      const auto id = required<std::string>(entry, "candidate_id", where);
      const auto box = required<std::vector<std::int64_t>>(
          entry, "box", where + " candidate " + id);
      if (box.size() != 4) {
        throw ManifestParseError(where + " candidate " + id +
                                 ": box must be [x, y, w, h]");
      }
      const bool duplicate = std::any_of(
          pool.candidates.begin(), pool.candidates.end(),
          [&](const ObjectCandidate& c) { return c.candidate_id == id; });
      if (duplicate) {
        throw ManifestParseError(where + ": duplicate candidate_id " + id);
      }
      ImageRef crop;
      if (entry.contains("crop_path")) {
        std::filesystem::path crop_path =
            required<std::string>(entry, "crop_path", where);
        if (crop_path.is_relative()) crop_path = base / crop_path;
        crop = make_image_ref(id, crop_path);
      }
      pool.candidates.push_back(make_candidate(
          id, pool.source_image_id, {box[0], box[1], box[2], box[3]},
          pool.source_dimensions, std::move(crop), Provenance::Manifest));
    }
    pools.emplace(pool.source_image_id, std::move(pool));
  }
  return pools;
}

void FilterOptions::validate() const {
  if (!(min_area_fraction >= 0.0 && min_area_fraction <= 1.0)) {
    throw ConfigError("min_area_fraction must lie in [0, 1]");
  }
  if (!(overlap_threshold > 0.0 && overlap_threshold <= 1.0)) {
    throw ConfigError("overlap_threshold must lie in (0, 1]");
  }
}

ObjectPool filter_candidates(const ObjectPool& pool,
                             const FilterOptions& options) {
  options.validate();
  ObjectPool out = pool;
  out.candidates.clear();
  for (const auto& candidate : pool.candidates) {
    if (out.candidates.size() >= options.max_candidates) break;
    if (candidate.area_fraction < options.min_area_fraction) continue;
    const bool duplicate = std::any_of(
        out.candidates.begin(), out.candidates.end(),
        [&](const ObjectCandidate& kept) {
          return intersection_over_union(kept.box, candidate.box) >
                 options.overlap_threshold;
        });
    if (!duplicate) out.candidates.push_back(candidate);
  }
  return out;
}

}  // namespace gatedcot
