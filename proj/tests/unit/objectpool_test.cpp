#include <gtest/gtest.h>

#include <json.hpp>
#include <random>

#include "gatedcot/digest.hpp"
#include "gatedcot/error.hpp"
#include "gatedcot/mocks.hpp"
#include "gatedcot/objectpool.hpp"
#include "gatedcot/segmentation.hpp"
#include "test_support.hpp"

using namespace gatedcot;
using nlohmann::json;
using testing_support::FakeTransport;
using testing_support::fixture;
using testing_support::TempDir;
using testing_support::write_text;

namespace {

ObjectCandidate box_candidate(const std::string& id, BoundingBox box,
                              ImageDimensions dims = {100, 100}) {
  return make_candidate(id, "img", box, dims, {}, Provenance::Manifest);
}

ObjectPool pool_of(std::vector<ObjectCandidate> candidates,
                   ImageDimensions dims = {100, 100}) {
  ObjectPool p;
  p.source_image_id = "img";
  p.source_dimensions = dims;
  p.candidates = std::move(candidates);
  return p;
}

// Oracle: rectangle intersection by per-pixel counting on small boxes.
std::int64_t pixel_intersection(const BoundingBox& a, const BoundingBox& b) {
  std::int64_t n = 0;
  for (std::int64_t y = 0; y < 40; ++y) {
    for (std::int64_t x = 0; x < 40; ++x) {
      const bool in_a = x >= a.x && x < a.right() && y >= a.y && y < a.bottom();
      const bool in_b = x >= b.x && x < b.right() && y >= b.y && y < b.bottom();
      if (in_a && in_b) ++n;
    }
  }
  return n;
}

}  // namespace

TEST(LoadManifest, SingleBoxQuarterArea) {
  TempDir dir;
  write_text(dir / "m.json", R"({"schema_version": "1", "images": [
    {"image_id": "i", "width": 100, "height": 100,
     "candidates": [{"candidate_id": "c", "box": [10, 10, 50, 50]}]}]})");
  const auto pools = load_manifest(dir / "m.json");
  ASSERT_EQ(pools.size(), 1u);
  const auto& pool = pools.at("i");
  ASSERT_EQ(pool.size(), 1u);
  EXPECT_NEAR(pool.candidates[0].area_fraction, 0.25, 1e-9);
  EXPECT_EQ(pool.candidates[0].provenance, Provenance::Manifest);
}

TEST(LoadManifest, BoxPastRightEdgeNamesCandidate) {
  TempDir dir;
  write_text(dir / "m.json", R"({"schema_version": "1", "images": [
    {"image_id": "i", "width": 100, "height": 100,
     "candidates": [{"candidate_id": "wide-one", "box": [60, 0, 50, 10]}]}]})");
  try {
    load_manifest(dir / "m.json");
    FAIL() << "expected GeometryError";
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("wide-one"), std::string::npos);
  }
}

TEST(LoadManifest, TwoImagesCountsMatchSchemaWalker) {
  const std::string text = R"({"schema_version": "1", "images": [
    {"image_id": "a", "width": 50, "height": 50, "candidates": [
      {"candidate_id": "a1", "box": [0, 0, 10, 10]},
      {"candidate_id": "a2", "box": [10, 10, 10, 10]},
      {"candidate_id": "a3", "box": [20, 20, 10, 10]}]},
    {"image_id": "b", "width": 50, "height": 50, "candidates": []}]})";
  TempDir dir;
  write_text(dir / "m.json", text);
  const auto pools = load_manifest(dir / "m.json");

  // Independent walk over the raw JSON.
  std::map<std::string, std::size_t> expected;
  const auto doc = json::parse(text);
  for (const auto& image : doc["images"]) {
    expected[image["image_id"].get<std::string>()] = image["candidates"].size();
  }
  ASSERT_EQ(pools.size(), expected.size());
  for (const auto& [id, n] : expected) EXPECT_EQ(pools.at(id).size(), n);
  EXPECT_EQ(pools.at("a").size(), 3u);
  EXPECT_TRUE(pools.at("b").empty());
}

TEST(LoadManifest, CropPathsResolveAndHash) {
  const auto pools = load_manifest(fixture("manifest.json"));
  const auto& pool = pools.at("scene");
  ASSERT_EQ(pool.size(), 3u);
  const auto& rock = pool.candidates[0];
  EXPECT_EQ(rock.candidate_id, "rock");
  EXPECT_EQ(rock.crop.path, (fixture("images/rock.png")).string());
  EXPECT_EQ(rock.crop.digest,
            "sha256:" + sha256_hex(testing_support::read_text(fixture("images/rock.png"))));
}

TEST(LoadManifest, MalformedInputs) {
  TempDir dir;
  write_text(dir / "bad.json", "{not json");
  EXPECT_THROW(load_manifest(dir / "bad.json"), ManifestParseError);
  write_text(dir / "v.json", R"({"schema_version": "9", "images": []})");
  EXPECT_THROW(load_manifest(dir / "v.json"), ManifestParseError);
  write_text(dir / "dup.json", R"({"schema_version": "1", "images": [
    {"image_id": "i", "width": 10, "height": 10, "candidates": [
      {"candidate_id": "c", "box": [0, 0, 2, 2]},
      {"candidate_id": "c", "box": [2, 2, 2, 2]}]}]})");
  EXPECT_THROW(load_manifest(dir / "dup.json"), ManifestParseError);
  write_text(dir / "box.json", R"({"schema_version": "1", "images": [
    {"image_id": "i", "width": 10, "height": 10, "candidates": [
      {"candidate_id": "c", "box": [0, 0, 2]}]}]})");
  EXPECT_THROW(load_manifest(dir / "box.json"), ManifestParseError);
  EXPECT_THROW(load_manifest(dir / "missing.json"), ManifestParseError);
}

TEST(MakeCandidate, EmptyBoxIsGeometryError) {
  EXPECT_THROW(box_candidate("z", {5, 5, 0, 10}), GeometryError);
}

TEST(FilterCandidates, IdenticalBoxesKeepFirst) {
  const auto pool = pool_of({box_candidate("first", {0, 0, 20, 20}),
                             box_candidate("second", {0, 0, 20, 20})});
  const auto out = filter_candidates(pool, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.candidates[0].candidate_id, "first");
}

TEST(FilterCandidates, SmallAreaDropped) {
  // 5x10 of 100x100 = 0.005
  const auto pool = pool_of({box_candidate("tiny", {0, 0, 5, 10}),
                             box_candidate("ok", {50, 50, 10, 10})});
  const auto out = filter_candidates(pool, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.candidates[0].candidate_id, "ok");
}

TEST(FilterCandidates, ThirtyDisjointTruncatedToSixteen) {
  std::vector<ObjectCandidate> cs;
  for (int i = 0; i < 30; ++i) {
    cs.push_back(box_candidate("c" + std::to_string(i),
                               {(i % 10) * 45, (i / 10) * 45, 40, 40},
                               {450, 135}));
  }
  const auto pool = pool_of(cs, {450, 135});
  const auto out = filter_candidates(pool, {});

  // Oracle: brute-force pairwise IoU, then prefix truncation.
  std::vector<std::string> expected;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    bool dup = false;
    for (std::size_t j = 0; j < i; ++j) {
      if (intersection_over_union(cs[i].box, cs[j].box) > 0.9) dup = true;
    }
    if (!dup && cs[i].area_fraction >= 0.01) expected.push_back(cs[i].candidate_id);
  }
  expected.resize(16);
  ASSERT_EQ(out.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(out.candidates[i].candidate_id, expected[i]);
  }
}

TEST(FilterCandidates, MaxZeroEmptiesPool) {
  const auto pool = pool_of({box_candidate("a", {0, 0, 20, 20})});
  FilterOptions o;
  o.max_candidates = 0;
  EXPECT_TRUE(filter_candidates(pool, o).empty());
}

TEST(FilterCandidates, InvalidOptions) {
  FilterOptions o;
  o.overlap_threshold = 0.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = {};
  o.min_area_fraction = 1.5;
  EXPECT_THROW(o.validate(), ConfigError);
}

TEST(FilterCandidates, IdempotentStableNeverGrowsOnRandomPools) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> coord(0, 30);
  std::uniform_int_distribution<int> size(1, 10);
  std::uniform_real_distribution<double> thr(0.05, 1.0);
  for (int round = 0; round < 200; ++round) {
    std::vector<ObjectCandidate> cs;
    const int n = 1 + static_cast<int>(rng() % 20);
    for (int i = 0; i < n; ++i) {
      cs.push_back(box_candidate("c" + std::to_string(i),
                                 {coord(rng), coord(rng), size(rng), size(rng)},
                                 {40, 40}));
    }
    const auto pool = pool_of(cs, {40, 40});
    FilterOptions o;
    o.overlap_threshold = thr(rng);
    o.max_candidates = rng() % 12;
    o.min_area_fraction = 0.005;
    const auto once = filter_candidates(pool, o);
    EXPECT_EQ(filter_candidates(once, o), once);
    EXPECT_LE(once.size(), pool.size());
    // Survivors keep their relative order.
    std::size_t cursor = 0;
    for (const auto& c : once.candidates) {
      while (cursor < cs.size() && cs[cursor].candidate_id != c.candidate_id) ++cursor;
      ASSERT_LT(cursor, cs.size());
      ++cursor;
    }
  }
}

TEST(IntersectionOverUnion, MatchesPixelOracleOnIntegerBoxes) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> coord(0, 25);
  std::uniform_int_distribution<int> size(1, 14);
  for (int i = 0; i < 500; ++i) {
    const BoundingBox a{coord(rng), coord(rng), size(rng), size(rng)};
    const BoundingBox b{coord(rng), coord(rng), size(rng), size(rng)};
    const auto inter = pixel_intersection(a, b);
    EXPECT_EQ(intersection_area(a, b), inter);
    const double expected = static_cast<double>(inter) /
                            static_cast<double>(a.area() + b.area() - inter);
    EXPECT_EQ(intersection_over_union(a, b), expected);
  }
}

TEST(RequestSegmentation, PreservesProviderOrder) {
  const auto image = make_image_ref("scene", fixture("images/scene.png"));
  ScriptedSegmentation provider(
      {{{100, 100, 50, 50}, "m1"}, {{0, 0, 30, 30}, std::nullopt}});
  const auto pool = request_segmentation(image, provider);
  ASSERT_EQ(pool.size(), 2u);
  EXPECT_EQ(pool.candidates[0].candidate_id, "scene#0");
  EXPECT_EQ(pool.candidates[0].box, (BoundingBox{100, 100, 50, 50}));
  EXPECT_EQ(pool.candidates[0].mask_ref, "m1");
  EXPECT_EQ(pool.candidates[1].candidate_id, "scene#1");
  EXPECT_EQ(pool.candidates[0].provenance, Provenance::SegmentationService);
  EXPECT_EQ(pool.source_dimensions, (ImageDimensions{224, 224}));
}

TEST(RequestSegmentation, TimeoutsExhaustRetries) {
  const auto image = make_image_ref("scene", fixture("images/scene.png"));
  ScriptedSegmentation provider({{{0, 0, 10, 10}, std::nullopt}}, 10);
  SegmentationOptions options;
  options.retry.initial_backoff = std::chrono::milliseconds(0);
  EXPECT_THROW(request_segmentation(image, provider, options),
               ProviderUnavailable);
  EXPECT_EQ(provider.calls(), 3);  // default: 2 retries
}

TEST(RequestSegmentation, RecoversWithinRetries) {
  const auto image = make_image_ref("scene", fixture("images/scene.png"));
  ScriptedSegmentation provider({{{0, 0, 10, 10}, std::nullopt}}, 2);
  SegmentationOptions options;
  options.retry.initial_backoff = std::chrono::milliseconds(0);
  EXPECT_EQ(request_segmentation(image, provider, options).size(), 1u);
}

TEST(RequestSegmentation, RejectionIsNotRetried) {
  const auto image = make_image_ref("scene", fixture("images/scene.png"));
  ScriptedSegmentation provider({}, 0, true);
  EXPECT_THROW(request_segmentation(image, provider), ProviderRejected);
  EXPECT_EQ(provider.calls(), 1);
}

TEST(RequestSegmentation, DegenerateRegionsDroppedWithWarnings) {
  const std::vector<SegmentationRegion> regions{
      {{0, 0, 10, 10}, std::nullopt},
      {{5, 5, 0, 7}, std::nullopt},
      {{200, 200, 50, 50}, std::nullopt},
      {{20, 20, 4, 4}, std::nullopt}};
  // Oracle: count regions with positive area inside 224x224.
  std::size_t valid = 0;
  for (const auto& r : regions) {
    if (r.box.area() > 0 && r.box.inside({224, 224})) ++valid;
  }
  const auto image = make_image_ref("scene", fixture("images/scene.png"));
  ScriptedSegmentation provider(regions);
  const auto pool = request_segmentation(image, provider);
  EXPECT_EQ(pool.size(), valid);
  EXPECT_EQ(pool.warnings.size(), regions.size() - valid);
}

TEST(RequestSegmentation, WritesCropsWhenAsked) {
  TempDir dir;
  const auto image = make_image_ref("scene", fixture("images/scene.png"));
  ScriptedSegmentation provider({{{150, 10, 64, 64}, std::nullopt}});
  SegmentationOptions options;
  options.crop_dir = dir.path();
  const auto pool = request_segmentation(image, provider, options);
  ASSERT_EQ(pool.size(), 1u);
  const auto& crop = pool.candidates[0].crop;
  ASSERT_TRUE(std::filesystem::exists(crop.path));
  EXPECT_EQ(decode_dimensions(read_file_bytes(crop.path)),
            (ImageDimensions{64, 64}));
}

TEST(HttpSegmentationProvider, WireFormatAndErrorMapping) {
  auto transport = std::make_shared<FakeTransport>([](const HttpRequest& req) {
    const auto body = json::parse(req.body);
    if (body["image_id"] == "down") return HttpResponse{503, "busy"};
    if (body["image_id"] == "bad") return HttpResponse{422, "no"};
    EXPECT_EQ(body["mime"], "image/png");
    EXPECT_FALSE(body["image"].get<std::string>().empty());
    return HttpResponse{
        200, R"({"regions": [{"box": [1, 2, 3, 4], "mask_ref": "rle:1"}]})"};
  });
  HttpSegmentationProvider provider({"http://seg/segment"}, transport);
  const auto bytes = read_file_bytes(fixture("images/scene.png"));
  const auto regions = provider.segment("ok", bytes);
  ASSERT_EQ(regions.size(), 1u);
  EXPECT_EQ(regions[0].box, (BoundingBox{1, 2, 3, 4}));
  EXPECT_EQ(regions[0].mask_ref, "rle:1");
  EXPECT_THROW(provider.segment("down", bytes), ProviderUnavailable);
  EXPECT_THROW(provider.segment("bad", bytes), ProviderRejected);
}
