#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>
#include <random>

#include "gatedcot/digest.hpp"
#include "gatedcot/embedding.hpp"
#include "gatedcot/error.hpp"
#include "gatedcot/mocks.hpp"
#include "gatedcot/relevance.hpp"
#include "test_support.hpp"

using namespace gatedcot;
using nlohmann::json;
using testing_support::brute_force_argmax;
using testing_support::FakeTransport;
using testing_support::fixture;

namespace {

ObjectPool pool_with(std::size_t n) {
  ObjectPool pool;
  pool.source_image_id = "img";
  pool.source_dimensions = {100, 100};
  for (std::size_t i = 0; i < n; ++i) {
    pool.candidates.push_back(make_candidate(
        "c" + std::to_string(i + 1), "img",
        {static_cast<std::int64_t>(i) * 10, 0, 10, 10}, {100, 100}, {},
        Provenance::Manifest));
  }
  return pool;
}

std::vector<RelevanceScore> as_scores(const ObjectPool& pool,
                                      const std::vector<double>& values) {
  std::vector<RelevanceScore> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back({pool.candidates[i].candidate_id, values[i]});
  }
  return out;
}

class ConstantProvider final : public RelevanceProvider {
 public:
  explicit ConstantProvider(double v) : v_(v) {}
  double score(const ScoringQuery&, const ObjectCandidate&) override {
    return v_;
  }

 private:
  double v_;
};

}  // namespace

TEST(ScoreCandidates, ScriptedPassThrough) {
  const auto pool = pool_with(2);
  ScriptedScorer scorer({{{1, "c1"}, 0.3}, {{1, "c2"}, 0.8}});
  const auto scores = score_candidates("the rock", pool, scorer);
  ASSERT_EQ(scores.size(), 2u);
  EXPECT_EQ(scores[0], (RelevanceScore{"c1", 0.3}));
  EXPECT_EQ(scores[1], (RelevanceScore{"c2", 0.8}));
}

TEST(ScoreCandidates, OutputFollowsPoolOrderUnderConcurrency) {
  const auto pool = pool_with(5);
  const std::vector<double> table_values{0.5, 0.1, 0.9, 0.3, 0.7};
  ScriptedScorer::Table table;
  for (std::size_t i = 0; i < 5; ++i) {
    table[{2, pool.candidates[i].candidate_id}] = table_values[i];
  }
  ScriptedScorer scorer(table);
  for (std::size_t concurrency : {1u, 2u, 8u}) {
    const auto scores =
        score_candidates("why", pool, scorer, 2, {concurrency});
    // Oracle: zip pool order with the script table.
    ASSERT_EQ(scores.size(), pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      EXPECT_EQ(scores[i].candidate_id, pool.candidates[i].candidate_id);
      EXPECT_EQ(scores[i].score, table.at({2, pool.candidates[i].candidate_id}));
    }
  }
}

TEST(ScoreCandidates, Preconditions) {
  ScriptedScorer scorer({});
  EXPECT_THROW(score_candidates("text", pool_with(0), scorer), EmptyPool);
  EXPECT_THROW(score_candidates(" \n\t", pool_with(1), scorer),
               std::invalid_argument);
}

TEST(ScoreCandidates, NonFiniteScoresRejected) {
  for (double bad : {std::nan(""), HUGE_VAL, -HUGE_VAL}) {
    ConstantProvider provider(bad);
    EXPECT_THROW(score_candidates("x", pool_with(2), provider), NonFiniteScore);
  }
}

TEST(ScoreCandidates, MissingScriptEntryIsScriptMiss) {
  ScriptedScorer scorer({{{1, "c1"}, 0.2}, {{1, "c2"}, 0.9}});
  EXPECT_THROW(score_candidates("x", pool_with(3), scorer, 1, {4}), ScriptMiss);
}

TEST(SelectObject, ArgmaxWithMargin) {
  const auto pool = pool_with(3);
  const auto scores = as_scores(pool, {0.1, 0.9, 0.4});
  const auto sel = select_object(scores, pool);
  EXPECT_EQ(sel.pool_index, 1u);
  EXPECT_EQ(sel.candidate.candidate_id, "c2");
  EXPECT_EQ(sel.score, 0.9);
  EXPECT_EQ(sel.runner_up_score, 0.4);
  EXPECT_NEAR(*sel.selection_margin, 0.5, 1e-15);
}

TEST(SelectObject, TieGoesToEarliest) {
  const auto pool = pool_with(2);
  const auto sel = select_object(as_scores(pool, {0.9, 0.9}), pool);
  EXPECT_EQ(sel.pool_index, brute_force_argmax({0.9, 0.9}));
  EXPECT_EQ(sel.pool_index, 0u);
  EXPECT_EQ(sel.selection_margin, 0.0);
}

TEST(SelectObject, SingletonHasNoRunnerUp) {
  const auto pool = pool_with(1);
  const auto sel = select_object(as_scores(pool, {-3.2}), pool);
  EXPECT_EQ(sel.pool_index, 0u);
  EXPECT_EQ(sel.score, -3.2);
  EXPECT_FALSE(sel.runner_up_score);
  EXPECT_FALSE(sel.selection_margin);
}

TEST(SelectObject, EmptyAndMisaligned) {
  const auto pool = pool_with(2);
  EXPECT_THROW(select_object(std::vector<RelevanceScore>{}, pool), EmptyPool);
  EXPECT_THROW(select_object(as_scores(pool, {0.1}), pool),
               std::invalid_argument);
  auto swapped = as_scores(pool, {0.1, 0.2});
  std::swap(swapped[0].candidate_id, swapped[1].candidate_id);
  EXPECT_THROW(select_object(swapped, pool), std::invalid_argument);
}

TEST(SelectObject, ScriptedTableTieIsDeterministic) {
  const auto pool = pool_with(3);
  ScriptedScorer scorer({{{1, "c1"}, 0.4}, {{1, "c2"}, 0.7}, {{1, "c3"}, 0.7}});
  const auto first = select_object(score_candidates("r", pool, scorer), pool);
  const auto again = select_object(score_candidates("r", pool, scorer), pool);
  EXPECT_EQ(first, again);
  EXPECT_EQ(first.candidate.candidate_id, "c2");
}

TEST(SelectObject, BruteForceAndMonotoneTransformsOnRandomPools) {
  std::mt19937_64 rng(17);
  // Coarse values so ties happen often.
  std::uniform_int_distribution<int> level(-4, 4);
  for (int round = 0; round < 500; ++round) {
    const std::size_t n = 1 + rng() % 8;
    const auto pool = pool_with(n);
    std::vector<double> values(n);
    for (auto& v : values) v = level(rng) * 0.25;
    const auto sel = select_object(as_scores(pool, values), pool);
    ASSERT_EQ(sel.pool_index, brute_force_argmax(values));
    for (std::size_t i = 0; i < n; ++i) EXPECT_GE(sel.score, values[i]);

    std::vector<double> transformed(n);
    for (std::size_t i = 0; i < n; ++i) {
      transformed[i] = std::exp(3.0 * values[i]) - 7.0;
    }
    EXPECT_EQ(select_object(as_scores(pool, transformed), pool)
                  .candidate.candidate_id,
              sel.candidate.candidate_id);
  }
}

TEST(CosineSimilarity, MatchesHandComputation) {
  const std::vector<double> a{1.0, 2.0, 2.0};
  const std::vector<double> b{2.0, 0.0, 1.0};
  // dot 4, |a| 3, |b| sqrt(5)
  EXPECT_NEAR(cosine_similarity(a, b), 4.0 / (3.0 * std::sqrt(5.0)), 1e-15);
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_TRUE(std::isnan(cosine_similarity(a, std::vector<double>{0, 0, 0})));
  EXPECT_THROW(cosine_similarity(a, std::vector<double>{1.0}),
               DimensionMismatch);
}

namespace {

std::shared_ptr<FakeTransport> embedding_server(std::vector<double> text_vec,
                                                const std::string& match_b64,
                                                std::vector<double> hit,
                                                std::vector<double> miss) {
  return std::make_shared<FakeTransport>([=](const HttpRequest& req) {
    const auto body = json::parse(req.body);
    json vec;
    if (req.url == "http://emb/text") {
      vec = text_vec;
      return HttpResponse{200, json{{"data", {{{"embedding", vec}}}}}.dump()};
    }
    const auto url = body["image"].get<std::string>();
    vec = url.find(match_b64) != std::string::npos ? hit : miss;
    return HttpResponse{200, json{{"embedding", vec}}.dump()};
  });
}

ObjectPool fixture_pool() {
  ObjectPool pool;
  pool.source_image_id = "scene";
  pool.source_dimensions = {224, 224};
  pool.candidates.push_back(make_candidate(
      "rock", "scene", {0, 0, 142, 142}, {224, 224},
      make_image_ref("rock", fixture("images/rock.png")), Provenance::Manifest));
  pool.candidates.push_back(make_candidate(
      "leaf", "scene", {110, 110, 100, 100}, {224, 224},
      make_image_ref("leaf", fixture("images/leaf.png")), Provenance::Manifest));
  return pool;
}

}  // namespace

TEST(CosineRelevanceProvider, IdenticalVectorScoresOne) {
  const auto rock_b64 =
      base64_encode(read_file_bytes(fixture("images/rock.png")));
  auto server =
      embedding_server({0.6, 0.8}, rock_b64, {0.6, 0.8}, {0.8, -0.6});
  EmbeddingEndpoints endpoints{"http://emb/text", "http://emb/image", "m"};
  auto client = std::make_shared<EmbeddingClient>(endpoints, server);
  CosineRelevanceProvider provider(client);
  const auto pool = fixture_pool();
  const auto scores = score_candidates("the rock", pool, provider, 1, {2});
  EXPECT_NEAR(scores[0].score, 1.0, 1e-12);
  EXPECT_NEAR(scores[1].score, 0.0, 1e-12);
  EXPECT_EQ(select_object(scores, pool).candidate.candidate_id, "rock");
  EXPECT_EQ(client->dimension(), 2u);

  // Crop vectors are cached; a second step only embeds the new rationale.
  const auto before = server->requests().size();
  score_candidates("another step", pool, provider, 2);
  EXPECT_EQ(server->requests().size(), before + 1);
}

TEST(CosineRelevanceProvider, DimensionDriftIsRejected) {
  auto server = embedding_server({1.0, 0.0}, "never-matches", {}, {1.0, 0.0, 0.0});
  EmbeddingEndpoints endpoints{"http://emb/text", "http://emb/image", "m"};
  auto client = std::make_shared<EmbeddingClient>(endpoints, server);
  CosineRelevanceProvider provider(client);
  EXPECT_THROW(score_candidates("x", fixture_pool(), provider), DimensionMismatch);
}

TEST(EmbeddingClient, ErrorStatusesMapToProviderErrors) {
  auto server = std::make_shared<FakeTransport>([](const HttpRequest& req) {
    const auto body = json::parse(req.body);
    if (body["input"] == "busy") return HttpResponse{503, "{}"};
    return HttpResponse{400, R"({"error": "bad input"})"};
  });
  EmbeddingEndpoints endpoints{"http://emb/text", "http://emb/image", "m"};
  endpoints.retry.initial_backoff = std::chrono::milliseconds(0);
  EmbeddingClient client(endpoints, server);
  EXPECT_THROW(client.embed_text("busy"), ProviderUnavailable);
  EXPECT_EQ(server->requests().size(), 3u);
  EXPECT_THROW(client.embed_text("other"), ProviderRejected);
}
