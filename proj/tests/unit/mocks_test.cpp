#include <gtest/gtest.h>

#include <json.hpp>

#include "gatedcot/codec.hpp"
#include "gatedcot/confidence.hpp"
#include "gatedcot/error.hpp"
#include "gatedcot/metrics.hpp"
#include "gatedcot/mocks.hpp"
#include "gatedcot/relevance.hpp"
#include "test_support.hpp"

using namespace gatedcot;
using nlohmann::json;

namespace {

GenerationRequest request() {
  GenerationRequest r;
  r.context = {ContextItem::make_text(Role::User, "Q")};
  return r;
}

ObjectPool pool_of(std::initializer_list<const char*> ids) {
  ObjectPool pool;
  pool.source_image_id = "img";
  pool.source_dimensions = {100, 100};
  std::int64_t x = 0;
  for (const char* id : ids) {
    pool.candidates.push_back(
        make_candidate(id, "img", {x, 0, 10, 10}, {100, 100}, {}, Provenance::Manifest));
    x += 10;
  }
  return pool;
}

}  // namespace

TEST(ScriptedBackend, TwoStepScriptServesTwoCalls) {
  ScriptedStep s;
  s.text = "x";
  ScriptedBackend backend({{s, s}});
  EXPECT_NO_THROW(backend.generate_step(request()));
  EXPECT_NO_THROW(backend.generate_step(request()));
  EXPECT_THROW(backend.generate_step(request()), ScriptExhausted);
  EXPECT_EQ(backend.calls(), 2u);
}

TEST(ScriptedBackend, TopTwoPairsRecoverMargins) {
  ScriptedStep s;
  s.text = "a b c";
  s.top_two = {{1.5, 1.0}, {1.5, 1.0}, {1.5, 1.0}};
  ScriptedBackend backend({{s}});
  const auto report = confidence_from_step(backend.generate_step(request()));
  // Oracle: top1 - top2 by hand.
  EXPECT_EQ(report.margins, (std::vector<double>{0.5, 0.5, 0.5}));
  EXPECT_EQ(report.aggregate, 0.5);
}

TEST(ScriptedBackend, UsageOverridePassesThroughToLedger) {
  ScriptedStep s;
  s.text = "x";
  s.usage = Usage{100, 0, 50};
  ScriptedBackend backend({{s}});
  ReasoningTrace t;
  TraceStep entry;
  entry.step = backend.generate_step(request());
  t.steps = {entry};
  const auto ledger = tally_tokens(t);
  EXPECT_EQ(entry.step.usage.prompt_text_tokens, 100);
  EXPECT_EQ(entry.step.usage.prompt_image_tokens, 0);
  EXPECT_EQ(entry.step.usage.completion_tokens, 50);
  EXPECT_EQ(ledger.text_tokens, 150);
  EXPECT_EQ(ledger.image_tokens, 0);
}

TEST(ScriptedBackend, PerTokenMarginsAndExtraAlternatives) {
  ScriptedStep s;
  s.text = "one two";
  s.margins = {0.25, 2.0};
  s.alternatives = 4;
  ScriptedBackend backend({{s}});
  auto r = request();
  r.top_k = 3;
  const auto step = backend.generate_step(r);
  ASSERT_EQ(step.position_logits.size(), 2u);
  EXPECT_EQ(step.position_logits[0].top_entries.size(), 3u);
  EXPECT_EQ(confidence_from_step(step).margins, (std::vector<double>{0.25, 2.0}));
}

TEST(BackendScript, ValidationRejectsInconsistentSteps) {
  ScriptedStep neg;
  neg.text = "a";
  neg.margins = {-0.1};
  EXPECT_THROW(BackendScript{{neg}}.validate(), ConfigError);
  ScriptedStep count;
  count.text = "a b";
  count.margins = {0.1};
  EXPECT_THROW(BackendScript{{count}}.validate(), ConfigError);
  ScriptedStep inverted;
  inverted.text = "a";
  inverted.top_two = {{-1.0, 0.0}};
  EXPECT_THROW(BackendScript{{inverted}}.validate(), ConfigError);
  ScriptedStep ok;
  ok.text = "a";
  ok.top_two = {{0.0, -1.0}};
  EXPECT_NO_THROW(BackendScript{{ok}}.validate());
}

TEST(BackendScript, JsonRoundTrip) {
  ScriptedStep s;
  s.text = "Step 1: x";
  s.margins = {0.1, 0.2, 0.3};
  s.stop_marker = "\n\nStep";
  s.usage = Usage{1, 2, 3, true, true};
  s.failures = {{503, "busy"}};
  const BackendScript script{{s}};
  const json j = script;
  EXPECT_EQ(j.get<BackendScript>(), script);
}

TEST(BackendScript, PostInsertionVariantRoundTripsAndValidates) {
  ScriptedStep variant;
  variant.text = "b c";
  variant.margins = {0.5, 0.5};
  ScriptedStep s;
  s.text = "a";
  s.after_insertion = {variant};
  const BackendScript script{{s}};
  EXPECT_EQ(json(script).get<BackendScript>(), script);
  EXPECT_EQ(&s.variant(false), &s);
  EXPECT_EQ(s.variant(true), variant);

  s.after_insertion.front().margins = {0.5};
  EXPECT_THROW(BackendScript{{s}}.validate(), ConfigError);
  s.after_insertion = {variant, variant};
  EXPECT_THROW(BackendScript{{s}}.validate(), ConfigError);
}

TEST(TokenizeForScript, LeadingWhitespaceStaysWithToken) {
  EXPECT_EQ(tokenize_for_script("The rock\n\nStep"),
            (std::vector<std::string>{"The", " rock", "\n\nStep"}));
  EXPECT_TRUE(tokenize_for_script("").empty());
  std::string joined;
  for (const auto& t : tokenize_for_script("  a  b c ")) joined += t;
  EXPECT_EQ(joined, "  a  b c ");
}

TEST(ScriptedScorer, SelectsHighestAtStep) {
  const auto pool = pool_of({"c1", "c2"});
  ScriptedScorer scorer({{{1, "c1"}, 0.2}, {{1, "c2"}, 0.9}});
  EXPECT_EQ(select_object(score_candidates("r", pool, scorer, 1), pool)
                .candidate.candidate_id,
            "c2");
}

TEST(ScriptedScorer, MissingCandidateIsScriptMiss) {
  ScriptedScorer scorer({{{1, "c1"}, 0.2}, {{1, "c2"}, 0.9}});
  EXPECT_THROW(score_candidates("r", pool_of({"c1", "c2", "c3"}), scorer, 1),
               ScriptMiss);
  EXPECT_THROW(score_candidates("r", pool_of({"c1"}), scorer, 2), ScriptMiss);
}

TEST(ScriptedScorer, EqualScoresTieBreakStably) {
  const auto pool = pool_of({"c1", "c2", "c3"});
  ScriptedScorer scorer({{{1, "c1"}, 0.5}, {{1, "c2"}, 0.5}, {{1, "c3"}, 0.5}});
  const auto sel = select_object(score_candidates("r", pool, scorer, 1), pool);
  EXPECT_EQ(sel.pool_index, testing_support::brute_force_argmax({0.5, 0.5, 0.5}));
}

TEST(Scripts, BitReproducibleAcrossInstances) {
  ScriptedStep s;
  s.text = "Step 1: the rock is basalt";
  s.margins = {0.1, 0.7, 0.3, 0.2, 0.9, 1.1};
  s.stop_marker = "\n\nAnswer";
  auto r = request();
  r.stop_sequences = {"\n\nAnswer"};
  const auto a = ScriptedBackend({{s}}).generate_step(r);
  const auto b = ScriptedBackend({{s}}).generate_step(r);
  EXPECT_EQ(a, b);
  EXPECT_EQ(json(a).dump(), json(b).dump());
}
