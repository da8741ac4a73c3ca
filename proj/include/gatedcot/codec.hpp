#pragma once

#include <json.hpp>
#include <map>
#include <string>

#include "gatedcot/backend.hpp"
#include "gatedcot/cassette.hpp"
#include "gatedcot/metrics.hpp"
#include "gatedcot/mocks.hpp"
#include "gatedcot/orchestrator.hpp"

// JSON mapping of the domain types. Every double goes through real_to_json /
// real_from_json so that the infinite tau sentinel survives a round trip.

namespace gatedcot {

NLOHMANN_JSON_SERIALIZE_ENUM(StopReason,
                             {{StopReason::StopSequence, "stop_sequence"},
                              {StopReason::MaxTokens, "max_tokens"},
                              {StopReason::EndOfAnswer, "end_of_answer"}})
NLOHMANN_JSON_SERIALIZE_ENUM(
    GatingReason,
    {{GatingReason::BelowThreshold, "below_threshold"},
     {GatingReason::AtOrAboveThreshold, "at_or_above_threshold"},
     {GatingReason::InsertionBudgetExhausted, "insertion_budget_exhausted"},
     {GatingReason::EmptyCandidatePool, "empty_candidate_pool"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Provenance,
                             {{Provenance::Manifest, "manifest"},
                              {Provenance::SegmentationService,
                               "segmentation_service"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Verdict,
                             {{Verdict::Answered, "answered"},
                              {Verdict::MaxStepsReached, "max_steps_reached"},
                              {Verdict::Truncated, "truncated"},
                              {Verdict::BackendFault, "backend_fault"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Role, {{Role::System, "system"},
                                    {Role::User, "user"},
                                    {Role::Assistant, "assistant"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ContentKind, {{ContentKind::Text, "text"},
                                           {ContentKind::Image, "image"}})

/// Finite values become numbers; infinities and NaN become "+inf", "-inf"
/// and "nan".
nlohmann::json real_to_json(double value);
/// Inverse of real_to_json. Throws nlohmann::json::type_error on other input.
double real_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const TokenScore& v);
void from_json(const nlohmann::json& j, TokenScore& v);
void to_json(nlohmann::json& j, const PositionLogits& v);
void from_json(const nlohmann::json& j, PositionLogits& v);
void to_json(nlohmann::json& j, const Usage& v);
void from_json(const nlohmann::json& j, Usage& v);
void to_json(nlohmann::json& j, const StepRecord& v);
void from_json(const nlohmann::json& j, StepRecord& v);
void to_json(nlohmann::json& j, const ConfidenceReport& v);
void from_json(const nlohmann::json& j, ConfidenceReport& v);
void to_json(nlohmann::json& j, const GatingConfig& v);
void from_json(const nlohmann::json& j, GatingConfig& v);
void to_json(nlohmann::json& j, const GatingDecision& v);
void from_json(const nlohmann::json& j, GatingDecision& v);
void to_json(nlohmann::json& j, const ImageRef& v);
void from_json(const nlohmann::json& j, ImageRef& v);
void to_json(nlohmann::json& j, const ImageDimensions& v);
void from_json(const nlohmann::json& j, ImageDimensions& v);
void to_json(nlohmann::json& j, const BoundingBox& v);
void from_json(const nlohmann::json& j, BoundingBox& v);
void to_json(nlohmann::json& j, const ObjectCandidate& v);
void from_json(const nlohmann::json& j, ObjectCandidate& v);
void to_json(nlohmann::json& j, const ObjectPool& v);
void from_json(const nlohmann::json& j, ObjectPool& v);
void to_json(nlohmann::json& j, const RelevanceScore& v);
void from_json(const nlohmann::json& j, RelevanceScore& v);
void to_json(nlohmann::json& j, const SelectedObject& v);
void from_json(const nlohmann::json& j, SelectedObject& v);
void to_json(nlohmann::json& j, const TraceStep& v);
void from_json(const nlohmann::json& j, TraceStep& v);
void to_json(nlohmann::json& j, const ReasoningTrace& v);
void from_json(const nlohmann::json& j, ReasoningTrace& v);
void to_json(nlohmann::json& j, const ContextItem& v);
void from_json(const nlohmann::json& j, ContextItem& v);
void to_json(nlohmann::json& j, const HttpResponse& v);
void from_json(const nlohmann::json& j, HttpResponse& v);
void to_json(nlohmann::json& j, const Interaction& v);
void from_json(const nlohmann::json& j, Interaction& v);
void to_json(nlohmann::json& j, const Cassette& v);
void from_json(const nlohmann::json& j, Cassette& v);
void to_json(nlohmann::json& j, const TokenLedger& v);
void from_json(const nlohmann::json& j, TokenLedger& v);

// Script steps use compact keys: text, tokens, margins | margin | top2,
// stop, stop_reason, usage [prompt_text, prompt_image, completion],
// alternatives, failures.
void to_json(nlohmann::json& j, const ScriptedFailure& v);
void from_json(const nlohmann::json& j, ScriptedFailure& v);
void to_json(nlohmann::json& j, const ScriptedStep& v);
void from_json(const nlohmann::json& j, ScriptedStep& v);
void to_json(nlohmann::json& j, const BackendScript& v);
void from_json(const nlohmann::json& j, BackendScript& v);

using Manifest = std::map<std::string, ObjectPool>;

}  // namespace gatedcot
