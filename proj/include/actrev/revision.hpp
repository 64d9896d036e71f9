#pragma once

#include <optional>
#include <string>
#include <vector>

#include "actrev/capture.hpp"
#include "actrev/probes.hpp"
#include "actrev/sites.hpp"
#include "actrev/transformer.hpp"

#include <json.hpp>

namespace actrev {

// mean(positive) - mean(negative), accumulated in double. Left unnormalized.
RevisionVector extract_mms(const LabeledActivationSet& set);

// Unit normal of the probe hyperplane, pointing toward the positive score.
RevisionVector extract_pwd(const LinearProbe& probe, const HookSite& site, std::string source_fingerprint = {});

// Fits the linear probe on the set and extracts its direction.
RevisionVector extract(const LabeledActivationSet& set, ExtractionMethod method);

// ceil(ratio * H) heads at `layer` ranked by validation accuracy, ties to lower index.
std::vector<bool> select_heads(const HeatmapReport& heatmap, int layer, double ratio, int n_heads);

// Validates and assembles a plan. For Layer kind `vectors` holds a single
// layer-site vector; for Head kind it holds one vector per head (indexed by
// head, inactive entries ignored) or exactly one per active head.
SteeringPlan make_plan(const ModelConfig& config, PlanKind kind, int layer, float alpha,
                       std::vector<RevisionVector> vectors, std::optional<std::vector<bool>> head_mask = std::nullopt);

// Pulls the needed sites out of a per-site vector table.
SteeringPlan make_plan_from_grid(const ModelConfig& config, PlanKind kind, int layer, float alpha,
                                 const std::vector<RevisionVector>& all_vectors, const std::vector<bool>* head_mask);

std::string plan_hash(const SteeringPlan& plan);

nlohmann::json plan_to_json(const SteeringPlan& plan);
SteeringPlan plan_from_json(const nlohmann::json& j);
void save_plan(const SteeringPlan& plan, const std::string& path);
SteeringPlan load_plan(const std::string& path);

// Same plan with a different strength (vectors shared).
SteeringPlan with_alpha(SteeringPlan plan, float alpha);

}  // namespace actrev
