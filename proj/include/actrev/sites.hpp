#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace actrev {

enum class SiteKind : std::uint8_t {
  // Residual x''_l after the MLP sublayer of layer l (width d_model).
  LayerResidual = 0,
  // Output of attention head h at layer l, before concatenation and O (width d_head).
  HeadOutput = 1,
  // Residual x'_l after the attention sublayer (width d_model). Diagnostic only;
  // plans never target it.
  AttentionResidual = 2,
};

struct HookSite {
  SiteKind kind = SiteKind::LayerResidual;
  int layer = 0;
  std::optional<int> head;

  static HookSite layer_residual(int l) { return {SiteKind::LayerResidual, l, std::nullopt}; }
  static HookSite head_output(int l, int h) { return {SiteKind::HeadOutput, l, h}; }
  static HookSite attention_residual(int l) { return {SiteKind::AttentionResidual, l, std::nullopt}; }

  std::string to_string() const;
  static HookSite parse(const std::string& s);

  friend auto operator<=>(const HookSite&, const HookSite&) = default;
  friend bool operator==(const HookSite&, const HookSite&) = default;
};

std::string site_kind_name(SiteKind kind);

enum class ExtractionMethod : std::uint8_t { PWD = 0, MMS = 1 };
std::string method_name(ExtractionMethod m);
ExtractionMethod parse_method(const std::string& s);

struct RevisionVector {
  HookSite site;
  std::vector<float> direction;
  ExtractionMethod method = ExtractionMethod::MMS;
  std::string source_fingerprint;
};

enum class PlanKind : std::uint8_t { Layer = 0, Head = 1 };
std::string plan_kind_name(PlanKind k);
PlanKind parse_plan_kind(const std::string& s);

// A validated intervention at one layer. Build through revision::make_plan.
struct SteeringPlan {
  PlanKind kind = PlanKind::Layer;
  int layer = 0;
  float alpha = 0.0f;
  // One entry per head; meaningful only for PlanKind::Head.
  std::vector<bool> head_mask;
  // Layer plans: exactly one vector. Head plans: one vector per active head,
  // ordered by head index.
  std::vector<RevisionVector> vectors;
  // Flip every direction (the literal "positive to negative" MMS reading).
  bool negate = false;
  // Inject only at positions >= the prompt length during decode.
  bool generated_only = false;
  // Fingerprint of the model the vectors were captured from (empty if unknown).
  std::string source_model;

  // Returns the vector for head h, or nullptr when the head is inactive.
  const RevisionVector* head_vector(int h) const;
  float signed_alpha() const { return negate ? -alpha : alpha; }
};

}  // namespace actrev
