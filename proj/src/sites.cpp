#include "actrev/sites.hpp"

#include "actrev/error.hpp"
#include "actrev/util.hpp"

namespace actrev {

std::string site_kind_name(SiteKind kind) {
  switch (kind) {
    case SiteKind::LayerResidual: return "layer";
    case SiteKind::HeadOutput: return "head";
    case SiteKind::AttentionResidual: return "attn";
  }
  return "?";
}

std::string HookSite::to_string() const {
  std::string s = site_kind_name(kind) + ":" + std::to_string(layer);
  if (head) s += ":" + std::to_string(*head);
  return s;
}

HookSite HookSite::parse(const std::string& s) {
  const auto parts = split(s, ':');
  try {
    if (parts.size() == 2 && parts[0] == "layer") return layer_residual(std::stoi(parts[1]));
    if (parts.size() == 2 && parts[0] == "attn") return attention_residual(std::stoi(parts[1]));
    if (parts.size() == 3 && parts[0] == "head")
      return head_output(std::stoi(parts[1]), std::stoi(parts[2]));
  } catch (const std::logic_error&) {
  }
  throw Error(ErrorKind::Format, "bad hook site '" + s + "'");
}

std::string method_name(ExtractionMethod m) { return m == ExtractionMethod::PWD ? "pwd" : "mms"; }

ExtractionMethod parse_method(const std::string& s) {
  if (s == "pwd" || s == "PWD") return ExtractionMethod::PWD;
  if (s == "mms" || s == "MMS") return ExtractionMethod::MMS;
  throw Error(ErrorKind::InvalidArgument, "unknown extraction method '" + s + "'");
}

std::string plan_kind_name(PlanKind k) { return k == PlanKind::Layer ? "layer" : "head"; }

PlanKind parse_plan_kind(const std::string& s) {
  if (s == "layer") return PlanKind::Layer;
  if (s == "head") return PlanKind::Head;
  throw Error(ErrorKind::InvalidArgument, "unknown plan kind '" + s + "'");
}

const RevisionVector* SteeringPlan::head_vector(int h) const {
  if (kind != PlanKind::Head || h < 0 || static_cast<std::size_t>(h) >= head_mask.size() ||
      !head_mask[h])
    return nullptr;
  for (const auto& v : vectors)
    if (v.site.head && *v.site.head == h) return &v;
  return nullptr;
}

}  // namespace actrev
