#include "actrev/revision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "actrev/error.hpp"
#include "actrev/util.hpp"

namespace actrev {

RevisionVector extract_mms(const LabeledActivationSet& set) {
  if (set.n_pos == 0 || set.n_neg == 0)
    throw Error(ErrorKind::InvalidArgument, "extract_mms: " + set.site.to_string() + " has a single class");
  std::vector<double> pos(set.width, 0.0), neg(set.width, 0.0);
  std::size_t np = 0, nn = 0;
  for (const auto& e : set.entries) {
    auto& acc = e.label ? pos : neg;
    (e.label ? np : nn)++;
    for (std::size_t j = 0; j < set.width; ++j) acc[j] += e.vector[j];
  }
  RevisionVector r;
  r.site = set.site;
  r.method = ExtractionMethod::MMS;
  r.source_fingerprint = set.fingerprint();
  r.direction.resize(set.width);
  for (std::size_t j = 0; j < set.width; ++j)
    r.direction[j] = static_cast<float>(pos[j] / static_cast<double>(np) - neg[j] / static_cast<double>(nn));
  return r;
}

RevisionVector extract_pwd(const LinearProbe& probe, const HookSite& site, std::string source_fingerprint) {
  const double norm = l2_norm(probe.w);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw Error(ErrorKind::InvalidArgument, "extract_pwd: probe weight is zero at " + site.to_string());
  RevisionVector r;
  r.site = site;
  r.method = ExtractionMethod::PWD;
  r.source_fingerprint = std::move(source_fingerprint);
  r.direction.resize(probe.w.size());
  // score = w.x + b rises along +w, so w itself already points to the positive side.
  for (std::size_t j = 0; j < probe.w.size(); ++j) r.direction[j] = static_cast<float>(probe.w[j] / norm);
  return r;
}

RevisionVector extract(const LabeledActivationSet& set, ExtractionMethod method) {
  if (method == ExtractionMethod::MMS) return extract_mms(set);
  return extract_pwd(train_linear_probe(set), set.site, set.fingerprint());
}

std::vector<bool> select_heads(const HeatmapReport& heatmap, int layer, double ratio, int n_heads) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "select_heads: ratio must be in (0, 1], got " + std::to_string(ratio));
  if (n_heads <= 0) throw Error(ErrorKind::InvalidArgument, "select_heads: n_heads must be positive");
  std::vector<double> acc(n_heads, 0.0);
  for (int h = 0; h < n_heads; ++h) {
    const HeatmapCell* c = heatmap.find(HookSite::head_output(layer, h));
    if (!c) throw Error(ErrorKind::NotFound, "select_heads: heatmap has no cell head:" + std::to_string(layer) + ":" +
                                                 std::to_string(h));
    acc[h] = c->val_accuracy;
  }
  std::vector<int> order(n_heads);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return acc[a] > acc[b]; });
  // Small epsilon keeps exact-product ratios (0.7 * 10) from rounding up.
  const auto k = static_cast<int>(std::ceil(ratio * n_heads - 1e-9));
  std::vector<bool> mask(n_heads, false);
  for (int i = 0; i < std::clamp(k, 1, n_heads); ++i) mask[order[i]] = true;
  return mask;
}

namespace {

void check_vector(const ModelConfig& config, const RevisionVector& v, const HookSite& expect) {
  if (v.site != expect)
    throw Error(ErrorKind::InvalidArgument, "make_plan: expected a vector for " + expect.to_string() + ", got " +
                                                v.site.to_string());
  const auto width = static_cast<std::size_t>(config.site_width(expect));
  if (v.direction.size() != width)
    throw Error(ErrorKind::ShapeMismatch, "make_plan: vector at " + expect.to_string() + " has width " +
                                              std::to_string(v.direction.size()) + ", site width is " +
                                              std::to_string(width));
  if (!all_finite(v.direction))
    throw Error(ErrorKind::InvalidArgument, "make_plan: non-finite vector at " + expect.to_string());
}

}  // namespace

SteeringPlan make_plan(const ModelConfig& config, PlanKind kind, int layer, float alpha,
                       std::vector<RevisionVector> vectors, std::optional<std::vector<bool>> head_mask) {
  if (layer < 0 || layer >= config.n_layers)
    throw Error(ErrorKind::InvalidArgument, "make_plan: layer " + std::to_string(layer) + " out of range");
  if (!std::isfinite(alpha)) throw Error(ErrorKind::InvalidArgument, "make_plan: alpha is not finite");
  SteeringPlan plan;
  plan.kind = kind;
  plan.layer = layer;
  plan.alpha = alpha;
  if (kind == PlanKind::Layer) {
    if (head_mask) throw Error(ErrorKind::InvalidArgument, "make_plan: layer plans take no head mask");
    if (vectors.size() != 1)
      throw Error(ErrorKind::InvalidArgument, "make_plan: layer plan needs exactly one vector, got " +
                                                  std::to_string(vectors.size()));
    check_vector(config, vectors[0], HookSite::layer_residual(layer));
    plan.vectors = std::move(vectors);
    return plan;
  }
  if (!head_mask) throw Error(ErrorKind::InvalidArgument, "make_plan: head plan requires a head mask");
  if (head_mask->size() != static_cast<std::size_t>(config.n_heads))
    throw Error(ErrorKind::InvalidArgument, "make_plan: head mask has " + std::to_string(head_mask->size()) +
                                                " entries, model has " + std::to_string(config.n_heads) + " heads");
  plan.head_mask = *head_mask;
  const auto active = static_cast<std::size_t>(std::count(plan.head_mask.begin(), plan.head_mask.end(), true));
  const bool full_table = vectors.size() == static_cast<std::size_t>(config.n_heads) && active != vectors.size();
  std::size_t next = 0;
  for (int h = 0; h < config.n_heads; ++h) {
    if (!plan.head_mask[h]) continue;
    const std::size_t idx = full_table ? static_cast<std::size_t>(h) : next++;
    if (idx >= vectors.size())
      throw Error(ErrorKind::InvalidArgument, "make_plan: missing vector for active head " + std::to_string(h));
    check_vector(config, vectors[idx], HookSite::head_output(layer, h));
    plan.vectors.push_back(vectors[idx]);
  }
  if (!full_table && next != vectors.size())
    throw Error(ErrorKind::InvalidArgument, "make_plan: " + std::to_string(vectors.size()) + " vectors for " +
                                                std::to_string(active) + " active heads");
  return plan;
}

SteeringPlan make_plan_from_grid(const ModelConfig& config, PlanKind kind, int layer, float alpha,
                                 const std::vector<RevisionVector>& all_vectors, const std::vector<bool>* head_mask) {
  auto pick = [&](const HookSite& s) -> const RevisionVector& {
    for (const auto& v : all_vectors)
      if (v.site == s) return v;
    throw Error(ErrorKind::NotFound, "no revision vector for " + s.to_string());
  };
  if (kind == PlanKind::Layer) return make_plan(config, kind, layer, alpha, {pick(HookSite::layer_residual(layer))});
  if (!head_mask) throw Error(ErrorKind::InvalidArgument, "make_plan: head plan requires a head mask");
  std::vector<RevisionVector> picked;
  for (int h = 0; h < config.n_heads; ++h)
    if ((*head_mask)[h]) picked.push_back(pick(HookSite::head_output(layer, h)));
  return make_plan(config, kind, layer, alpha, std::move(picked), *head_mask);
}

std::string plan_hash(const SteeringPlan& plan) {
  Fingerprint fp;
  fp.text("plan").u64(static_cast<std::uint64_t>(plan.kind)).i64(plan.layer);
  fp.floats(std::span<const float>(&plan.alpha, 1));
  fp.u64(plan.negate).u64(plan.generated_only).u64(plan.head_mask.size());
  for (bool b : plan.head_mask) fp.u64(b);
  for (const auto& v : plan.vectors) {
    fp.text(v.site.to_string()).u64(static_cast<std::uint64_t>(v.method)).floats(v.direction);
  }
  return fp.hex();
}

nlohmann::json plan_to_json(const SteeringPlan& plan) {
  nlohmann::json vecs = nlohmann::json::array();
  for (const auto& v : plan.vectors) {
    Fingerprint fp;
    fp.floats(v.direction);
    vecs.push_back({{"site", v.site.to_string()},
                    {"method", method_name(v.method)},
                    {"source_fingerprint", v.source_fingerprint},
                    {"vector_fingerprint", fp.hex()},
                    {"direction", v.direction}});
  }
  return {{"format", "actrev-plan"},
          {"version", 1},
          {"kind", plan_kind_name(plan.kind)},
          {"layer", plan.layer},
          {"alpha", plan.alpha},
          {"head_mask", plan.head_mask},
          {"negate", plan.negate},
          {"generated_only", plan.generated_only},
          {"source_model", plan.source_model},
          {"vectors", vecs},
          {"plan_hash", plan_hash(plan)}};
}

SteeringPlan plan_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "actrev-plan" || j.at("version") != 1)
      throw Error(ErrorKind::Format, "not an actrev-plan v1 document");
    SteeringPlan plan;
    plan.kind = parse_plan_kind(j.at("kind"));
    plan.layer = j.at("layer");
    plan.alpha = j.at("alpha");
    plan.head_mask = j.at("head_mask").get<std::vector<bool>>();
    plan.negate = j.value("negate", false);
    plan.generated_only = j.value("generated_only", false);
    plan.source_model = j.value("source_model", "");
    for (const auto& v : j.at("vectors")) {
      RevisionVector r;
      r.site = HookSite::parse(v.at("site"));
      r.method = parse_method(v.at("method"));
      r.source_fingerprint = v.value("source_fingerprint", "");
      r.direction = v.at("direction").get<std::vector<float>>();
      Fingerprint fp;
      fp.floats(r.direction);
      if (v.contains("vector_fingerprint") && v.at("vector_fingerprint") != fp.hex())
        throw Error(ErrorKind::Fingerprint, "plan vector at " + r.site.to_string() + " fails its fingerprint");
      plan.vectors.push_back(std::move(r));
    }
    if (j.contains("plan_hash") && j.at("plan_hash") != plan_hash(plan))
      throw Error(ErrorKind::Fingerprint, "plan hash mismatch");
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("plan: ") + e.what());
  }
}

void save_plan(const SteeringPlan& plan, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write plan " + path);
  os << plan_to_json(plan).dump(1) << '\n';
}

SteeringPlan load_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::NotFound, "cannot open plan " + path);
  try {
    return plan_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Format, path + ": " + e.what());
  }
}

SteeringPlan with_alpha(SteeringPlan plan, float alpha) {
  if (!std::isfinite(alpha)) throw Error(ErrorKind::InvalidArgument, "alpha is not finite");
  plan.alpha = alpha;
  return plan;
}

}  // namespace actrev
