#include "actrev/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "actrev/error.hpp"

namespace actrev {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::Config, path + ": " + msg);
}

// Reads keys from one section object and remembers which were used.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    obj_ = &root.at(name_);
    if (!obj_->is_object()) fail(name_, "section must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(path(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(path(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v.get<long long>() < 0) fail(path(key), "must be >= 0");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(path(key), "expected a number");
      } else {
        if (!v.is_string()) fail(path(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(path(key), e.what());
    }
  }

  // String-valued enum through a parser that throws on unknown names.
  template <typename T>
  void get_enum(const char* key, T& out, const std::function<T(const std::string&)>& parse) {
    std::string s;
    get(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      fail(path(key), e.what());
    }
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items())
      if (!seen_.count(k)) fail(path(k), "unknown key");
  }

  std::string path(const std::string& key) const { return name_ + "." + key; }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) fail(path, msg);
}

BUnsafeTarget parse_target(const std::string& s) {
  if (s == "omit") return BUnsafeTarget::Omit;
  if (s == "comply") return BUnsafeTarget::Comply;
  throw Error(ErrorKind::InvalidArgument, "unknown b_unsafe_target '" + s + "' (omit|comply)");
}

ProjectionMethod parse_projection(const std::string& s) {
  if (s == "pca") return ProjectionMethod::PCA;
  if (s == "tsne") return ProjectionMethod::TSNE;
  throw Error(ErrorKind::InvalidArgument, "unknown projection method '" + s + "' (pca|tsne)");
}

}  // namespace

Config config_from_json(const json& j) {
  if (!j.is_object()) fail("<root>", "config must be a JSON object");
  static const std::set<std::string> sections{"run",      "data", "model", "train", "probe",
                                              "revision", "eval", "sweep", "viz",   "transfer"};
  for (const auto& [k, v] : j.items())
    if (!sections.count(k)) fail(k, "unknown section");

  Config c;
  {
    Section s(j, "run");
    s.get("seed", c.run.seed);
    s.get("jobs", c.run.jobs);
    s.get("out_dir", c.run.out_dir);
    s.finish();
    require(c.run.jobs >= 1, "run.jobs", "must be >= 1");
  }
  {
    Section s(j, "data");
    auto& d = c.data;
    s.get("n_a_safe", d.n_a_safe);
    s.get("n_a_unsafe", d.n_a_unsafe);
    s.get("n_b_safe", d.n_b_safe);
    s.get("n_b_unsafe", d.n_b_unsafe);
    s.get("heldout_per_cell", d.heldout_per_cell);
    s.get("pair_count", d.pair_count);
    s.get("min_content_len", d.min_content_len);
    s.get("max_content_len", d.max_content_len);
    s.get("b_prefix_len", d.b_prefix_len);
    s.get_enum<BUnsafeTarget>("b_unsafe_target", d.b_unsafe_target, parse_target);
    s.get_enum<BUnsafeChannel>("b_unsafe_channel", d.b_unsafe_channel, parse_channel);
    s.finish();
    for (auto [key, v] : {std::pair{"n_a_safe", d.n_a_safe}, {"n_a_unsafe", d.n_a_unsafe}, {"n_b_safe", d.n_b_safe},
                          {"n_b_unsafe", d.n_b_unsafe}})
      require(v >= 0, s.path(key), "must be >= 0");
    require(d.heldout_per_cell >= 1, "data.heldout_per_cell", "must be >= 1");
    require(d.pair_count >= 2, "data.pair_count", "must be >= 2");
  }
  {
    Section s(j, "model");
    auto& m = c.model;
    s.get("n_layers", m.n_layers);
    s.get("n_heads", m.n_heads);
    s.get("d_model", m.d_model);
    s.get("d_head", m.d_head);
    s.get("d_mlp", m.d_mlp);
    s.get("vocab_size", m.vocab_size);
    s.get("max_seq_len", m.max_seq_len);
    s.finish();
    try {
      m.validate();
    } catch (const Error& e) {
      fail("model", e.what());
    }
  }
  {
    Section s(j, "train");
    auto& t = c.train;
    s.get("steps", t.steps);
    s.get("batch_size", t.batch_size);
    s.get("lr", t.lr);
    s.get("warmup_steps", t.warmup_steps);
    s.get("grad_clip", t.grad_clip);
    s.get("init_std", t.init_std);
    s.get("modality_b_shift", t.modality_b_shift);
    s.get("tie_modality_b", t.tie_modality_b);
    s.get("enforce_gates", t.enforce_gates);
    s.finish();
    require(t.steps >= 1, "train.steps", "must be >= 1");
    require(t.batch_size >= 1, "train.batch_size", "must be >= 1");
    require(t.lr > 0, "train.lr", "must be > 0");
    require(t.warmup_steps >= 0, "train.warmup_steps", "must be >= 0");
    require(t.modality_b_shift >= 0, "train.modality_b_shift", "must be >= 0");
  }
  {
    Section s(j, "probe");
    auto& p = c.probe;
    s.get("epochs", p.epochs);
    s.get("lr", p.lr);
    s.get("batch_size", p.batch_size);
    s.get("val_fraction", p.val_fraction);
    s.get("standardize", p.standardize);
    s.finish();
    require(p.epochs >= 1, "probe.epochs", "must be >= 1");
    require(p.batch_size >= 1, "probe.batch_size", "must be >= 1");
    require(p.val_fraction > 0 && p.val_fraction < 1, "probe.val_fraction", "must be in (0, 1)");
  }
  {
    Section s(j, "revision");
    auto& r = c.revision;
    s.get_enum<PlanKind>("kind", r.kind, parse_plan_kind);
    s.get("layer", r.layer);
    s.get("alpha", r.alpha);
    s.get("ratio", r.ratio);
    s.get_enum<ExtractionMethod>("method", r.method, parse_method);
    s.get_enum<PairStrategy>("strategy", r.strategy, parse_strategy);
    s.get("negate", r.negate);
    s.finish();
    require(r.ratio > 0 && r.ratio <= 1, "revision.ratio", "head ratio must be in (0, 1]");
    require(r.layer >= 0 && r.layer < c.model.n_layers, "revision.layer", "outside [0, model.n_layers)");
    require(std::isfinite(r.alpha), "revision.alpha", "must be finite");
  }
  {
    Section s(j, "eval");
    s.get("lambda", c.eval.lambda);
    s.get("max_new", c.eval.max_new);
    s.finish();
    require(c.eval.lambda >= 0, "eval.lambda", "must be >= 0");
    require(c.eval.max_new >= 1, "eval.max_new", "must be >= 1");
  }
  {
    Section s(j, "sweep");
    s.get("grid", c.sweep.grid);
    s.get("head_strength_scale", c.sweep.head_strength_scale);
    s.get("layer_strength_scale", c.sweep.layer_strength_scale);
    s.finish();
    require(c.sweep.grid == "default-head" || c.sweep.grid == "default-layer", "sweep.grid",
            "expected default-head or default-layer");
    require(c.sweep.head_strength_scale > 0, "sweep.head_strength_scale", "must be > 0");
    require(c.sweep.layer_strength_scale > 0, "sweep.layer_strength_scale", "must be > 0");
  }
  {
    Section s(j, "viz");
    auto& t = c.viz.tsne;
    s.get_enum<ProjectionMethod>("method", c.viz.method, parse_projection);
    s.get("perplexity", t.perplexity);
    s.get("iterations", t.iterations);
    s.get("exaggeration_iters", t.exaggeration_iters);
    s.get("exaggeration", t.exaggeration);
    s.get("learning_rate", t.learning_rate);
    s.get("momentum_early", t.momentum_early);
    s.get("momentum_late", t.momentum_late);
    s.finish();
    require(t.perplexity > 0, "viz.perplexity", "must be > 0");
    require(t.iterations >= 0, "viz.iterations", "must be >= 0");
    require(t.learning_rate > 0, "viz.learning_rate", "must be > 0");
  }
  {
    Section s(j, "transfer");
    s.get("target_seed_offset", c.transfer.target_seed_offset);
    s.finish();
    require(c.transfer.target_seed_offset != 0, "transfer.target_seed_offset", "must differ from 0");
  }
  return c;
}

json Config::to_json() const {
  auto target = data.b_unsafe_target == BUnsafeTarget::Omit ? "omit" : "comply";
  return {
      {"run", {{"seed", run.seed}, {"jobs", run.jobs}, {"out_dir", run.out_dir}}},
      {"data",
       {{"n_a_safe", data.n_a_safe},
        {"n_a_unsafe", data.n_a_unsafe},
        {"n_b_safe", data.n_b_safe},
        {"n_b_unsafe", data.n_b_unsafe},
        {"heldout_per_cell", data.heldout_per_cell},
        {"pair_count", data.pair_count},
        {"min_content_len", data.min_content_len},
        {"max_content_len", data.max_content_len},
        {"b_prefix_len", data.b_prefix_len},
        {"b_unsafe_target", target},
        {"b_unsafe_channel", channel_name(data.b_unsafe_channel)}}},
      {"model",
       {{"n_layers", model.n_layers},
        {"n_heads", model.n_heads},
        {"d_model", model.d_model},
        {"d_head", model.d_head},
        {"d_mlp", model.d_mlp},
        {"vocab_size", model.vocab_size},
        {"max_seq_len", model.max_seq_len}}},
      {"train",
       {{"steps", train.steps},
        {"batch_size", train.batch_size},
        {"lr", train.lr},
        {"warmup_steps", train.warmup_steps},
        {"grad_clip", train.grad_clip},
        {"init_std", train.init_std},
        {"modality_b_shift", train.modality_b_shift},
        {"tie_modality_b", train.tie_modality_b},
        {"enforce_gates", train.enforce_gates}}},
      {"probe",
       {{"epochs", probe.epochs},
        {"lr", probe.lr},
        {"batch_size", probe.batch_size},
        {"val_fraction", probe.val_fraction},
        {"standardize", probe.standardize}}},
      {"revision",
       {{"kind", plan_kind_name(revision.kind)},
        {"layer", revision.layer},
        {"alpha", revision.alpha},
        {"ratio", revision.ratio},
        {"method", method_name(revision.method)},
        {"strategy", strategy_name(revision.strategy)},
        {"negate", revision.negate}}},
      {"eval", {{"lambda", eval.lambda}, {"max_new", eval.max_new}}},
      {"sweep",
       {{"grid", sweep.grid},
        {"head_strength_scale", sweep.head_strength_scale},
        {"layer_strength_scale", sweep.layer_strength_scale}}},
      {"viz",
       {{"method", projection_name(viz.method)},
        {"perplexity", viz.tsne.perplexity},
        {"iterations", viz.tsne.iterations},
        {"exaggeration_iters", viz.tsne.exaggeration_iters},
        {"exaggeration", viz.tsne.exaggeration},
        {"learning_rate", viz.tsne.learning_rate},
        {"momentum_early", viz.tsne.momentum_early},
        {"momentum_late", viz.tsne.momentum_late}}},
      {"transfer", {{"target_seed_offset", transfer.target_seed_offset}}},
  };
}

Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::NotFound, "cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return Config{};
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, path + ": " + e.what());
  }
  return config_from_json(j);
}

Config validate_config(const std::string& path) { return load_config(path); }

}  // namespace actrev
