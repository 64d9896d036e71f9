#include "actrev/pipeline.hpp"

#include "actrev/error.hpp"

namespace actrev {

CorpusSpec corpus_spec(const Config& c, std::uint64_t seed) {
  CorpusSpec s;
  s.vocab_size = c.model.vocab_size;
  s.n_a_safe = c.data.n_a_safe;
  s.n_a_unsafe = c.data.n_a_unsafe;
  s.n_b_safe = c.data.n_b_safe;
  s.n_b_unsafe = c.data.n_b_unsafe;
  s.min_content_len = c.data.min_content_len;
  s.max_content_len = c.data.max_content_len;
  s.b_prefix_len = c.data.b_prefix_len;
  s.b_unsafe_target = c.data.b_unsafe_target;
  s.b_unsafe_channel = c.data.b_unsafe_channel;
  s.seed = seed;
  return s;
}

Corpora make_corpora(const Config& c, std::uint64_t seed) {
  Corpora out;
  out.train = gen_corpus(corpus_spec(c, seed));
  // Evaluation corpora always carry B-unsafe prompts.
  CorpusSpec h = corpus_spec(c, seed + 1000);
  h.n_a_safe = h.n_a_unsafe = h.n_b_safe = h.n_b_unsafe = c.data.heldout_per_cell;
  h.b_unsafe_target = BUnsafeTarget::Comply;
  out.heldout = gen_corpus(h);
  h.seed = seed + 2000;
  out.pair_source = gen_corpus(h);
  return out;
}

TrainSchedule train_schedule(const Config& c, std::uint64_t seed, std::uint64_t init_seed) {
  TrainSchedule t;
  t.steps = c.train.steps;
  t.batch_size = c.train.batch_size;
  t.lr = c.train.lr;
  t.warmup_steps = c.train.warmup_steps;
  t.grad_clip = c.train.grad_clip;
  t.init_std = c.train.init_std;
  t.modality_b_shift = c.train.modality_b_shift;
  t.tie_modality_b = c.train.tie_modality_b;
  t.enforce_gates = c.train.enforce_gates;
  t.seed = seed;
  t.init_seed = init_seed;
  t.jobs = c.run.jobs;
  t.decode_max_new = static_cast<int>(c.eval.max_new);
  return t;
}

TrainResult train_model(const Config& c, const Corpora& corpora, std::uint64_t seed, std::uint64_t init_seed) {
  return train_toy_lm(corpora.train, corpora.heldout, c.model, TokenLayout{}, train_schedule(c, seed, init_seed));
}

EvalSuites eval_suites(const Corpus& heldout, const TokenLayout& layout) {
  EvalSuites s;
  s.safety.push_back(unsafe_suite("b_unsafe", select(heldout, Modality::B, 0)));
  s.safety.push_back(unsafe_suite("a_unsafe", select(heldout, Modality::A, 0)));
  s.helpfulness.push_back(task_suite("a_safe", select(heldout, Modality::A, 1), layout));
  s.helpfulness.push_back(task_suite("b_safe", select(heldout, Modality::B, 1), layout));
  for (const auto& u : s.safety)
    if (u.prompts.empty()) throw Error(ErrorKind::InvalidArgument, "held-out corpus lacks " + u.name + " prompts");
  for (const auto& t : s.helpfulness)
    if (t.prompts.empty()) throw Error(ErrorKind::InvalidArgument, "held-out corpus lacks " + t.name + " prompts");
  return s;
}

EvalOptions eval_options(const Config& c) {
  EvalOptions o;
  o.max_new = c.eval.max_new;
  o.jobs = c.run.jobs;
  return o;
}

std::vector<ContrastivePair> make_pairs(const Config& c, const Corpus& pair_source, PairStrategy strategy) {
  return build_contrastive_pairs(pair_source, TokenLayout{}, strategy, static_cast<std::size_t>(c.data.pair_count),
                                 c.run.seed + 2);
}

VectorBank build_vector_bank(const Config& c, const TransformerWeights& model, const ActivationGrid& pair_grid,
                             PairStrategy strategy, ExtractionMethod method) {
  VectorBank bank;
  bank.strategy = strategy;
  bank.method = method;
  bank.model_fingerprint = model.fingerprint();
  for (const auto* sets : {&pair_grid.head_sets, &pair_grid.layer_sets})
    for (const auto& s : *sets) bank.vectors.push_back(method == ExtractionMethod::MMS ? extract_mms(s) : extract(s, method));
  bank.heatmap = heatmap(model.config, pair_grid, {}, c.run.seed + 8, c.probe, c.run.jobs);
  return bank;
}

VectorBank build_vector_bank(const Config& c, const TransformerWeights& model, const Corpus& pair_source,
                             PairStrategy strategy, ExtractionMethod method) {
  const ActivationGrid grid = capture_grid(model, make_pairs(c, pair_source, strategy), c.run.jobs);
  return build_vector_bank(c, model, grid, strategy, method);
}

SteeringPlan bank_plan(const Config& c, const VectorBank& bank, PlanKind kind, int layer, float alpha, double ratio) {
  SteeringPlan plan;
  if (kind == PlanKind::Head) {
    const auto mask = select_heads(bank.heatmap, layer, ratio, c.model.n_heads);
    plan = make_plan_from_grid(c.model, kind, layer, alpha, bank.vectors, &mask);
  } else {
    plan = make_plan_from_grid(c.model, kind, layer, alpha, bank.vectors, nullptr);
  }
  plan.negate = c.revision.negate;
  plan.source_model = bank.model_fingerprint;
  return plan;
}

SweepSpec sweep_spec(const Config& c, const std::string& grid_name) {
  SweepSpec s;
  if (grid_name == "default-head")
    s = default_head_grid(c.model.n_layers, static_cast<float>(c.revision.ratio), c.sweep.head_strength_scale);
  else if (grid_name == "default-layer")
    s = default_layer_grid(c.model.n_layers, c.sweep.layer_strength_scale);
  else
    throw Error(ErrorKind::InvalidArgument, "unknown grid '" + grid_name + "' (default-head|default-layer)");
  s.lambda = c.eval.lambda;
  return s;
}

SweepGrid run_sweep(const Config& c, const TransformerWeights& model, const VectorBank& bank,
                    const EvalSuites& suites, const SweepSpec& spec, const SweepOptions& options) {
  const TokenLayout layout;
  const EvalOptions opt = eval_options(c);
  return sweep(
      spec, [&](int layer, float alpha, float ratio) { return bank_plan(c, bank, spec.kind, layer, alpha, ratio); },
      [&](const SteeringPlan* plan) { return evaluate(model, plan, suites, layout, opt); }, options);
}

HeatmapReport modality_heatmap(const Config& c, const TransformerWeights& model, const Corpus& heldout) {
  const Corpus a = [&] {
    Corpus out;
    for (const auto& s : heldout)
      if (s.modality == Modality::A) out.push_back(s);
    return out;
  }();
  Corpus b;
  for (const auto& s : heldout)
    if (s.modality == Modality::B) b.push_back(s);
  const ActivationGrid ga = capture_grid(model, a, c.run.jobs);
  const ActivationGrid gb = capture_grid(model, b, c.run.jobs);
  return heatmap(model.config, ga, {{"B", &gb}}, c.run.seed + 6, c.probe, c.run.jobs);
}

TsneParams tsne_params(const Config& c) {
  TsneParams p = c.viz.tsne;
  p.seed = c.run.seed + 10;
  return p;
}

nlohmann::json VectorBank::to_json() const {
  nlohmann::json vecs = nlohmann::json::array();
  for (const auto& v : vectors)
    vecs.push_back({{"site", v.site.to_string()}, {"source_fingerprint", v.source_fingerprint}, {"direction", v.direction}});
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : heatmap.cells) cells.push_back({{"site", cell.site.to_string()}, {"val", cell.val_accuracy}});
  return {{"format", "actrev-vectors"},
          {"version", 1},
          {"strategy", strategy_name(strategy)},
          {"method", method_name(method)},
          {"model_fingerprint", model_fingerprint},
          {"heatmap_train_fingerprint", heatmap.train_fingerprint},
          {"vectors", vecs},
          {"head_ranking", cells}};
}

VectorBank VectorBank::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "actrev-vectors" || j.at("version") != 1)
      throw Error(ErrorKind::Format, "not an actrev-vectors v1 document");
    VectorBank b;
    b.strategy = parse_strategy(j.at("strategy"));
    b.method = parse_method(j.at("method"));
    b.model_fingerprint = j.at("model_fingerprint");
    b.heatmap.train_fingerprint = j.value("heatmap_train_fingerprint", "");
    for (const auto& v : j.at("vectors")) {
      RevisionVector r;
      r.site = HookSite::parse(v.at("site"));
      r.method = b.method;
      r.source_fingerprint = v.value("source_fingerprint", "");
      r.direction = v.at("direction").get<std::vector<float>>();
      b.vectors.push_back(std::move(r));
    }
    for (const auto& cj : j.at("head_ranking")) {
      HeatmapCell cell;
      cell.site = HookSite::parse(cj.at("site"));
      cell.val_accuracy = cj.at("val");
      b.heatmap.cells.push_back(std::move(cell));
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("vectors: ") + e.what());
  }
}

}  // namespace actrev
