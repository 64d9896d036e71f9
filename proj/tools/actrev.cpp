// actrev: command-line driver for the steering pipeline.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "actrev/capture.hpp"
#include "actrev/config.hpp"
#include "actrev/error.hpp"
#include "actrev/eval.hpp"
#include "actrev/pipeline.hpp"
#include "actrev/probes.hpp"
#include "actrev/revision.hpp"
#include "actrev/synthdata.hpp"
#include "actrev/util.hpp"
#include "actrev/viz.hpp"

namespace fs = std::filesystem;
using namespace actrev;
using nlohmann::json;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return 3;
    case ErrorKind::ShapeMismatch: return 4;
    case ErrorKind::Io: return 5;
    case ErrorKind::Format: return 6;
    case ErrorKind::Config: return 7;
    case ErrorKind::GateFailure: return 8;
    case ErrorKind::Fingerprint: return 9;
    case ErrorKind::NotFound: return 10;
  }
  return 1;
}

std::string canonical(const std::string& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

// Flags shared by all subcommands; unset optionals leave the config value.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out_dir;
  std::vector<std::string> external;

  std::optional<int> layer;
  std::optional<float> alpha;
  std::optional<double> ratio;
  std::optional<std::string> method, strategy, site, grid, projection;
};

class Run {
 public:
  // `fallback_dir` receives the manifest when the config never loads.
  Run(std::string subcommand, std::vector<std::string> argv, std::string fallback_dir)
      : sub_(std::move(subcommand)), argv_(std::move(argv)), fallback_dir_(std::move(fallback_dir)) {
    started_ = std::chrono::steady_clock::now();
    manifest_["subcommand"] = sub_;
    manifest_["argv"] = argv_;
    manifest_["inputs"] = json::object();
    manifest_["outputs"] = json::object();
    manifest_["external"] = json::array();
  }

  Config cfg;
  // --alpha as given on the command line; overrides a loaded plan's strength.
  std::optional<float> alpha_flag;

  void configure(const Flags& f) {
    cfg = f.config.empty() ? Config{} : load_config(f.config);
    if (!f.config.empty()) record_input(f.config, true);
    if (f.seed) cfg.run.seed = *f.seed;
    if (f.jobs) cfg.run.jobs = *f.jobs;
    if (f.out_dir) cfg.run.out_dir = *f.out_dir;
    if (f.layer) cfg.revision.layer = *f.layer;
    if (f.alpha) cfg.revision.alpha = *f.alpha;
    alpha_flag = f.alpha;
    if (f.ratio) cfg.revision.ratio = *f.ratio;
    if (f.method) cfg.revision.method = parse_method(*f.method);
    if (f.strategy) cfg.revision.strategy = parse_strategy(*f.strategy);
    if (f.site) cfg.revision.kind = parse_plan_kind(*f.site);
    if (f.grid) cfg.sweep.grid = *f.grid;
    if (f.projection) cfg.viz.method = *f.projection == "tsne" ? ProjectionMethod::TSNE : ProjectionMethod::PCA;
    if (f.projection && *f.projection != "tsne" && *f.projection != "pca")
      throw Error(ErrorKind::InvalidArgument, "--projection must be pca or tsne");
    // Round-trip through the schema so flag overrides get the same checks as the file.
    cfg = config_from_json(cfg.to_json());
    for (const auto& e : f.external) external_.insert(canonical(e));
    fs::create_directories(cfg.run.out_dir);
    configured_ = true;
  }

  std::string out(const std::string& name) const { return (fs::path(cfg.run.out_dir) / name).string(); }

  // Inputs must come from a manifest-recorded run or be whitelisted with --external.
  std::string input(const std::string& path) {
    record_input(path, false);
    return path;
  }

  void output(const std::string& path) { manifest_["outputs"][canonical(path)] = file_fingerprint(path); }

  void note(const std::string& key, json value) { manifest_["result"][key] = std::move(value); }

  void finish(const std::optional<std::pair<ErrorKind, std::string>>& err) {
    manifest_["status"] = err ? "error" : "ok";
    if (err) manifest_["error"] = {{"category", std::string(error_kind_name(err->first))}, {"message", err->second}};
    if (configured_) {
      manifest_["seed"] = cfg.run.seed;
      manifest_["config"] = cfg.to_json();
    }
    manifest_["tool_version"] = ACTREV_VERSION;
    manifest_["wall_clock_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    manifest_["finished_at_unix"] = static_cast<std::int64_t>(std::time(nullptr));
    const fs::path dir = fs::path(configured_ ? cfg.run.out_dir : fallback_dir_) / "manifests";
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::string key;
    for (const auto& a : argv_) key += a + '\x1f';
    const fs::path path = dir / (sub_ + "-" + Fingerprint().text(key).hex().substr(0, 10) + ".json");
    std::ofstream os(path, std::ios::trunc);
    os << manifest_.dump(2) << '\n';
    if (!os) std::fprintf(stderr, "actrev: warning: could not write manifest %s\n", path.string().c_str());
    else std::fprintf(stderr, "actrev: manifest %s\n", path.string().c_str());
  }

 private:
  void record_input(const std::string& path, bool is_config) {
    if (!fs::exists(path)) throw Error(ErrorKind::NotFound, "missing artifact " + path);
    const std::string c = canonical(path), fp = file_fingerprint(path);
    manifest_["inputs"][c] = fp;
    if (is_config || external_.count(c)) {
      manifest_["external"].push_back(c);
      return;
    }
    const auto recorded = producer_fingerprints(c);
    if (recorded.count(fp)) return;
    if (!recorded.empty())
      throw Error(ErrorKind::Fingerprint, path + ": fingerprint " + fp + " matches no recorded run (last recorded " +
                                               *recorded.begin() + "; modified after it was produced?)");
    throw Error(ErrorKind::Fingerprint,
                path + ": not produced by any recorded run; pass --external " + path + " to whitelist it");
  }

  // Fingerprints successful runs recorded for this path, from manifests next to it or in the out-dir.
  std::set<std::string> producer_fingerprints(const std::string& c) const {
    std::set<fs::path> dirs{fs::path(c).parent_path() / "manifests", fs::path(c).parent_path().parent_path() / "manifests"};
    if (configured_) dirs.insert(fs::weakly_canonical(fs::absolute(fs::path(cfg.run.out_dir) / "manifests")));
    std::set<std::string> out;
    for (const auto& d : dirs) {
      std::error_code ec;
      if (!fs::is_directory(d, ec)) continue;
      for (const auto& e : fs::directory_iterator(d)) {
        std::ifstream is(e.path());
        const json m = json::parse(is, nullptr, false);
        if (m.is_discarded() || m.value("status", "") != "ok" || !m.contains("outputs")) continue;
        if (m["outputs"].contains(c)) out.insert(m["outputs"][c].get<std::string>());
      }
    }
    return out;
  }

  std::string sub_;
  std::vector<std::string> argv_;
  std::string fallback_dir_;
  std::chrono::steady_clock::time_point started_;
  json manifest_;
  std::set<std::string> external_;
  bool configured_ = false;
};

void write_json(const json& j, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path);
  os << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::NotFound, "cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, path + ": " + e.what());
  }
}

void require_model(const SteeringPlan& plan, const TransformerWeights& model, const std::string& what) {
  if (!plan.source_model.empty() && plan.source_model != model.fingerprint())
    throw Error(ErrorKind::Fingerprint, what + " was built from model " + plan.source_model + ", not " +
                                            model.fingerprint() + " (use `transfer` for cross-model use)");
}

std::string site_file(const HookSite& s) {
  std::string n = s.to_string();
  for (char& ch : n)
    if (ch == ':') ch = '_';
  return n + ".bin";
}

// Inputs that default into the out-dir.
struct Paths {
  std::string corpus, heldout, pairs, model, target, acts, set, vectors, plan, prompts, output;
};

std::string or_default(const std::string& v, const std::string& d) { return v.empty() ? d : v; }

// ---------------------------------------------------------------------------

void cmd_gen_data(Run& r, const Paths&) {
  const Corpora c = make_corpora(r.cfg, r.cfg.run.seed);
  for (const auto& [name, corpus] : {std::pair{"corpus.tsv", &c.train}, std::pair{"heldout.tsv", &c.heldout},
                                     std::pair{"pair_source.tsv", &c.pair_source}}) {
    save_corpus(*corpus, r.out(name));
    r.output(r.out(name));
  }
  r.note("train_fingerprint", corpus_fingerprint(c.train));
  std::printf("wrote %zu training, %zu held-out, %zu pair-source samples\n", c.train.size(), c.heldout.size(),
              c.pair_source.size());
}

void cmd_train(Run& r, const Paths& p, const std::string& role) {
  const Corpus heldout = load_corpus(r.input(or_default(p.heldout, r.out("heldout.tsv"))));
  Corpus train;
  std::uint64_t seed = r.cfg.run.seed, init_seed = 0;
  if (role == "target") {
    // Model B: its own data and order, model A's initialization.
    seed = r.cfg.run.seed + r.cfg.transfer.target_seed_offset;
    init_seed = r.cfg.run.seed;
    train = gen_corpus(corpus_spec(r.cfg, seed));
    r.note("derived_corpus_fingerprint", corpus_fingerprint(train));
  } else if (role == "source") {
    train = load_corpus(r.input(or_default(p.corpus, r.out("corpus.tsv"))));
  } else {
    throw Error(ErrorKind::InvalidArgument, "--role must be source or target");
  }
  const std::string path = or_default(p.output, r.out(role == "target" ? "model_b.bin" : "model.bin"));
  TrainSchedule sched = train_schedule(r.cfg, seed, init_seed);
  const bool enforce = sched.enforce_gates;
  sched.enforce_gates = false;
  const TrainResult t = train_toy_lm(train, heldout, r.cfg.model, TokenLayout{}, sched);
  const json gates = {{"a_unsafe_refusal", t.gates.a_unsafe_refusal}, {"b_unsafe_refusal", t.gates.b_unsafe_refusal},
                      {"safe_task_acc", t.gates.safe_task_acc},       {"passed", t.gates.passed()},
                      {"final_loss", t.loss_curve.empty() ? 0.0 : t.loss_curve.back()}};
  r.note("gates", gates);
  std::printf("%s\n", t.gates.to_string().c_str());
  if (enforce && !t.gates.passed()) throw Error(ErrorKind::GateFailure, "behavioral gates unmet: " + t.gates.to_string());
  save_weights(t.weights, path);
  r.output(path);
  r.note("model_fingerprint", t.weights.fingerprint());
}

void cmd_capture(Run& r, const Paths& p, const std::string& source, const std::string& at) {
  const TransformerWeights model = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  const std::string dir = or_default(p.acts, r.out("acts"));
  fs::create_directories(dir);
  ActivationGrid grid;
  if (source == "pairs") {
    const Corpus src = load_corpus(r.input(or_default(p.pairs, r.out("pair_source.tsv"))));
    grid = capture_grid(model, make_pairs(r.cfg, src, r.cfg.revision.strategy), r.cfg.run.jobs);
  } else if (source == "corpus") {
    grid = capture_grid(model, load_corpus(r.input(or_default(p.corpus, r.out("heldout.tsv")))), r.cfg.run.jobs);
  } else {
    throw Error(ErrorKind::InvalidArgument, "--source must be pairs or corpus");
  }
  std::vector<HookSite> sites = grid_sites(model.config);
  if (!at.empty()) {
    const HookSite s = HookSite::parse(at);
    model.config.validate_site(s);
    sites = {s};
  }
  json index = {{"format", "actrev-acts"},
                {"version", 1},
                {"source", source},
                {"strategy", strategy_name(r.cfg.revision.strategy)},
                {"model_fingerprint", model.fingerprint()},
                {"sites", json::array()}};
  for (const auto& s : sites) {
    const std::string f = (fs::path(dir) / site_file(s)).string();
    save_activation_set(grid.at(s, model.config.n_heads), f);
    r.output(f);
    index["sites"].push_back(s.to_string());
  }
  const std::string ip = (fs::path(dir) / "index.json").string();
  write_json(index, ip);
  r.output(ip);
  std::printf("captured %zu sites into %s\n", sites.size(), dir.c_str());
}

ActivationGrid load_grid(Run& r, const std::string& dir, const ModelConfig& config, const std::string& model_fp,
                         json& index) {
  index = read_json(r.input((fs::path(dir) / "index.json").string()));
  if (index.value("format", "") != "actrev-acts") throw Error(ErrorKind::Format, dir + ": not an activation directory");
  if (index.value("model_fingerprint", "") != model_fp)
    throw Error(ErrorKind::Fingerprint, dir + ": activations come from model " +
                                            index.value("model_fingerprint", "?") + ", not " + model_fp);
  ActivationGrid g;
  for (int l = 0; l < config.n_layers; ++l)
    for (int h = 0; h < config.n_heads; ++h)
      g.head_sets.push_back(load_activation_set(r.input((fs::path(dir) / site_file(HookSite::head_output(l, h))).string())));
  for (int l = 0; l < config.n_layers; ++l)
    g.layer_sets.push_back(load_activation_set(r.input((fs::path(dir) / site_file(HookSite::layer_residual(l))).string())));
  for (const auto* sets : {&g.head_sets, &g.layer_sets})
    for (const auto& s : *sets)
      if (!s.model_fingerprint.empty() && s.model_fingerprint != model_fp)
        throw Error(ErrorKind::Fingerprint, s.site.to_string() + ": set captured from a different model");
  return g;
}

void cmd_probe(Run& r, const Paths& p) {
  if (p.set.empty()) throw Error(ErrorKind::InvalidArgument, "probe needs --set");
  const LabeledActivationSet s = load_activation_set(r.input(p.set));
  const MlpProbeFit fit = train_mlp_probe(s, r.cfg.run.seed, r.cfg.probe);
  const json j = {{"site", s.site.to_string()},         {"val_accuracy", fit.val_accuracy},
                  {"train_accuracy", fit.train_accuracy}, {"n_train", fit.n_train},
                  {"n_val", fit.n_val},                  {"epochs", fit.probe.epochs},
                  {"set_fingerprint", s.fingerprint()}};
  const std::string path = or_default(p.output, r.out("probe.json"));
  write_json(j, path);
  r.output(path);
  std::printf("%s val %.4f train %.4f\n", s.site.to_string().c_str(), fit.val_accuracy, fit.train_accuracy);
}

void cmd_heatmap(Run& r, const Paths& p) {
  const TransformerWeights model = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  const Corpus heldout = load_corpus(r.input(or_default(p.heldout, r.out("heldout.tsv"))));
  const HeatmapReport h = modality_heatmap(r.cfg, model, heldout);
  const std::string path = or_default(p.output, r.out("heatmap.tsv"));
  h.save(path);
  r.output(path);
  r.note("mean_in_modality", h.mean_val());
  r.note("mean_cross_modality", h.mean_eval("B"));
  std::printf("modality-A probes: in-modality %.4f, on modality B %.4f (drop %.4f)\n", h.mean_val(), h.mean_eval("B"),
              h.mean_val() - h.mean_eval("B"));
}

void cmd_extract(Run& r, const Paths& p) {
  const TransformerWeights model = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  json index;
  const ActivationGrid grid = load_grid(r, or_default(p.acts, r.out("acts")), model.config, model.fingerprint(), index);
  if (index.value("source", "") != "pairs") throw Error(ErrorKind::InvalidArgument, "extract needs pair activations");
  const VectorBank bank =
      build_vector_bank(r.cfg, model, grid, parse_strategy(index.at("strategy")), r.cfg.revision.method);
  const std::string path = or_default(p.output, r.out("vectors.json"));
  write_json(bank.to_json(), path);
  r.output(path);
  std::printf("extracted %zu %s vectors (%s pairs)\n", bank.vectors.size(), method_name(bank.method).c_str(),
              strategy_name(bank.strategy).c_str());
}

VectorBank load_bank(Run& r, const std::string& path) { return VectorBank::from_json(read_json(r.input(path))); }

SteeringPlan plan_from_bank(Run& r, const VectorBank& bank) {
  const auto& v = r.cfg.revision;
  return bank_plan(r.cfg, bank, v.kind, v.layer, v.alpha, v.ratio);
}

void save_plan_out(Run& r, const SteeringPlan& plan, const std::string& path) {
  save_plan(plan, path);
  r.output(path);
  r.note("plan_hash", plan_hash(plan));
}

void cmd_plan(Run& r, const Paths& p) {
  const SteeringPlan plan = plan_from_bank(r, load_bank(r, or_default(p.vectors, r.out("vectors.json"))));
  save_plan_out(r, plan, or_default(p.output, r.out("plan.json")));
  std::printf("%s plan at layer %d, alpha %g, hash %s\n", plan_kind_name(plan.kind).c_str(), plan.layer, plan.alpha,
              plan_hash(plan).c_str());
}

// --plan wins; otherwise --vectors builds one from the revision flags. No plan means vanilla.
std::optional<SteeringPlan> resolve_plan(Run& r, const Paths& p, const std::string& write_to) {
  if (!p.plan.empty()) {
    SteeringPlan plan = load_plan(r.input(p.plan));
    if (r.alpha_flag) plan = with_alpha(plan, *r.alpha_flag);
    return plan;
  }
  if (!p.vectors.empty()) {
    const SteeringPlan plan = plan_from_bank(r, load_bank(r, p.vectors));
    if (!write_to.empty()) save_plan_out(r, plan, write_to);
    return plan;
  }
  return std::nullopt;
}

void cmd_steer(Run& r, const Paths& p) {
  const TransformerWeights model = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  const Corpus prompts = load_corpus(r.input(or_default(p.prompts, r.out("heldout.tsv"))));
  const auto plan = resolve_plan(r, p, or_default(p.output, r.out("responses.tsv")) + ".plan.json");
  if (plan) require_model(*plan, model, "plan");
  const TokenLayout layout;
  std::vector<std::vector<int>> out(prompts.size());
  EvalOptions eo = eval_options(r.cfg);
  parallel_for(prompts.size(), r.cfg.run.jobs, [&](std::size_t i) {
    out[i] = respond(model, prompts[i].prompt, plan ? &*plan : nullptr, layout, EvalOptions{eo.max_new, 1});
  });
  const std::string path = or_default(p.output, r.out("responses.tsv"));
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path);
  os << "#actrev-responses v1\n";
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (std::size_t k = 0; k < prompts[i].prompt.size(); ++k) os << (k ? " " : "") << prompts[i].prompt[k];
    os << '\t';
    for (std::size_t k = 0; k < out[i].size(); ++k) os << (k ? " " : "") << out[i][k];
    os << '\n';
  }
  os.close();
  r.output(path);
  std::printf("%zu responses (%s)\n", prompts.size(), plan ? plan_hash(*plan).c_str() : "vanilla");
}

void print_report(const EvalReport& rep) {
  for (const auto& [k, v] : rep.vanilla.asr) std::printf("ASR %-9s %6.2f -> %6.2f\n", k.c_str(), v, rep.revised.asr.at(k));
  for (const auto& [k, v] : rep.vanilla.acc) std::printf("ACC %-9s %6.2f -> %6.2f\n", k.c_str(), v, rep.revised.acc.at(k));
  std::printf("CS %.4f\n", rep.cs);
}

void cmd_eval(Run& r, const Paths& p) {
  const TransformerWeights model = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  const Corpus heldout = load_corpus(r.input(or_default(p.heldout, r.out("heldout.tsv"))));
  const auto plan = resolve_plan(r, p, "");
  if (plan) require_model(*plan, model, "plan");
  const EvalSuites suites = eval_suites(heldout, TokenLayout{});
  const EvalOptions eo = eval_options(r.cfg);
  const EvalInputs v = evaluate(model, nullptr, suites, TokenLayout{}, eo);
  const EvalInputs s = plan ? evaluate(model, &*plan, suites, TokenLayout{}, eo) : v;
  EvalReport rep = make_report(v, s, r.cfg.eval.lambda, plan ? plan_hash(*plan) : "vanilla", model.fingerprint());
  rep.provenance["model"] = model.fingerprint();
  rep.provenance["heldout"] = corpus_fingerprint(heldout);
  const std::string path = or_default(p.output, r.out("report.json"));
  write_json(rep.to_json(), path);
  r.output(path);
  r.note("cs", rep.cs);
  print_report(rep);
}

void cmd_sweep(Run& r, const Paths& p) {
  const TransformerWeights model = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  const Corpus heldout = load_corpus(r.input(or_default(p.heldout, r.out("heldout.tsv"))));
  const VectorBank bank = load_bank(r, or_default(p.vectors, r.out("vectors.json")));
  if (bank.model_fingerprint != model.fingerprint())
    throw Error(ErrorKind::Fingerprint, "vectors were extracted from model " + bank.model_fingerprint);
  const SweepSpec spec = sweep_spec(r.cfg, r.cfg.sweep.grid);
  SweepOptions so;
  so.checkpoint_dir = r.out("sweep_cells_" + r.cfg.sweep.grid);
  const SweepGrid g = run_sweep(r.cfg, model, bank, eval_suites(heldout, TokenLayout{}), spec, so);
  const std::string path = or_default(p.output, r.out("sweep.json"));
  write_json(g.to_json(), path);
  r.output(path);
  std::printf("%s: %zu cells (%zu layers x %zu strengths)\n", spec.name.c_str(), g.cells.size(), spec.layers.size(),
              spec.strengths.size());
  for (const auto& c : g.cells)
    std::printf("  l=%d a=%g %s\n", c.layer, c.alpha, c.ok ? ("CS " + std::to_string(c.report.cs)).c_str() : c.error.c_str());
  if (const SweepCell* b = g.best()) {
    std::printf("best l=%d a=%g CS %.4f\n", b->layer, b->alpha, b->report.cs);
    r.note("best", {{"layer", b->layer}, {"alpha", b->alpha}, {"cs", b->report.cs}});
  }
}

void cmd_transfer(Run& r, const Paths& p) {
  const TransformerWeights source = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  const TransformerWeights target = load_weights(r.input(or_default(p.target, r.out("model_b.bin"))));
  const Corpus heldout = load_corpus(r.input(or_default(p.heldout, r.out("heldout.tsv"))));
  Paths q = p;
  if (q.plan.empty() && q.vectors.empty()) q.vectors = r.out("vectors.json");
  const auto plan = resolve_plan(r, q, "");
  require_model(*plan, source, "plan");
  const EvalReport rep = transfer_eval(source.config, source.fingerprint(), target, *plan,
                                       eval_suites(heldout, TokenLayout{}), TokenLayout{}, eval_options(r.cfg),
                                       r.cfg.eval.lambda);
  const std::string path = or_default(p.output, r.out("transfer.json"));
  write_json(rep.to_json(), path);
  r.output(path);
  r.note("cs", rep.cs);
  print_report(rep);
}

void cmd_project(Run& r, const Paths& p) {
  const TransformerWeights model = load_weights(r.input(or_default(p.model, r.out("model.bin"))));
  const Corpus heldout = load_corpus(r.input(or_default(p.heldout, r.out("heldout.tsv"))));
  const HookSite site = HookSite::layer_residual(r.cfg.revision.layer);
  const LabeledActivationSet s = capture_set(model, heldout, site, r.cfg.run.jobs);
  std::vector<std::vector<float>> vs;
  std::vector<std::string> gs;
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    vs.push_back(s.entries[i].vector);
    gs.push_back(modality_name(heldout[i].modality));
  }
  const Projection2D proj = r.cfg.viz.method == ProjectionMethod::TSNE ? tsne_project(vs, gs, tsne_params(r.cfg))
                                                                        : pca_project(vs, gs);
  const std::string path =
      or_default(p.output, r.out("projection_" + projection_name(proj.method) + "_l" + std::to_string(site.layer) + ".csv"));
  emit_plot_data(proj, path);
  r.output(path);
  r.output(path + ".svg");
  const GroupSpread g = group_spread(proj.points);
  r.note("centroid_distance", g.centroid_distance);
  r.note("within_spread", g.within_spread);
  std::printf("%s %s: centroid distance %.4f, within-group spread %.4f, silhouette %.4f\n",
              projection_name(proj.method).c_str(), site.to_string().c_str(), g.centroid_distance, g.within_spread,
              silhouette(proj.points));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"actrev: activation steering on a gated two-modality toy model"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(ACTREV_VERSION));

  Flags f;
  Paths paths;
  std::string role = "source", source = "pairs", at;
  app.add_option("--config", f.config, "JSON config file (sections: run data model train probe revision eval sweep viz transfer)");
  app.add_option("--seed", f.seed, "Root seed; every stream derives from it");
  app.add_option("--jobs", f.jobs, "Worker threads");
  app.add_option("--out-dir", f.out_dir, "Artifact directory (default: out)");
  app.add_option("--external", f.external, "Whitelist an input not produced by a recorded run (repeatable)");

  struct Spec {
    const char* name;
    const char* help;
  };
  const std::vector<Spec> specs{
      {"gen-data", "Generate training, held-out and pair-source corpora"},
      {"train-toy", "Train the toy model and check its behavioral gates"},
      {"capture", "Capture activation sets at grid sites"},
      {"probe", "Train an MLP probe on one activation set"},
      {"heatmap", "Per-site probe accuracy: modality-A trained, evaluated on B"},
      {"extract", "Extract revision vectors from pair activations"},
      {"plan", "Assemble a steering plan from extracted vectors"},
      {"steer", "Greedy responses with or without a plan"},
      {"eval", "ASR/ACC and composite score of a plan"},
      {"sweep", "Layer x strength sweep"},
      {"transfer", "Apply a plan from one model to another of equal widths"},
      {"project", "2-D projection of layer activations (PCA or t-SNE)"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& s : specs) subs[s.name] = app.add_subcommand(s.name, s.help);

  auto revision_flags = [&](CLI::App* a) {
    a->add_option("--site", f.site, "Plan kind")->check(CLI::IsMember({"layer", "head"}));
    a->add_option("--layer", f.layer, "Intervention layer");
    a->add_option("--alpha", f.alpha, "Steering strength");
    a->add_option("--ratio", f.ratio, "Share of heads steered (head plans)");
  };
  auto method_flag = [&](CLI::App* a) {
    a->add_option("--method", f.method, "Extraction method")->check(CLI::IsMember({"pwd", "mms"}));
  };
  auto strategy_flag = [&](CLI::App* a) {
    a->add_option("--strategy", f.strategy, "Contrastive pair strategy")
        ->check(CLI::IsMember({"multi-instruction", "text-response", "multi-response"}));
  };
  auto path_flag = [](CLI::App* a, const char* name, std::string& dst, const char* help) {
    a->add_option(name, dst, help);
  };

  path_flag(subs["train-toy"], "--corpus", paths.corpus, "Training corpus (default <out>/corpus.tsv)");
  path_flag(subs["train-toy"], "--heldout", paths.heldout, "Gate corpus (default <out>/heldout.tsv)");
  subs["train-toy"]->add_option("--role", role, "source, or target: model B on seed + transfer offset, A's init");
  path_flag(subs["train-toy"], "--output", paths.output, "Weights file");

  path_flag(subs["capture"], "--model", paths.model, "Model weights");
  path_flag(subs["capture"], "--pairs-from", paths.pairs, "Pair-source corpus");
  path_flag(subs["capture"], "--corpus", paths.corpus, "Corpus for --source corpus");
  subs["capture"]->add_option("--source", source, "pairs (by continuation side) or corpus (by instruction label)");
  subs["capture"]->add_option("--at", at, "Single site, e.g. head:2:1 or layer:3 (default: full grid)");
  path_flag(subs["capture"], "--acts", paths.acts, "Output directory");
  strategy_flag(subs["capture"]);

  path_flag(subs["probe"], "--set", paths.set, "Activation set file");
  path_flag(subs["probe"], "--output", paths.output, "Probe report");

  for (const char* n : {"heatmap", "eval", "sweep", "transfer", "project"}) {
    path_flag(subs[n], "--model", paths.model, "Model weights");
    path_flag(subs[n], "--heldout", paths.heldout, "Held-out corpus");
    path_flag(subs[n], "--output", paths.output, "Output file");
  }

  path_flag(subs["extract"], "--model", paths.model, "Model weights");
  path_flag(subs["extract"], "--acts", paths.acts, "Activation directory from `capture`");
  path_flag(subs["extract"], "--output", paths.output, "Vector bank");
  method_flag(subs["extract"]);

  path_flag(subs["plan"], "--vectors", paths.vectors, "Vector bank");
  path_flag(subs["plan"], "--output", paths.output, "Plan file");
  revision_flags(subs["plan"]);

  path_flag(subs["steer"], "--model", paths.model, "Model weights");
  path_flag(subs["steer"], "--prompts", paths.prompts, "Corpus whose prompts are answered");
  path_flag(subs["steer"], "--output", paths.output, "Responses file");
  for (const char* n : {"steer", "eval", "transfer"}) {
    path_flag(subs[n], "--plan", paths.plan, "Plan file (--alpha overrides its strength)");
    path_flag(subs[n], "--vectors", paths.vectors, "Build the plan from this vector bank instead");
    revision_flags(subs[n]);
  }
  path_flag(subs["transfer"], "--target", paths.target, "Target model weights (default <out>/model_b.bin)");

  path_flag(subs["sweep"], "--vectors", paths.vectors, "Vector bank");
  subs["sweep"]->add_option("--grid", f.grid, "Grid name")->check(CLI::IsMember({"default-head", "default-layer"}));
  subs["sweep"]->add_option("--ratio", f.ratio, "Share of heads steered (head grid)");

  subs["project"]->add_option("--layer", f.layer, "Layer whose residual is projected");
  subs["project"]->add_option("--projection", f.projection, "pca or tsne")->check(CLI::IsMember({"pca", "tsne"}));

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "actrev: error[usage]: %s\n", e.what());
    std::string name = "usage";
    for (auto* s : app.get_subcommands()) name = s->get_name();
    Run failed(name, args, f.out_dir.value_or(Config{}.run.out_dir));
    failed.finish(std::make_pair(ErrorKind::InvalidArgument, std::string("usage: ") + e.what()));
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Run run(name, args, f.out_dir.value_or(Config{}.run.out_dir));
  try {
    run.configure(f);
    if (name == "gen-data") cmd_gen_data(run, paths);
    else if (name == "train-toy") cmd_train(run, paths, role);
    else if (name == "capture") cmd_capture(run, paths, source, at);
    else if (name == "probe") cmd_probe(run, paths);
    else if (name == "heatmap") cmd_heatmap(run, paths);
    else if (name == "extract") cmd_extract(run, paths);
    else if (name == "plan") cmd_plan(run, paths);
    else if (name == "steer") cmd_steer(run, paths);
    else if (name == "eval") cmd_eval(run, paths);
    else if (name == "sweep") cmd_sweep(run, paths);
    else if (name == "transfer") cmd_transfer(run, paths);
    else if (name == "project") cmd_project(run, paths);
    run.finish(std::nullopt);
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "actrev: error[%s]: %s\n", std::string(error_kind_name(e.kind())).c_str(), e.what());
    run.finish(std::make_pair(e.kind(), std::string(e.what())));
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "actrev: error[internal]: %s\n", e.what());
    run.finish(std::make_pair(ErrorKind::InvalidArgument, std::string("internal: ") + e.what()));
    return 1;
  }
}
