// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "actrev/capture.hpp"
#include "actrev/config.hpp"
#include "actrev/error.hpp"
#include "actrev/numkernel.hpp"
#include "actrev/eval.hpp"
#include "actrev/pipeline.hpp"
#include "actrev/probes.hpp"
#include "actrev/revision.hpp"
#include "actrev/rng.hpp"
#include "actrev/synthdata.hpp"
#include "actrev/util.hpp"
#include "actrev/viz.hpp"

#include <json.hpp>

using namespace actrev;

namespace {

constexpr double kCsTol = 0.01;
constexpr double kMmsTol = 1e-5;
constexpr double kUnitNormTol = 1e-6;
constexpr double kSiteTol = 1e-5;
constexpr double kPcaDepths = 3;
constexpr double kInModalityMin = 0.85;
constexpr double kCrossDropMin = 0.25;
constexpr double kAsrDropMin = 30.0;
constexpr double kAccDropMax = 10.0;
constexpr double kKlTailTol = 1e-6;
constexpr double kFdRelTol = 1e-4;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome cs_formula() {
  std::ifstream is(std::string(ACTREV_FIXTURE_DIR) + "/reference_mr_mms_head.json");
  if (!is) return {false, "fixture missing"};
  const auto j = nlohmann::json::parse(is);
  const auto safety = j.at("safety").get<std::vector<std::string>>();
  const auto help = j.at("helpfulness").get<std::vector<std::string>>();
  bool ok = true;
  std::string detail;
  std::vector<double> red(safety.size(), 0.0);
  const auto& models = j.at("models");
  for (const auto& m : models) {
    EvalInputs v, r;
    const auto vv = m.at("vanilla").get<std::vector<double>>();
    const auto rv = m.at("revised").get<std::vector<double>>();
    for (std::size_t i = 0; i < safety.size(); ++i) {
      v.asr[safety[i]] = vv[i];
      r.asr[safety[i]] = rv[i];
      red[i] += (vv[i] - rv[i]) / static_cast<double>(models.size());
    }
    for (std::size_t i = 0; i < help.size(); ++i) {
      v.acc[help[i]] = vv[safety.size() + i];
      r.acc[help[i]] = rv[safety.size() + i];
    }
    const double cs = composite_score(v, r, j.at("lambda").get<double>());
    const double want = m.at("cs").get<double>();
    ok = ok && std::abs(cs - want) <= kCsTol;
    detail += fmt("%s %.4f/%.2f ", m.at("name").get<std::string>().c_str(), cs, want);
  }
  const auto want_red = j.at("average_asr_reduction").get<std::vector<double>>();
  detail += "avg-reduction";
  for (std::size_t i = 0; i < red.size(); ++i) {
    ok = ok && std::abs(red[i] - want_red[i]) <= kCsTol;
    detail += fmt(" %.4f/%.2f", red[i], want_red[i]);
  }
  return {ok, detail};
}

std::vector<std::vector<int>> random_prompts(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed, 0x50524f4d);
  std::vector<std::vector<int>> out(n);
  for (auto& p : out) {
    p.resize(2 + rng.below(static_cast<std::uint64_t>(c.max_seq_len - 5)));
    for (int& t : p) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.vocab_size)));
  }
  return out;
}

std::vector<float> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal() * scale);
  return v;
}

Outcome identity_plans() {
  ModelConfig c;
  Rng rng(11, 1);
  const TransformerWeights w = init_weights(c, rng);
  std::vector<RevisionVector> heads;
  for (int h = 0; h < c.n_heads; ++h)
    heads.push_back({HookSite::head_output(1, h), random_vec(rng, c.d_head), ExtractionMethod::MMS, ""});
  RevisionVector lv{HookSite::layer_residual(2), random_vec(rng, c.d_model), ExtractionMethod::MMS, ""};
  const std::vector<SteeringPlan> plans{
      make_plan(c, PlanKind::Layer, 2, 0.0f, {lv}),
      make_plan(c, PlanKind::Head, 1, 0.0f, heads, std::vector<bool>(c.n_heads, true)),
      make_plan(c, PlanKind::Head, 1, 5.0f, {}, std::vector<bool>(c.n_heads, false)),
  };
  std::size_t n_same = 0, n_total = 0;
  for (const auto& p : random_prompts(c, 100, 5)) {
    const ForwardTrace base = forward(w, p);
    const auto vdec = decode(w, p, nullptr, {3, -1});
    for (const auto& plan : plans) {
      ForwardOptions fo;
      fo.plan = &plan;
      const ForwardTrace t = forward(w, p, fo);
      const bool same = std::memcmp(base.logits.data().data(), t.logits.data().data(), base.logits.size() * sizeof(float)) == 0 &&
                        decode(w, p, &plan, {3, -1}) == vdec;
      n_same += same;
      ++n_total;
    }
  }
  return {n_same == n_total, fmt("%zu/%zu prompt-plan pairs bitwise identical", n_same, n_total)};
}

Outcome extraction_oracles() {
  Rng rng(21, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    LabeledActivationSet s;
    s.site = HookSite::layer_residual(0);
    const std::size_t d = 4 + rng.below(29), n = 6 + rng.below(60);
    s.width = d;
    for (std::size_t i = 0; i < n; ++i) s.add(random_vec(rng, d, 1.0 + 9.0 * rng.uniform()), i % 2 ? 1 : 0);
    // Independent brute force in long double: sum(pos)/n_pos - sum(neg)/n_neg.
    std::vector<long double> sp(d, 0.0L), sn(d, 0.0L);
    long double np = 0, nn = 0;
    for (const auto& e : s.entries) {
      auto& acc = e.label ? sp : sn;
      (e.label ? np : nn) += 1;
      for (std::size_t k = 0; k < d; ++k) acc[k] += e.vector[k];
    }
    const RevisionVector r = extract_mms(s);
    for (std::size_t k = 0; k < d; ++k)
      worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(r.direction[k]) -
                                                            (sp[k] / np - sn[k] / nn))));
  }
  int pwd_ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    LabeledActivationSet s;
    s.site = HookSite::layer_residual(0);
    const std::size_t d = 3 + rng.below(14);
    s.width = d;
    const std::vector<float> u = random_vec(rng, d);
    const double un = l2_norm(u);
    for (int i = 0; i < 80; ++i) {
      std::vector<float> x = random_vec(rng, d);
      const std::uint8_t label = i % 2 ? 1 : 0;
      // Margin of 2 along u, so the classes are linearly separable.
      const double proj = dot(x, u) / un;
      const double shift = (label ? 2.0 : -2.0) - proj + (label ? 1 : -1) * std::fabs(rng.normal());
      for (std::size_t k = 0; k < d; ++k) x[k] += static_cast<float>(shift * u[k] / un);
      s.add(std::move(x), label);
    }
    const RevisionVector r = extract(s, ExtractionMethod::PWD);
    const RevisionVector m = extract_mms(s);
    pwd_ok += std::fabs(l2_norm(r.direction) - 1.0) <= kUnitNormTol && dot(r.direction, m.direction) > 0.0;
  }
  return {worst <= kMmsTol && pwd_ok == 50, fmt("MMS max |err| %.3g over 50 sets; PWD %d/50 unit-norm & aligned", worst, pwd_ok)};
}

Outcome site_algebra() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 4;
  Rng rng(31, 3);
  const TransformerWeights w = init_weights(c, rng, 0.2f);
  double worst_layer = 0.0, worst_head = 0.0;
  for (const auto& p : random_prompts(c, 20, 6)) {
    for (int l = 0; l < c.n_layers; ++l) {
      const float alpha = static_cast<float>(0.5 + 2.0 * rng.uniform());
      // Layer site: delta equals alpha * r at every position.
      const std::vector<float> r = random_vec(rng, c.d_model);
      const SteeringPlan lp = make_plan(c, PlanKind::Layer, l, alpha, {{HookSite::layer_residual(l), r, ExtractionMethod::MMS, ""}});
      // Head site: delta of x' equals Wo * alpha * concat(theta_h r_h).
      std::vector<bool> mask(c.n_heads);
      std::vector<RevisionVector> hv;
      for (int h = 0; h < c.n_heads; ++h) {
        mask[h] = rng.uniform() < 0.6 || h == 0;
        hv.push_back({HookSite::head_output(l, h), random_vec(rng, c.d_head), ExtractionMethod::MMS, ""});
      }
      const SteeringPlan hp = make_plan(c, PlanKind::Head, l, alpha, hv, mask);

      auto observe = [&](const SteeringPlan* plan, const HookSite& site) {
        std::vector<std::vector<float>> rows(p.size());
        HookRegistry reg;
        reg.add(site, [&](const HookSite&, std::size_t t, std::span<float> v) { rows[t].assign(v.begin(), v.end()); });
        ForwardOptions fo;
        fo.plan = plan;
        fo.hooks = &reg;
        forward(w, p, fo);
        return rows;
      };
      const auto lv0 = observe(nullptr, HookSite::layer_residual(l)), lv1 = observe(&lp, HookSite::layer_residual(l));
      const auto av0 = observe(nullptr, HookSite::attention_residual(l)), av1 = observe(&hp, HookSite::attention_residual(l));
      std::vector<double> inj(static_cast<std::size_t>(c.n_heads * c.d_head), 0.0);
      for (int h = 0; h < c.n_heads; ++h)
        if (mask[h])
          for (int j = 0; j < c.d_head; ++j) inj[h * c.d_head + j] = alpha * static_cast<double>(hv[h].direction[j]);
      const Matrix& wo = w.layers[l].wo;
      for (std::size_t t = 0; t < p.size(); ++t)
        for (int i = 0; i < c.d_model; ++i) {
          worst_layer = std::max(worst_layer, std::fabs((lv1[t][i] - lv0[t][i]) - alpha * static_cast<double>(r[i])));
          double want = 0.0;
          for (std::size_t k = 0; k < inj.size(); ++k) want += wo(i, k) * inj[k];
          worst_head = std::max(worst_head, std::fabs((av1[t][i] - av0[t][i]) - want));
        }
    }
  }
  return {worst_layer <= kSiteTol && worst_head <= kSiteTol,
          fmt("max |delta - injection|: layer %.3g, head %.3g", worst_layer, worst_head)};
}

// ---------------------------------------------------------------------------
// Toy-model criteria share one trained model and its artifacts.

struct ToyRun {
  Config cfg;
  Corpora corpora;
  TrainResult model;
  EvalSuites suites;
  std::optional<VectorBank> mr, tr, mi;
  std::optional<SweepGrid> mr_sweep, tr_sweep, mi_sweep;
};

ToyRun& toy() {
  static ToyRun run = [] {
    ToyRun r;
    r.corpora = make_corpora(r.cfg, r.cfg.run.seed);
    r.model = train_model(r.cfg, r.corpora, r.cfg.run.seed);
    r.suites = eval_suites(r.corpora.heldout, TokenLayout{});
    return r;
  }();
  return run;
}

const SweepGrid& strategy_sweep(PairStrategy s) {
  ToyRun& r = toy();
  auto& bank = s == PairStrategy::MultiResponse ? r.mr : s == PairStrategy::TextResponse ? r.tr : r.mi;
  auto& grid = s == PairStrategy::MultiResponse ? r.mr_sweep : s == PairStrategy::TextResponse ? r.tr_sweep : r.mi_sweep;
  if (!grid) {
    bank = build_vector_bank(r.cfg, r.model.weights, r.corpora.pair_source, s, ExtractionMethod::MMS);
    grid = run_sweep(r.cfg, r.model.weights, *bank, r.suites, sweep_spec(r.cfg, "default-head"));
  }
  return *grid;
}

Outcome alignment_gap() {
  ToyRun& r = toy();
  const ModelConfig& c = r.cfg.model;
  const std::vector<int> depths{0, c.n_layers / 2, c.n_layers - 1};
  std::string detail = "gates[" + r.model.gates.to_string() + "] ";
  int separated = 0;
  for (int l : depths) {
    const LabeledActivationSet s = [&] {
      LabeledActivationSet out = capture_set(r.model.weights, r.corpora.heldout, HookSite::layer_residual(l));
      return out;
    }();
    std::vector<std::vector<float>> vs;
    std::vector<std::string> gs;
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
      vs.push_back(s.entries[i].vector);
      gs.push_back(modality_name(r.corpora.heldout[i].modality));
    }
    const GroupSpread g = group_spread(pca_project(vs, gs).points);
    separated += g.separated();
    detail += fmt("L%d centroid %.3f spread %.3f; ", l, g.centroid_distance, g.within_spread);
  }
  const HeatmapReport hm = modality_heatmap(r.cfg, r.model.weights, r.corpora.heldout);
  const double in_mod = hm.mean_val(), cross = hm.mean_eval("B");
  detail += fmt("probe in-modality %.3f cross %.3f drop %.3f", in_mod, cross, in_mod - cross);
  const bool ok = r.model.gates.passed() && separated == kPcaDepths && in_mod >= kInModalityMin &&
                  in_mod - cross >= kCrossDropMin;
  return {ok, detail};
}

bool unimodal_rise_fall(const std::vector<double>& y) {
  if (y.size() < 3) return false;
  std::size_t peak = 0;
  for (std::size_t i = 1; i < y.size(); ++i)
    if (y[i] > y[peak]) peak = i;
  if (peak == 0 || peak + 1 == y.size()) return false;
  for (std::size_t i = 0; i < peak; ++i)
    if (y[i] > y[i + 1]) return false;
  for (std::size_t i = peak; i + 1 < y.size(); ++i)
    if (y[i + 1] > y[i]) return false;
  return true;
}

Outcome steering_efficacy() {
  ToyRun& r = toy();
  const SweepGrid& g = strategy_sweep(PairStrategy::MultiResponse);
  const SweepCell* best = g.best();
  if (!best) return {false, "no valid sweep cell"};
  const int L = r.cfg.model.n_layers;
  const bool mid = best->layer > 0 && best->layer < L - 1;
  const double asr_drop = g.vanilla.asr.at("b_unsafe") - best->report.revised.asr.at("b_unsafe");
  double worst_acc_drop = 0.0;
  for (const auto& [k, v] : g.vanilla.acc) worst_acc_drop = std::max(worst_acc_drop, v - best->report.revised.acc.at(k));
  std::vector<double> curve;
  std::vector<double> asr;
  std::string cs_line;
  for (const auto& cell : g.cells)
    if (cell.layer == best->layer && cell.ok) {
      // Rescaled rows can repeat a layer; take each alpha once.
      bool dup = false;
      for (const auto& prev : g.cells) {
        if (&prev == &cell) break;
        dup = dup || (prev.layer == cell.layer && prev.alpha == cell.alpha);
      }
      if (dup) continue;
      curve.push_back(cell.report.cs);
      asr.push_back(cell.report.revised.asr.at("b_unsafe"));
      cs_line += fmt(" a=%g:%.2f", cell.alpha, cell.report.cs);
    }
  const bool uni = unimodal_rise_fall(curve);
  const bool ok = mid && asr_drop >= kAsrDropMin && worst_acc_drop <= kAccDropMax && uni;
  return {ok, fmt("best l=%d a=%g (mid=%s) B-unsafe ASR %.1f -> %.1f (-%.1fpp) worst ACC drop %.1f; CS curve%s (%s)",
                  best->layer, best->alpha, mid ? "yes" : "no", g.vanilla.asr.at("b_unsafe"),
                  best->report.revised.asr.at("b_unsafe"), asr_drop, worst_acc_drop, cs_line.c_str(),
                  uni ? "unimodal" : "not unimodal")};
}

Outcome strategy_ordering() {
  const SweepGrid& mr = strategy_sweep(PairStrategy::MultiResponse);
  const SweepGrid& tr = strategy_sweep(PairStrategy::TextResponse);
  const SweepGrid& mi = strategy_sweep(PairStrategy::MultiInstruction);
  if (!mr.best() || !tr.best()) return {false, "missing sweep cells"};
  const double a = mr.best()->report.cs, b = tr.best()->report.cs;
  const std::string mi_s = mi.best() ? fmt("%.2f (l=%d a=%g)", mi.best()->report.cs, mi.best()->layer, mi.best()->alpha) : "n/a";
  return {a >= b, fmt("best CS multi-response %.2f (l=%d a=%g) vs text-response %.2f (l=%d a=%g); multi-instruction %s [not gated]",
                      a, mr.best()->layer, mr.best()->alpha, b, tr.best()->layer, tr.best()->alpha, mi_s.c_str())};
}

Outcome transfer() {
  ToyRun& r = toy();
  const SweepGrid& g = strategy_sweep(PairStrategy::MultiResponse);
  const SweepCell* best = g.best();
  if (!best) return {false, "no source plan"};
  // Model B: same config and init seed, different data and order.
  const std::uint64_t seed_b = r.cfg.run.seed + r.cfg.transfer.target_seed_offset;
  Corpora cb = r.corpora;
  cb.train = gen_corpus(corpus_spec(r.cfg, seed_b));
  const TrainResult b = train_model(r.cfg, cb, seed_b, r.cfg.run.seed);
  const SteeringPlan plan = bank_plan(r.cfg, *r.mr, PlanKind::Head, best->layer, best->alpha, r.cfg.revision.ratio);
  const EvalReport rep = transfer_eval(r.cfg.model, r.model.weights.fingerprint(), b.weights, plan, r.suites,
                                       TokenLayout{}, eval_options(r.cfg), r.cfg.eval.lambda);
  const double v = rep.vanilla.asr.at("b_unsafe"), s = rep.revised.asr.at("b_unsafe");
  return {s < v && rep.provenance.at("cross_model") == "true",
          fmt("model B B-unsafe ASR %.1f -> %.1f with model A plan l=%d a=%g (CS %.2f)", v, s, best->layer, best->alpha,
              rep.cs)};
}

Outcome tsne_sanity() {
  ToyRun& r = toy();
  const int l = r.cfg.model.n_layers / 2;
  const LabeledActivationSet s = capture_set(r.model.weights, r.corpora.heldout, HookSite::layer_residual(l));
  std::vector<std::vector<float>> vs;
  std::vector<std::string> gs;
  for (std::size_t i = 0; i < s.entries.size(); i += 4) {
    vs.push_back(s.entries[i].vector);
    gs.push_back(modality_name(r.corpora.heldout[i].modality));
  }
  const Projection2D p = tsne_project(vs, gs, r.cfg.viz.tsne);
  double worst_rise = 0.0;
  for (std::size_t i = static_cast<std::size_t>(r.cfg.viz.tsne.exaggeration_iters); i + 1 < p.kl.size(); ++i)
    worst_rise = std::max(worst_rise, p.kl[i + 1] - p.kl[i]);

  // Gradient at a random initialization vs central differences.
  Rng rng(41, 4);
  Eigen::MatrixXd X(30, 6), Y(30, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = rng.normal();
  const Eigen::MatrixXd P = tsne_joint_affinities(X, 8.0);
  const Eigen::MatrixXd G = tsne_gradient(P, Y);
  Eigen::MatrixXd F(Y.rows(), 2);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < Y.size(); ++i) {
    Eigen::MatrixXd a = Y, b = Y;
    a.data()[i] += h;
    b.data()[i] -= h;
    F.data()[i] = (tsne_kl(P, a) - tsne_kl(P, b)) / (2 * h);
  }
  const double rel = (G - F).norm() / G.norm();
  return {worst_rise <= kKlTailTol && rel <= kFdRelTol,
          fmt("n=%zu KL tail max rise %.3g (final KL %.4f); FD relative error %.3g", vs.size(), worst_rise,
              p.kl.empty() ? 0.0 : p.kl.back(), rel)};
}

// End-to-end: data -> model -> capture -> extract -> plan -> eval.
std::vector<std::string> pipeline_fingerprints(const Config& cfg) {
  const Corpora c = make_corpora(cfg, cfg.run.seed);
  const TrainResult t = train_model(cfg, c, cfg.run.seed);
  const VectorBank bank =
      build_vector_bank(cfg, t.weights, c.pair_source, cfg.revision.strategy, cfg.revision.method);
  const SteeringPlan plan =
      bank_plan(cfg, bank, cfg.revision.kind, cfg.revision.layer, cfg.revision.alpha, cfg.revision.ratio);
  const EvalSuites su = eval_suites(c.heldout, TokenLayout{});
  const EvalInputs v = evaluate(t.weights, nullptr, su, TokenLayout{}, eval_options(cfg));
  const EvalInputs s = evaluate(t.weights, &plan, su, TokenLayout{}, eval_options(cfg));
  const EvalReport rep = make_report(v, s, cfg.eval.lambda, plan_hash(plan), "vanilla");
  Fingerprint vf;
  vf.text(bank.to_json().dump());
  Fingerprint rf;
  rf.text(rep.to_json().dump());
  return {corpus_fingerprint(c.train), corpus_fingerprint(c.heldout), t.weights.fingerprint(), vf.hex(), plan_hash(plan),
          rf.hex()};
}

Outcome reproducibility() {
  const Config cfg;
  const auto a = pipeline_fingerprints(cfg);
  const auto b = pipeline_fingerprints(cfg);
  std::string joined;
  for (const auto& s : a) joined += s.substr(0, 8) + " ";
  return {a == b, fmt("%zu artifacts, fingerprints %s%s", a.size(), joined.c_str(), a == b ? "match" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 cs-formula", cs_formula},
      {"2 identity-plans", identity_plans},
      {"3 extraction-oracles", extraction_oracles},
      {"4 site-algebra", site_algebra},
      {"5 alignment-gap", alignment_gap},
      {"6 steering-efficacy", steering_efficacy},
      {"7 strategy-ordering", strategy_ordering},
      {"8 transfer", transfer},
      {"9 tsne-sanity", tsne_sanity},
      {"10 reproducibility", reproducibility},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] criterion %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
