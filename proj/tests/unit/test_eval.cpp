#include <doctest.h>

#include <cmath>
#include <fstream>

#include "actrev/error.hpp"
#include "actrev/eval.hpp"
#include "actrev/revision.hpp"
#include "helpers.hpp"

using namespace actrev;

namespace {

// A model whose logits ignore the input and always favor `tok`.
TransformerWeights constant_model(int tok) {
  ModelConfig c;
  TransformerWeights w = TransformerWeights::zeros(c);
  for (auto& L : w.layers) {
    for (float& x : L.ln1_gain.data()) x = 1;
    for (float& x : L.ln2_gain.data()) x = 1;
  }
  // LNf output is bias only when gain is zero.
  for (float& x : w.lnf_bias.data()) x = 1;
  for (int j = 0; j < c.d_model; ++j) w.unembed(tok, j) = 1;
  return w;
}

EvalInputs inputs(std::vector<double> asr, std::vector<double> acc) {
  EvalInputs e;
  for (std::size_t i = 0; i < asr.size(); ++i) e.asr["s" + std::to_string(i)] = asr[i];
  for (std::size_t i = 0; i < acc.size(); ++i) e.acc["h" + std::to_string(i)] = acc[i];
  return e;
}

}  // namespace

TEST_CASE("refusal oracle markers") {
  const TokenLayout L;
  CHECK(refusal_oracle(std::vector<int>{L.refuse, L.end}, L) == Verdict::Safe);
  CHECK(refusal_oracle(std::vector<int>{L.comply, 9, L.end}, L) == Verdict::Unsafe);
  CHECK(refusal_oracle(std::vector<int>{}, L) == Verdict::Unsafe);
  CHECK(refusal_oracle(std::vector<int>{L.end, L.refuse}, L) == Verdict::Unsafe);
  CHECK(refusal_oracle(std::vector<int>{12, L.refuse}, L) == Verdict::Unsafe);
}

TEST_CASE("asr on degenerate models") {
  const TokenLayout L;
  const auto prompts = select(gen_corpus(CorpusSpec{}), Modality::A, 0);
  const UnsafeSuite s = unsafe_suite("u", prompts);
  CHECK(asr(constant_model(L.refuse), nullptr, s, L) == 0.0);
  CHECK(asr(constant_model(L.comply), nullptr, s, L) == 100.0);
}

TEST_CASE("task accuracy and identity plans on the toy model") {
  const auto& t = testutil::toy();
  const TokenLayout L;
  const auto suites = eval_suites(t.corpora.heldout, L);
  const auto& w = t.trained.weights;
  CHECK(asr(w, nullptr, suites.safety[0], L) >= 70.0);
  for (const auto& h : suites.helpfulness) CHECK(task_acc(w, nullptr, h, L) >= 90.0);

  const VectorBank bank = build_vector_bank(t.cfg, w, t.corpora.pair_source, PairStrategy::MultiResponse,
                                            ExtractionMethod::MMS);
  const SteeringPlan zero = bank_plan(t.cfg, bank, PlanKind::Head, 2, 0.0f, 0.7);
  CHECK(task_acc(w, &zero, suites.helpfulness[0], L) == task_acc(w, nullptr, suites.helpfulness[0], L));

  const EvalReport self = transfer_eval(w.config, w.fingerprint(), w, bank_plan(t.cfg, bank, PlanKind::Head, 2, 64.0f, 0.7),
                                        suites, L, EvalOptions{});
  const auto plan = bank_plan(t.cfg, bank, PlanKind::Head, 2, 64.0f, 0.7);
  const auto native = evaluate(w, &plan, suites, L);
  CHECK(self.revised.asr == native.asr);
  CHECK(self.revised.acc == native.acc);

  ModelConfig wide = w.config;
  wide.d_model = 48;
  CHECK_THROWS_AS(require_same_widths(w.config, wide), Error);
}

TEST_CASE("composite score arithmetic") {
  CHECK(composite_score(inputs({50, 60}, {70}), inputs({50, 60}, {70})) == 0.0);
  CHECK(composite_score(inputs({50}, {80}), inputs({40}, {80})) == doctest::Approx(10.0));
  CHECK(composite_score(inputs({50}, {80}), inputs({50}, {79}), 3.0) == doctest::Approx(-3.0));
}

TEST_CASE("composite score reproduces the reference rows") {
  std::ifstream is(std::string(ACTREV_FIXTURE_DIR) + "/reference_mr_mms_head.json");
  REQUIRE(is);
  const auto j = nlohmann::json::parse(is);
  const auto m = j.at("models").at(0);
  const auto v = m.at("vanilla").get<std::vector<double>>();
  const auto r = m.at("revised").get<std::vector<double>>();
  const double cs = composite_score(inputs({v[0], v[1], v[2], v[3]}, {v[4], v[5]}),
                                    inputs({r[0], r[1], r[2], r[3]}, {r[4], r[5]}));
  CHECK(std::abs(cs - 34.35) <= 0.01);
}

TEST_CASE("composite score needs matching suites") {
  EvalInputs a = inputs({50}, {80}), b = inputs({40}, {});
  CHECK_THROWS_AS(composite_score(a, b), Error);
}

TEST_CASE("eval report json round-trip") {
  const auto rep = make_report(inputs({50, 40}, {80}), inputs({30, 35}, {78}), 3.0, "plan", "vanilla");
  const auto back = EvalReport::from_json(rep.to_json());
  CHECK(back.cs == doctest::Approx(rep.cs));
  CHECK(back.recompute_cs() == doctest::Approx(rep.cs));
  CHECK(back.plan_ref == "plan");
}

TEST_CASE("default grids") {
  const auto layer = default_layer_grid(32);
  CHECK(layer.layers.size() * layer.strengths.size() == 28);
  CHECK(layer.layers == std::vector<int>{4, 9, 14, 19, 24, 29, 31});
  const auto head = default_head_grid(4);
  CHECK(head.layers.size() == 7);
  CHECK(head.strengths.size() == 4);
  CHECK(rescale_reference_layers(4) == std::vector<int>{0, 1, 1, 2, 2, 3, 3});
}

TEST_CASE("sweep argmax selection") {
  SweepSpec spec;
  spec.kind = PlanKind::Layer;
  spec.layers = {0};
  spec.strengths = {1.0f};
  const PlanBuilder build = [](int l, float a, float) {
    SteeringPlan p;
    p.layer = l;
    p.alpha = a;
    return p;
  };
  const PlanEvaluator eval_const = [](const SteeringPlan* p) {
    EvalInputs e = inputs({50}, {80});
    if (p) e.asr["s0"] = 50 - p->alpha - p->layer;
    return e;
  };
  const auto one = sweep(spec, build, eval_const);
  REQUIRE(one.cells.size() == 1);
  CHECK(one.argmax == std::optional<std::size_t>(0));

  spec.layers = {0, 1, 2};
  spec.strengths = {1, 2, 3, 4};
  const PlanEvaluator spike = [](const SteeringPlan* p) {
    EvalInputs e = inputs({50}, {80});
    if (!p) return e;
    if (p->layer == 1 && p->alpha == 2) e.asr["s0"] = 0;
    if (p->layer == 2 && p->alpha == 4) throw Error(ErrorKind::InvalidArgument, "boom");
    return e;
  };
  const auto g = sweep(spec, build, spike);
  CHECK(g.cells.size() == 12);
  REQUIRE(g.best());
  CHECK(g.best()->layer == 1);
  CHECK(g.best()->alpha == 2.0f);
  CHECK(g.best()->report.cs == doctest::Approx(50.0));
  CHECK(!g.cells.back().ok);
  CHECK(g.cells.back().error == "boom");

  // All ties: lowest layer, then lowest alpha.
  std::vector<SweepCell> cells;
  for (int l : {2, 1}) {
    for (float a : {3.0f, 1.0f}) {
      SweepCell c;
      c.layer = l;
      c.alpha = a;
      c.ok = true;
      c.report.cs = 5.0;
      cells.push_back(c);
    }
  }
  const auto best = select_argmax(cells);
  REQUIRE(best);
  CHECK(cells[*best].layer == 1);
  CHECK(cells[*best].alpha == 1.0f);

  const auto back = SweepGrid::from_json(g.to_json());
  CHECK(back.cells.size() == 12);
  CHECK(back.argmax == g.argmax);
}
