#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "actrev/error.hpp"
#include "actrev/revision.hpp"
#include "helpers.hpp"

using namespace actrev;

TEST_CASE("mms closed forms and order invariance") {
  LabeledActivationSet s;
  s.width = 2;
  s.site = HookSite::layer_residual(0);
  s.add({1, 0}, 1);
  s.add({0, 1}, 0);
  s.add({2, 0}, 1);
  s.add({0, 2}, 0);
  // means (1.5, 0) and (0, 1.5)
  CHECK(extract_mms(s).direction == std::vector<float>{1.5f, -1.5f});

  auto same = testutil::blobs(20, 3, 0.0, 1);
  for (std::size_t i = 0; i < same.entries.size(); i += 2) same.entries[i + 1].vector = same.entries[i].vector;
  for (float x : extract_mms(same).direction) CHECK(x == 0.0f);

  auto b = testutil::blobs(30, 5, 1.0, 2);
  const auto d = extract_mms(b).direction;
  Rng rng(3);
  rng.shuffle(std::span<ActivationEntry>(b.entries));
  const auto d2 = extract_mms(b).direction;
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d2[i] == doctest::Approx(d[i]).epsilon(1e-6));
}

TEST_CASE("pwd normalizes and follows orientation") {
  LinearProbe p;
  p.w = {3, 4};
  const auto r = extract_pwd(p, HookSite::layer_residual(0));
  CHECK(r.direction[0] == doctest::Approx(0.6));
  CHECK(r.direction[1] == doctest::Approx(0.8));

  auto b = testutil::blobs(40, 3, 4.0, 4);
  const auto d = extract(b, ExtractionMethod::PWD).direction;
  for (auto& e : b.entries) e.label = 1 - e.label;
  const auto f = extract(b, ExtractionMethod::PWD).direction;
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(f[i] == doctest::Approx(-d[i]).epsilon(1e-4).scale(1.0));
  CHECK(d[0] > 0);
  CHECK(f[0] < 0);  // flipped set: positives now at -sep/2
}

TEST_CASE("head selection counts and tie-breaks") {
  HeatmapReport r;
  for (int h = 0; h < 10; ++h) r.cells.push_back({HookSite::head_output(3, h), 0.5 + 0.01 * (h % 5), {}});
  const auto m = select_heads(r, 3, 0.7, 10);
  CHECK(std::count(m.begin(), m.end(), true) == 7);
  const auto all = select_heads(r, 3, 1.0, 10);
  CHECK(std::count(all.begin(), all.end(), true) == 10);
  // accuracies 0.54 x2, 0.53 x2, 0.52 x2, 0.51 x2, 0.50 x2: the cut splits the 0.51 pair.
  CHECK(m[3]);
  CHECK(m[8]);
  CHECK(m[1]);
  CHECK(!m[6]);
  CHECK(!m[0]);
  CHECK(m == select_heads(r, 3, 0.7, 10));
  CHECK_THROWS_AS(select_heads(r, 3, 0.0, 10), Error);
}

TEST_CASE("plan validation") {
  ModelConfig c;
  c.n_layers = 32;
  RevisionVector lv{HookSite::layer_residual(9), std::vector<float>(c.d_model, 0.1f), ExtractionMethod::MMS, ""};
  const auto lp = make_plan(c, PlanKind::Layer, 9, 1.5f, {lv});
  CHECK(lp.layer == 9);
  CHECK(lp.alpha == 1.5f);
  std::vector<RevisionVector> hv;
  for (int h = 0; h < c.n_heads; ++h)
    hv.push_back({HookSite::head_output(19, h), std::vector<float>(c.d_head, 0.1f), ExtractionMethod::MMS, ""});
  HeatmapReport r;
  for (int h = 0; h < c.n_heads; ++h) r.cells.push_back({HookSite::head_output(19, h), 0.9, {}});
  const auto hp = make_plan(c, PlanKind::Head, 19, 2.0f, hv, select_heads(r, 19, 0.7, c.n_heads));
  CHECK(std::count(hp.head_mask.begin(), hp.head_mask.end(), true) == 3);

  CHECK_NOTHROW(make_plan(c, PlanKind::Head, 19, 2.0f, {}, std::vector<bool>(c.n_heads, false)));
  CHECK_THROWS_AS(make_plan(c, PlanKind::Layer, 40, 1.0f, {lv}), Error);
  RevisionVector bad = lv;
  bad.direction.resize(3);
  CHECK_THROWS_AS(make_plan(c, PlanKind::Layer, 9, 1.0f, {bad}), Error);
  CHECK_THROWS_AS(make_plan(c, PlanKind::Layer, 9, std::nanf(""), {lv}), Error);
}

TEST_CASE("plan json round-trip") {
  ModelConfig c;
  Rng rng(5);
  std::vector<RevisionVector> hv;
  for (int h = 0; h < c.n_heads; ++h)
    hv.push_back({HookSite::head_output(2, h), testutil::randvec(rng, c.d_head), ExtractionMethod::PWD, "abc"});
  auto p = make_plan(c, PlanKind::Head, 2, 48.0f, hv, std::vector<bool>{true, false, true, true});
  p.negate = true;
  p.source_model = "0123456789abcdef";
  const std::string path = testutil::tmp_path("plan.json");
  save_plan(p, path);
  const auto q = load_plan(path);
  CHECK(plan_hash(q) == plan_hash(p));
  CHECK(q.source_model == p.source_model);
  CHECK(q.negate);
  CHECK(q.head_mask == p.head_mask);
  REQUIRE(q.vectors.size() == 3);
  CHECK(q.vectors[1].direction == p.vectors[1].direction);
  CHECK(plan_hash(with_alpha(p, 1.0f)) != plan_hash(p));
  CHECK_THROWS_AS(plan_from_json(nlohmann::json{{"format", "nope"}}), Error);
}
