#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "actrev/error.hpp"
#include "actrev/viz.hpp"
#include "helpers.hpp"

using namespace actrev;

namespace {

double dist(const ProjectedPoint& a, const ProjectedPoint& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::vector<std::string> two_groups(std::size_t n) {
  std::vector<std::string> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = i % 2 ? "A" : "B";
  return g;
}

// Power iteration with deflation on the covariance, in plain loops.
std::vector<std::vector<double>> top_eigvecs(const std::vector<std::vector<double>>& C, int k) {
  const std::size_t d = C.size();
  auto M = C;
  std::vector<std::vector<double>> out;
  for (int e = 0; e < k; ++e) {
    std::vector<double> v(d, 1.0 / std::sqrt(double(d)));
    v[e % d] += 0.3;
    double lambda = 0;
    for (int it = 0; it < 5000; ++it) {
      std::vector<double> w(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) w[i] += M[i][j] * v[j];
      double n = 0;
      for (double x : w) n += x * x;
      n = std::sqrt(n);
      for (auto& x : w) x /= n;
      v = w;
      lambda = n;
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) M[i][j] -= lambda * v[i] * v[j];
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("pca of axis-aligned 2-D data is a rigid motion") {
  Rng rng(1);
  std::vector<std::vector<float>> x;
  for (int i = 0; i < 40; ++i) x.push_back({float(3 * rng.normal()), float(0.5 * rng.normal())});
  const auto p = pca_project(x, two_groups(x.size()));
  REQUIRE(p.points.size() == 40);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double d0 = std::hypot(x[i][0] - x[j][0], x[i][1] - x[j][1]);
      CHECK(dist(p.points[i], p.points[j]) == doctest::Approx(d0).epsilon(1e-5).scale(1.0));
    }
  CHECK(p.explained[0] > p.explained[1]);
}

TEST_CASE("pca of rank-1 data has a flat second coordinate") {
  Rng rng(2);
  const std::vector<float> dir{1, 2, -1, 0.5f};
  std::vector<std::vector<float>> x;
  for (int i = 0; i < 30; ++i) {
    const float s = static_cast<float>(rng.normal());
    x.push_back({dir[0] * s, dir[1] * s, dir[2] * s, dir[3] * s});
  }
  for (const auto& pt : pca_project(x, two_groups(x.size())).points) CHECK(std::abs(pt.y) < 1e-5);
}

TEST_CASE("pca reconstruction error matches a power-iteration oracle") {
  Rng rng(3);
  const std::size_t n = 60, d = 10;
  std::vector<std::vector<float>> x(n);
  for (auto& v : x) {
    v = testutil::randvec(rng, d);
    for (std::size_t k = 0; k < d; ++k) v[k] *= static_cast<float>(1.0 + k);  // distinct variances
  }
  std::vector<double> mean(d, 0.0);
  for (const auto& v : x)
    for (std::size_t k = 0; k < d; ++k) mean[k] += v[k] / double(n);
  std::vector<std::vector<double>> C(d, std::vector<double>(d, 0.0));
  double total = 0;
  for (const auto& v : x)
    for (std::size_t i = 0; i < d; ++i) {
      total += (v[i] - mean[i]) * (v[i] - mean[i]);
      for (std::size_t j = 0; j < d; ++j) C[i][j] += (v[i] - mean[i]) * (v[j] - mean[j]) / double(n);
    }
  const auto E = top_eigvecs(C, 2);
  double oracle_proj = 0;
  for (const auto& v : x)
    for (const auto& e : E) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += (v[k] - mean[k]) * e[k];
      oracle_proj += s * s;
    }
  double ours = 0;
  for (const auto& pt : pca_project(x, two_groups(n)).points) ours += pt.x * pt.x + pt.y * pt.y;
  // Residual sum of squares = total - projected.
  CHECK(total - ours == doctest::Approx(total - oracle_proj).epsilon(1e-4));
}

TEST_CASE("pca preconditions") {
  CHECK_THROWS_AS(pca_project({{1, 2}, {3, 4}}, {"a", "b"}), Error);
  CHECK_THROWS_AS(pca_project({{1, 2}, {3, 4}, {5}}, {"a", "b", "c"}), Error);
}

TEST_CASE("tsne separates well-separated clusters") {
  Rng rng(4);
  std::vector<std::vector<float>> x;
  std::vector<std::string> g;
  for (int i = 0; i < 60; ++i) {
    const bool a = i % 2;
    x.push_back(testutil::randvec(rng, 8, 1.0, a ? 6.0 : -6.0));
    g.push_back(a ? "A" : "B");
  }
  TsneParams tp;
  tp.perplexity = 10;
  tp.iterations = 400;
  const auto p = tsne_project(x, g, tp);
  CHECK(silhouette(p.points) > 0.5);
  CHECK(group_spread(p.points).separated());
  CHECK(p.kl.size() == 400);
}

TEST_CASE("tsne is permutation-equivariant and deterministic") {
  Rng rng(5);
  std::vector<std::vector<float>> x;
  for (int i = 0; i < 25; ++i) x.push_back(testutil::randvec(rng, 4));
  std::vector<std::string> g = two_groups(x.size());
  TsneParams tp;
  tp.perplexity = 5;
  tp.iterations = 150;
  tp.seed = 7;
  const auto a = tsne_project(x, g, tp);
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng(9).shuffle(std::span<std::size_t>(perm));
  std::vector<std::vector<float>> xp;
  std::vector<std::string> gp;
  for (auto i : perm) {
    xp.push_back(x[i]);
    gp.push_back(g[i]);
  }
  const auto b = tsne_project(xp, gp, tp);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    CHECK(b.points[k].x == a.points[perm[k]].x);
    CHECK(b.points[k].y == a.points[perm[k]].y);
    CHECK(b.points[k].group == a.points[perm[k]].group);
  }
  CHECK(tsne_project(x, g, tp).points[3].x == a.points[3].x);
}

TEST_CASE("perplexity calibration hits its target") {
  Rng rng(6);
  Eigen::MatrixXd X(40, 3);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  const auto P = tsne_joint_affinities(X, 12.0);
  CHECK(P.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(tsne_joint_affinities(X, 40.0), Error);
  TsneParams tp;
  CHECK_THROWS_AS(tsne_project(std::vector<std::vector<float>>(kTsneMaxPoints + 1, std::vector<float>{1.0f}),
                               std::vector<std::string>(kTsneMaxPoints + 1, "a"), tp),
                  Error);
}

TEST_CASE("plot data files") {
  Projection2D empty;
  const std::string p0 = testutil::tmp_path("empty.csv");
  emit_plot_data(empty, p0);
  std::ifstream is(p0);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 1);
  CHECK(read_plot_data(p0).empty());

  Projection2D three;
  three.points = {{0.1, 0.2, "A"}, {-1.0 / 3, 1e-7, "B"}, {5, 6, "A"}};
  const std::string p3 = testutil::tmp_path("three.csv");
  emit_plot_data(three, p3);
  const auto back = read_plot_data(p3);
  REQUIRE(back.size() == 3);
  CHECK(back[1].x == three.points[1].x);
  CHECK(back[1].group == "B");
  std::ifstream svg(p3 + ".svg");
  CHECK(svg.good());
  CHECK(render_svg(three).find("<svg") != std::string::npos);
}
