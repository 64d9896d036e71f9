#include <doctest.h>

#include <cmath>

#include "actrev/error.hpp"
#include "actrev/numkernel.hpp"
#include "actrev/rng.hpp"
#include "actrev/util.hpp"
#include "helpers.hpp"

using namespace actrev;

TEST_CASE("matmul identity and projector") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), a) == a);
  const Matrix p = Matrix::from_rows({{1, 0}, {0, 0}});
  CHECK(matmul(p, Matrix::from_rows({{5, 6}, {7, 8}})) == Matrix::from_rows({{5, 6}, {0, 0}}));
}

TEST_CASE("matmul matches a triple loop") {
  Rng rng(3);
  Matrix a(3, 4), b(4, 2);
  for (float& x : a.data()) x = static_cast<float>(rng.normal());
  for (float& x : b.data()) x = static_cast<float>(rng.normal());
  const Matrix c = matmul(a, b);
  REQUIRE(c.rows() == 3);
  REQUIRE(c.cols() == 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += double(a(i, k)) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-6));
    }
}

TEST_CASE("matmul rejects inner-dimension mismatch") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), Error);
}

TEST_CASE("softmax closed forms") {
  for (float x : softmax(std::vector<float>{7, 7, 7})) CHECK(x == doctest::Approx(1.0 / 3));
  const auto s = softmax(std::vector<float>{0.0f, static_cast<float>(std::log(3.0))});
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax survives large logits") {
  const auto s = softmax(std::vector<float>{1000.0f, 1000.5f});
  REQUIRE(all_finite(s));
  CHECK(s[0] + s[1] == doctest::Approx(1.0).epsilon(1e-7));
  // long double reference: 1 / (1 + e^0.5)
  const long double p0 = 1.0L / (1.0L + std::exp(0.5L));
  CHECK(s[0] == doctest::Approx(static_cast<double>(p0)).epsilon(1e-6));
}

TEST_CASE("layer norm limits") {
  const std::vector<float> g(5, 1.0f), b(5, 0.0f);
  for (float x : layer_norm(std::vector<float>(5, 2.5f), g, b, 1e-5f)) CHECK(x == 0.0f);
  const std::vector<float> g2(2, 1.0f), b2(2, 0.0f);
  const auto y = layer_norm(std::vector<float>{1, -1}, g2, b2, 1e-12f);
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer norm matches two-pass statistics") {
  Rng rng(9);
  const auto v = testutil::randvec(rng, 8, 3.0, 1.0);
  const auto g = testutil::randvec(rng, 8);
  const auto b = testutil::randvec(rng, 8);
  double mean = 0;
  for (float x : v) mean += x;
  mean /= 8;
  double var = 0;
  for (float x : v) var += (x - mean) * (x - mean);
  var /= 8;
  const auto y = layer_norm(v, g, b, 1e-5f);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(y[i] == doctest::Approx((v[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i]).epsilon(1e-5));
}

TEST_CASE("rng streams are pure functions of seed, stream and counter") {
  Rng a(42, 3), b(42, 3), c(42, 4);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(u.below(5) < 5u);
  }
}

TEST_CASE("fingerprint is FNV-1a") {
  // Published FNV-1a 64 test vector.
  CHECK(Fingerprint().bytes("a", 1).value() == 0xaf63dc4c8601ec8cull);
  // text() is length-prefixed so concatenations cannot collide.
  CHECK(Fingerprint().text("ab").text("c").value() != Fingerprint().text("a").text("bc").value());
  CHECK(Fingerprint().hex().size() == 16);
}
