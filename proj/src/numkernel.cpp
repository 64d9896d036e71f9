#include "actrev/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "actrev/error.hpp"

namespace actrev {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorKind::ShapeMismatch, "matrix data length " + std::to_string(data_.size()) +
                                              " does not match shape " + shape_string());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorKind::ShapeMismatch, "ragged rows in Matrix::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

bool Matrix::all_finite() const { return actrev::all_finite(data_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::ShapeMismatch,
                "matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<float>(acc[j]);
  }
  if (!out.all_finite()) throw Error(ErrorKind::InvalidArgument, "matmul: non-finite result");
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

void matvec(const Matrix& m, std::span<const float> x, std::span<float> out) {
  if (m.cols() != x.size() || m.rows() != out.size()) {
    throw Error(ErrorKind::ShapeMismatch, "matvec: matrix " + m.shape_string() + " with vector " +
                                              std::to_string(x.size()) + " -> " +
                                              std::to_string(out.size()));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = static_cast<float>(dot(m.row(r), x));
}

std::vector<float> matvec(const Matrix& m, std::span<const float> x) {
  std::vector<float> out(m.rows());
  matvec(m, x, out);
  return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

void softmax_inplace(std::span<float> v, float scale) {
  if (v.empty()) throw Error(ErrorKind::InvalidArgument, "softmax: empty input");
  double mx = -INFINITY;
  for (float x : v) mx = std::max(mx, static_cast<double>(x) * scale);
  double sum = 0.0;
  for (float& x : v) {
    const double e = std::exp(static_cast<double>(x) * scale - mx);
    x = static_cast<float>(e);
    sum += e;
  }
  for (float& x : v) x = static_cast<float>(x / sum);
}

std::vector<float> softmax(std::span<const float> v, float scale) {
  std::vector<float> out(v.begin(), v.end());
  softmax_inplace(out, scale);
  return out;
}

MeanVar mean_var(std::span<const float> v) {
  MeanVar mv;
  if (v.empty()) return mv;
  double s = 0.0;
  for (float x : v) s += x;
  mv.mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (float x : v) {
    const double d = x - mv.mean;
    ss += d * d;
  }
  mv.var = ss / static_cast<double>(v.size());
  return mv;
}

std::vector<float> layer_norm(std::span<const float> v, std::span<const float> gain,
                              std::span<const float> bias, float eps) {
  if (v.size() != gain.size() || v.size() != bias.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "layer_norm: lengths " + std::to_string(v.size()) + ", " +
                    std::to_string(gain.size()) + ", " + std::to_string(bias.size()));
  }
  if (!(eps > 0.0f)) throw Error(ErrorKind::InvalidArgument, "layer_norm: eps must be positive");
  const MeanVar mv = mean_var(v);
  const double rstd = 1.0 / std::sqrt(mv.var + eps);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>((v[i] - mv.mean) * rstd * gain[i] + bias[i]);
  }
  return out;
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::ShapeMismatch, "axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace actrev
