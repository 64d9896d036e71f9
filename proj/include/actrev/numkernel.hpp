#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace actrev {

/// Dense row-major float matrix. Vectors are represented as std::vector<float>
/// or as 1 x n matrices when a tensor needs a shape (weights, biases).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::string shape_string() const;
  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// out = m * x for a column vector x. Accumulates in double.
void matvec(const Matrix& m, std::span<const float> x, std::span<float> out);
std::vector<float> matvec(const Matrix& m, std::span<const float> x);

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);

// Numerically stable softmax of scale * v.
std::vector<float> softmax(std::span<const float> v, float scale = 1.0f);
void softmax_inplace(std::span<float> v, float scale = 1.0f);

std::vector<float> layer_norm(std::span<const float> v, std::span<const float> gain,
                              std::span<const float> bias, float eps);

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;
};
// Two-pass population statistics in double.
MeanVar mean_var(std::span<const float> v);

void axpy(float alpha, std::span<const float> x, std::span<float> y);

bool all_finite(std::span<const float> v);

}  // namespace actrev
