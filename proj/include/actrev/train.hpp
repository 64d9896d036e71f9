#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "actrev/transformer.hpp"

namespace actrev {

// One training sequence; position t contributes -log p(tokens[t+1]) when
// predict[t+1] is set.
struct TrainExample {
  std::vector<int> tokens;
  std::vector<std::uint8_t> predict;
};

struct LossStats {
  double loss_sum = 0.0;
  std::size_t count = 0;
  double mean() const { return count ? loss_sum / static_cast<double>(count) : 0.0; }
};

// Adds d(loss_sum * loss_scale)/d(weights) into `grad` (same shapes as weights).
LossStats sequence_loss_grad(const TransformerWeights& weights, const TrainExample& ex,
                             TransformerWeights& grad, float loss_scale);

// Loss only, via the inference forward path.
LossStats sequence_loss(const TransformerWeights& weights, const TrainExample& ex);

struct AdamOptions {
  float lr = 3e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

class Adam {
 public:
  Adam(const TransformerWeights& shape_like, AdamOptions options);
  void step(TransformerWeights& weights, const TransformerWeights& grad, float lr);
  int steps_taken() const { return t_; }

 private:
  AdamOptions opt_;
  TransformerWeights m_;
  TransformerWeights v_;
  int t_ = 0;
};

void zero_(TransformerWeights& w);
double global_norm(const TransformerWeights& w);
void scale_(TransformerWeights& w, float s);

}  // namespace actrev
