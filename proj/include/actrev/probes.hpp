#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "actrev/capture.hpp"
#include "actrev/numkernel.hpp"

namespace actrev {

struct ProbeOptions {
  int epochs = 10;
  float lr = 1e-3f;
  int batch_size = 16;
  // Validation share of the stratified split (4:1).
  double val_fraction = 0.2;
  // Standardize inputs with training-split statistics.
  bool standardize = true;
};

// input -> 128 -> 32 -> 1, ReLU hidden units, sigmoid output.
struct MlpProbe {
  static constexpr int kHidden1 = 128;
  static constexpr int kHidden2 = 32;

  Matrix w1, b1, w2, b2, w3, b3;
  std::vector<float> mean, inv_std;
  int epochs = 0;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;

  std::size_t input_width() const { return w1.cols(); }
  double predict(std::span<const float> x) const;
  bool classify(std::span<const float> x) const { return predict(x) >= 0.5; }
};

struct MlpProbeFit {
  MlpProbe probe;
  double val_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
};

MlpProbeFit train_mlp_probe(const LabeledActivationSet& set, std::uint64_t seed, const ProbeOptions& opt = {});

double accuracy(const MlpProbe& probe, const LabeledActivationSet& set);

// Logistic regression; decision rule sign(w.x + b), positive = label 1.
struct LinearProbe {
  std::vector<float> w;
  float b = 0.0f;

  double score(std::span<const float> x) const;
  bool classify(std::span<const float> x) const { return score(x) >= 0.0; }
};

struct LinearProbeOptions {
  double l2 = 1e-2;
  int max_iter = 100;
  double tol = 1e-10;
};

LinearProbe train_linear_probe(const LabeledActivationSet& set, const LinearProbeOptions& opt = {});
double accuracy(const LinearProbe& probe, const LabeledActivationSet& set);

struct HeatmapCell {
  HookSite site;
  double val_accuracy = 0.0;
  std::map<std::string, double> eval_accuracy;
};

struct HeatmapReport {
  std::vector<HeatmapCell> cells;
  std::string train_fingerprint;
  std::map<std::string, std::string> eval_fingerprints;

  const HeatmapCell* find(const HookSite& site) const;
  // Mean over all cells of val (in-distribution) or a named eval accuracy.
  double mean_val() const;
  double mean_eval(const std::string& name) const;

  void save(const std::string& path) const;
  static HeatmapReport load(const std::string& path);
};

// Trains one MLP probe per grid site on `train`, reports its held-out
// validation accuracy and accuracy on every eval grid.
HeatmapReport heatmap(const ModelConfig& config, const ActivationGrid& train,
                      const std::map<std::string, const ActivationGrid*>& eval, std::uint64_t seed,
                      const ProbeOptions& opt = {}, std::size_t jobs = 1);

// Stratified split over unique (vector, label) entries; exposed for tests.
struct ProbeSplit {
  std::vector<ActivationEntry> train;
  std::vector<ActivationEntry> val;
};
ProbeSplit stratified_split(const LabeledActivationSet& set, double val_fraction, std::uint64_t seed);

}  // namespace actrev
