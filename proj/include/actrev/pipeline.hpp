#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actrev/capture.hpp"
#include "actrev/config.hpp"
#include "actrev/eval.hpp"
#include "actrev/probes.hpp"
#include "actrev/revision.hpp"
#include "actrev/synthdata.hpp"

namespace actrev {

// Shared experiment steps used by the CLI and the acceptance suite. All
// randomness derives from one seed: corpus = seed, held-out = seed + 1000,
// pair source = seed + 2000, pair draw = seed + 2, probes = seed + 6 / + 8,
// t-SNE init = seed + 10.
struct Corpora {
  Corpus train;
  Corpus heldout;
  Corpus pair_source;
};

CorpusSpec corpus_spec(const Config& c, std::uint64_t seed);
Corpora make_corpora(const Config& c, std::uint64_t seed);

TrainSchedule train_schedule(const Config& c, std::uint64_t seed, std::uint64_t init_seed = 0);
TrainResult train_model(const Config& c, const Corpora& corpora, std::uint64_t seed, std::uint64_t init_seed = 0);

// Safety: b_unsafe, a_unsafe. Helpfulness: a_safe, b_safe.
EvalSuites eval_suites(const Corpus& heldout, const TokenLayout& layout);
EvalOptions eval_options(const Config& c);

// Vectors at every grid site plus the probe heatmap over the same pair
// activations (used to rank heads).
struct VectorBank {
  PairStrategy strategy = PairStrategy::MultiResponse;
  ExtractionMethod method = ExtractionMethod::MMS;
  std::string model_fingerprint;
  std::vector<RevisionVector> vectors;
  HeatmapReport heatmap;

  nlohmann::json to_json() const;
  static VectorBank from_json(const nlohmann::json& j);
};

std::vector<ContrastivePair> make_pairs(const Config& c, const Corpus& pair_source, PairStrategy strategy);
VectorBank build_vector_bank(const Config& c, const TransformerWeights& model, const ActivationGrid& pair_grid,
                             PairStrategy strategy, ExtractionMethod method);
VectorBank build_vector_bank(const Config& c, const TransformerWeights& model, const Corpus& pair_source,
                             PairStrategy strategy, ExtractionMethod method);

SteeringPlan bank_plan(const Config& c, const VectorBank& bank, PlanKind kind, int layer, float alpha, double ratio);

SweepSpec sweep_spec(const Config& c, const std::string& grid_name);
SweepGrid run_sweep(const Config& c, const TransformerWeights& model, const VectorBank& bank,
                    const EvalSuites& suites, const SweepSpec& spec, const SweepOptions& options = {});

// Probes trained on modality-A prompts (by instruction label), evaluated on
// modality-B prompts as "B".
HeatmapReport modality_heatmap(const Config& c, const TransformerWeights& model, const Corpus& heldout);

TsneParams tsne_params(const Config& c);

}  // namespace actrev
