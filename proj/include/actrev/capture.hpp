#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actrev/synthdata.hpp"
#include "actrev/transformer.hpp"

namespace actrev {

struct ActivationEntry {
  std::vector<float> vector;
  std::uint8_t label = 0;  // 1 = positive (safe), 0 = negative
};

struct LabeledActivationSet {
  HookSite site;
  std::size_t width = 0;
  std::vector<ActivationEntry> entries;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::string corpus_fingerprint;
  std::string model_fingerprint;

  void add(std::vector<float> v, std::uint8_t label);
  void validate() const;
  std::string fingerprint() const;
};

enum class Labeling : std::uint8_t { ByInstructionLabel, ByContinuationSide };

// By-instruction-label capture: forward over each prompt, capture at its last token.
LabeledActivationSet capture_set(const TransformerWeights& model, const std::vector<Sample>& samples,
                                 const HookSite& site, std::size_t jobs = 1);

// By-continuation-side capture: two entries per pair (positive then negative),
// each taken at the final token of its full sequence.
LabeledActivationSet capture_set(const TransformerWeights& model, const std::vector<ContrastivePair>& pairs,
                                 const HookSite& site, std::size_t jobs = 1);

struct ActivationGrid {
  // Row-major over (layer, head).
  std::vector<LabeledActivationSet> head_sets;
  std::vector<LabeledActivationSet> layer_sets;

  const LabeledActivationSet& head(int layer, int h, int n_heads) const {
    return head_sets[static_cast<std::size_t>(layer) * n_heads + h];
  }
  const LabeledActivationSet& layer(int l) const { return layer_sets[l]; }
  const LabeledActivationSet& at(const HookSite& site, int n_heads) const;
};

std::vector<HookSite> grid_sites(const ModelConfig& config);

// All L*H head sites and L layer sites from one forward pass per input.
ActivationGrid capture_grid(const TransformerWeights& model, const std::vector<Sample>& samples, std::size_t jobs = 1);
ActivationGrid capture_grid(const TransformerWeights& model, const std::vector<ContrastivePair>& pairs,
                            std::size_t jobs = 1);

// Binary activation-set file, little-endian:
//   magic[8] "ACTREVAS" | u32 version | u8 site kind | i32 layer | i32 head (-1 if none)
//   | u32 width | u32 count | u32 n_pos | u32 n_neg
//   | u32 len + bytes corpus fingerprint | u32 len + bytes model fingerprint
//   | f32[count * width] rows | u8[count] labels
void save_activation_set(const LabeledActivationSet& set, const std::string& path);
LabeledActivationSet load_activation_set(const std::string& path);

inline constexpr std::uint32_t kActivationFormatVersion = 1;

}  // namespace actrev
