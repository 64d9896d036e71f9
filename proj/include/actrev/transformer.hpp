#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "actrev/numkernel.hpp"
#include "actrev/rng.hpp"
#include "actrev/sites.hpp"

namespace actrev {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 32;
  int d_head = 8;
  int d_mlp = 64;
  int vocab_size = 64;
  int max_seq_len = 16;

  int site_width(const HookSite& site) const;
  void validate_site(const HookSite& site) const;
  void validate() const;
  std::string to_string() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Matrix ln1_gain, ln1_bias;  // 1 x D
  Matrix wq, wk, wv;          // (H * d_head) x D; rows [h*d_head, (h+1)*d_head) belong to head h
  Matrix wo;                  // D x (H * d_head)
  Matrix ln2_gain, ln2_bias;  // 1 x D
  Matrix w1, b1;              // d_mlp x D, 1 x d_mlp
  Matrix w2, b2;              // D x d_mlp, 1 x D
};

struct TransformerWeights {
  ModelConfig config;
  Matrix tok_embed;  // V x D
  Matrix pos_embed;  // T x D
  std::vector<LayerWeights> layers;
  Matrix lnf_gain, lnf_bias;  // 1 x D
  Matrix unembed;             // V x D

  // Zero-filled tensors of the right shapes.
  static TransformerWeights zeros(const ModelConfig& config);

  // Canonical tensor order, shared by serialization, fingerprinting and the optimizer.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t parameter_count() const;

  void validate() const;
  std::string fingerprint() const;
};

// Gaussian init (std `init_std`, residual-output projections scaled by
// 1/sqrt(2L)); layer-norm gains at 1 and biases at 0.
TransformerWeights init_weights(const ModelConfig& config, Rng& rng, float init_std = 0.08f);

void save_weights(const TransformerWeights& w, const std::string& path);
TransformerWeights load_weights(const std::string& path);

inline constexpr char kWeightMagic[8] = {'A', 'C', 'T', 'R', 'E', 'V', 'W', 'T'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

// Observers/mutators invoked at a site after any plan modification there.
using SiteHook = std::function<void(const HookSite& site, std::size_t position, std::span<float> value)>;

class HookRegistry {
 public:
  void add(const HookSite& site, SiteHook hook);
  void run(const HookSite& site, std::size_t position, std::span<float> value) const;
  bool has(const HookSite& site) const { return hooks_.count(site) > 0; }
  bool empty() const { return hooks_.empty(); }

 private:
  std::map<HookSite, std::vector<SiteHook>> hooks_;
};

struct ForwardOptions {
  std::vector<HookSite> capture;
  const SteeringPlan* plan = nullptr;
  // Plan injection applies at positions >= inject_from.
  std::size_t inject_from = 0;
  const HookRegistry* hooks = nullptr;
};

struct ForwardTrace {
  // One row per token position; captured before plan modification.
  std::map<HookSite, Matrix> captures;
  Matrix logits;  // T x V

  const Matrix& capture(const HookSite& site) const;
};

void validate_plan(const SteeringPlan& plan, const ModelConfig& config);

ForwardTrace forward(const TransformerWeights& weights, std::span<const int> tokens,
                     const ForwardOptions& options = {});

struct DecodeOptions {
  std::size_t max_new = 3;
  // Generation stops after emitting this token; -1 disables.
  int end_token = -1;
};

// Greedy decoding; ties go to the lowest token id. Returns prompt + continuation.
// The plan (if any) is applied on every forward pass.
std::vector<int> decode(const TransformerWeights& weights, std::span<const int> prompt,
                        const SteeringPlan* plan, const DecodeOptions& options);

std::vector<float> last_token_activation(const ForwardTrace& trace, const HookSite& site);

int argmax(std::span<const float> v);

}  // namespace actrev
