#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actrev/train.hpp"
#include "actrev/transformer.hpp"

namespace actrev {

// Reserved ids occupy [0, content_begin); the three content ranges follow.
struct TokenLayout {
  int pad = 0;
  int bos = 1;
  int sep = 2;
  int end = 3;
  int refuse = 4;
  int comply = 5;
  int content_begin = 8;
  int n_content = 32;
  int n_unsafe = 8;
  int n_modality_b = 16;

  int unsafe_begin() const { return content_begin + n_content; }
  int modality_b_begin() const { return unsafe_begin() + n_unsafe; }
  int required_vocab() const { return modality_b_begin() + n_modality_b; }

  bool is_content(int t) const { return t >= content_begin && t < unsafe_begin(); }
  bool is_unsafe(int t) const { return t >= unsafe_begin() && t < modality_b_begin(); }
  bool is_modality_b(int t) const { return t >= modality_b_begin() && t < required_vocab(); }

  // The last n_unsafe modality-B ids depict the unsafe concepts; the rest are benign image tokens.
  int image_unsafe_begin() const { return required_vocab() - n_unsafe; }
  bool is_image_unsafe(int t) const { return t >= image_unsafe_begin() && t < required_vocab(); }
  bool is_image_benign(int t) const { return t >= modality_b_begin() && t < image_unsafe_begin(); }
  // Text-side counterpart of a modality-B token (identity for other tokens).
  int concept_of(int t) const;
};

enum class Modality : std::uint8_t { A = 0, B = 1 };
std::string modality_name(Modality m);
Modality parse_modality(const std::string& s);

// Label convention: 1 = safe, 0 = unsafe.
struct Sample {
  std::vector<int> prompt;
  int label = 1;
  Modality modality = Modality::A;
  std::vector<int> target;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class BUnsafeTarget : std::uint8_t { Comply = 0, Omit = 1 };

// Where a modality-B unsafe prompt carries its planted concept: in the image
// prefix (an image-unsafe token) or in the text (an unsafe content token).
enum class BUnsafeChannel : std::uint8_t { Image = 0, Text = 1 };
std::string channel_name(BUnsafeChannel c);
BUnsafeChannel parse_channel(const std::string& s);

struct CorpusSpec {
  TokenLayout layout;
  int vocab_size = 64;
  int n_a_safe = 400;
  int n_a_unsafe = 400;
  int n_b_safe = 400;
  int n_b_unsafe = 400;
  int min_content_len = 4;
  int max_content_len = 8;
  int b_prefix_len = 3;
  BUnsafeTarget b_unsafe_target = BUnsafeTarget::Omit;
  BUnsafeChannel b_unsafe_channel = BUnsafeChannel::Image;
  std::uint64_t seed = 1;

  void validate() const;
  // Longest prompt + longest target.
  int max_sequence_length() const;
};

using Corpus = std::vector<Sample>;

// Cells are emitted in the order A-safe, A-unsafe, B-safe, B-unsafe.
Corpus gen_corpus(const CorpusSpec& spec);

// The answer a compliant response must echo: the first content token of the prompt.
int gold_token(const Sample& s, const TokenLayout& layout);
// The text token naming the planted unsafe concept; throws for safe prompts.
int unsafe_concept(const Sample& s, const TokenLayout& layout);
// A refusal restates the concept it declines: REFUSE <concept> END.
std::vector<int> refusal_continuation(const Sample& s, const TokenLayout& layout);
std::vector<int> compliant_continuation(const Sample& s, const TokenLayout& layout);

std::string corpus_fingerprint(const Corpus& corpus);

// Text format, one record per line after a header line:
//   #actrev-corpus v1
//   <tokens>\t<label>\t<modality>\t<target>
// where token lists are space-separated ids, label is 0/1 and modality is A/B.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

std::vector<Sample> select(const Corpus& corpus, Modality modality, int label);

enum class PairStrategy : std::uint8_t { MultiInstruction = 0, TextResponse = 1, MultiResponse = 2 };
std::string strategy_name(PairStrategy s);
PairStrategy parse_strategy(const std::string& s);

// Response strategies share `prompt` and contrast `positive`/`negative`
// continuations. MultiInstruction contrasts two prompts: `prompt` is the safe
// instruction, `negative_prompt` the unsafe one, and continuations are empty.
struct ContrastivePair {
  std::vector<int> prompt;
  std::vector<int> positive;
  std::vector<int> negative;
  std::vector<int> negative_prompt;
  PairStrategy strategy = PairStrategy::MultiResponse;

  std::vector<int> positive_sequence() const;
  std::vector<int> negative_sequence() const;
};

std::vector<ContrastivePair> build_contrastive_pairs(const Corpus& corpus, const TokenLayout& layout,
                                                     PairStrategy strategy, std::size_t n, std::uint64_t seed);

struct TrainSchedule {
  int steps = 1200;
  int batch_size = 16;
  float lr = 3e-3f;
  int warmup_steps = 50;
  float weight_decay = 0.0f;
  float grad_clip = 1.0f;
  float init_std = 0.08f;
  // Norm of the offset added to modality-B token embeddings at init.
  float modality_b_shift = 2.5f;
  // Keep every modality-B embedding equal to its text counterpart plus the
  // offset for the whole run (a frozen, shifted projector). Off: only the
  // initial rows are tied and they train freely afterwards.
  bool tie_modality_b = true;
  bool loss_on_prompt = false;
  std::uint64_t seed = 1;
  // Weight-init seed; 0 means "use seed".
  std::uint64_t init_seed = 0;
  std::size_t jobs = 1;

  float gate_a_refusal_min = 0.90f;
  float gate_b_refusal_max = 0.30f;
  float gate_task_acc_min = 0.90f;
  bool enforce_gates = true;
  int decode_max_new = 3;
};

struct GateReport {
  double a_unsafe_refusal = 0.0;
  double b_unsafe_refusal = 0.0;
  double safe_task_acc = 0.0;
  std::size_t n_a_unsafe = 0, n_b_unsafe = 0, n_safe = 0;
  bool a_ok = false, b_ok = false, acc_ok = false;

  bool passed() const { return a_ok && b_ok && acc_ok; }
  std::string to_string() const;
};

struct TrainResult {
  TransformerWeights weights;
  GateReport gates;
  std::vector<double> loss_curve;  // mean loss per step
};

std::vector<TrainExample> make_train_examples(const Corpus& corpus, bool loss_on_prompt);

// Initial weights for the toy model: Gaussian init plus a shared offset on the
// modality-B token embeddings.
TransformerWeights init_toy_weights(const ModelConfig& config, const TokenLayout& layout,
                                    const TrainSchedule& schedule);

// The shared modality-B offset drawn for this schedule (norm modality_b_shift).
std::vector<float> modality_b_offset(const ModelConfig& config, const TrainSchedule& schedule);
// Rewrites modality-B embedding rows as text counterpart + offset.
void apply_modality_projection(TransformerWeights& w, const TokenLayout& layout, std::span<const float> offset);

GateReport measure_gates(const TransformerWeights& model, const Corpus& heldout, const TokenLayout& layout,
                         const TrainSchedule& schedule);

// Trains with next-token cross-entropy on prompt+target and checks the
// behavioral gates on `heldout`. Throws ErrorKind::GateFailure (message holds
// the report) when enforce_gates is set and a gate is unmet.
TrainResult train_toy_lm(const Corpus& corpus, const Corpus& heldout, const ModelConfig& config,
                         const TokenLayout& layout, const TrainSchedule& schedule);

}  // namespace actrev
