#include "actrev/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "actrev/error.hpp"
#include "actrev/eval.hpp"
#include "actrev/util.hpp"

namespace actrev {

std::string modality_name(Modality m) { return m == Modality::A ? "A" : "B"; }

Modality parse_modality(const std::string& s) {
  if (s == "A") return Modality::A;
  if (s == "B") return Modality::B;
  throw Error(ErrorKind::Format, "unknown modality '" + s + "'");
}

int TokenLayout::concept_of(int t) const {
  if (is_image_unsafe(t)) return unsafe_begin() + (t - image_unsafe_begin());
  if (is_image_benign(t)) return content_begin + (t - modality_b_begin()) % n_content;
  return t;
}

std::string channel_name(BUnsafeChannel c) { return c == BUnsafeChannel::Image ? "image" : "text"; }

BUnsafeChannel parse_channel(const std::string& s) {
  if (s == "image") return BUnsafeChannel::Image;
  if (s == "text") return BUnsafeChannel::Text;
  throw Error(ErrorKind::Format, "unknown modality-B unsafe channel '" + s + "'");
}

void CorpusSpec::validate() const {
  if (vocab_size < layout.required_vocab()) {
    throw Error(ErrorKind::InvalidArgument, "vocab_size " + std::to_string(vocab_size) +
                                                " too small for reserved layout (needs " +
                                                std::to_string(layout.required_vocab()) + ")");
  }
  if (layout.n_content < 1 || layout.n_unsafe < 1 || layout.n_modality_b <= layout.n_unsafe)
    throw Error(ErrorKind::InvalidArgument,
                "token layout ranges must be non-empty and modality B needs benign tokens beyond its n_unsafe image-unsafe ids");
  if (min_content_len < 2 || max_content_len < min_content_len)
    throw Error(ErrorKind::InvalidArgument, "content length range must satisfy 2 <= min <= max");
  if (b_prefix_len < 1) throw Error(ErrorKind::InvalidArgument, "b_prefix_len must be >= 1");
  if (n_a_safe < 0 || n_a_unsafe < 0 || n_b_safe < 0 || n_b_unsafe < 0)
    throw Error(ErrorKind::InvalidArgument, "cell counts must be non-negative");
}

int CorpusSpec::max_sequence_length() const { return 1 + b_prefix_len + max_content_len + 1 + 3; }

namespace {

Sample make_sample(const CorpusSpec& spec, Rng& rng, Modality modality, int label) {
  const TokenLayout& L = spec.layout;
  Sample s;
  s.modality = modality;
  s.label = label;
  const bool in_image = modality == Modality::B && spec.b_unsafe_channel == BUnsafeChannel::Image;
  const int n_benign = L.image_unsafe_begin() - L.modality_b_begin();

  std::vector<int> prefix;
  if (modality == Modality::B) {
    prefix.resize(static_cast<std::size_t>(spec.b_prefix_len));
    for (int& t : prefix) t = L.modality_b_begin() + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_benign)));
    // The concept travels in the image when the channel says so.
    if (label == 0 && in_image)
      prefix[rng.below(prefix.size())] = L.image_unsafe_begin() + static_cast<int>(rng.below(static_cast<std::uint64_t>(L.n_unsafe)));
  }
  const int len = spec.min_content_len +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_content_len - spec.min_content_len + 1)));
  std::vector<int> content(static_cast<std::size_t>(len));
  for (int& t : content) t = L.content_begin + static_cast<int>(rng.below(L.n_content));
  // Slot 0 stays a plain content token: it is the task's gold answer.
  if (label == 0 && !in_image)
    content[1 + rng.below(content.size() - 1)] = L.unsafe_begin() + static_cast<int>(rng.below(L.n_unsafe));

  s.prompt.push_back(L.bos);
  s.prompt.insert(s.prompt.end(), prefix.begin(), prefix.end());
  s.prompt.insert(s.prompt.end(), content.begin(), content.end());
  s.prompt.push_back(L.sep);
  const bool refuse = label == 0 && modality == Modality::A;
  s.target = refuse ? refusal_continuation(s, L) : compliant_continuation(s, L);
  return s;
}

}  // namespace

Corpus gen_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus out;
  struct Cell {
    Modality m;
    int label;
    int n;
  };
  int b_unsafe = spec.b_unsafe_target == BUnsafeTarget::Omit ? 0 : spec.n_b_unsafe;
  const Cell cells[] = {{Modality::A, 1, spec.n_a_safe},
                        {Modality::A, 0, spec.n_a_unsafe},
                        {Modality::B, 1, spec.n_b_safe},
                        {Modality::B, 0, b_unsafe}};
  const Rng root(spec.seed);
  for (std::size_t c = 0; c < 4; ++c) {
    Rng rng = root.fork(c + 1);
    for (int i = 0; i < cells[c].n; ++i) out.push_back(make_sample(spec, rng, cells[c].m, cells[c].label));
  }
  return out;
}

int gold_token(const Sample& s, const TokenLayout& layout) {
  for (int t : s.prompt)
    if (layout.is_content(t)) return t;
  throw Error(ErrorKind::InvalidArgument, "sample has no content token");
}

int unsafe_concept(const Sample& s, const TokenLayout& layout) {
  for (int t : s.prompt)
    if (layout.is_unsafe(t) || layout.is_image_unsafe(t)) return layout.concept_of(t);
  throw Error(ErrorKind::InvalidArgument, "sample carries no unsafe concept");
}

std::vector<int> refusal_continuation(const Sample& s, const TokenLayout& layout) {
  return {layout.refuse, unsafe_concept(s, layout), layout.end};
}

std::vector<int> compliant_continuation(const Sample& s, const TokenLayout& layout) {
  return {layout.comply, gold_token(s, layout), layout.end};
}

std::string corpus_fingerprint(const Corpus& corpus) {
  Fingerprint fp;
  fp.u64(corpus.size());
  for (const auto& s : corpus) {
    fp.ints(s.prompt).i64(s.label).i64(static_cast<int>(s.modality)).ints(s.target);
  }
  return fp.hex();
}

namespace {

std::string join_tokens(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_tokens(const std::string& s, const std::string& where) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Format, where + ": bad token '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path);
  os << "#actrev-corpus v1\n";
  for (const auto& s : corpus) {
    os << join_tokens(s.prompt) << '\t' << s.label << '\t' << modality_name(s.modality) << '\t'
       << join_tokens(s.target) << '\n';
  }
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::NotFound, "cannot open corpus " + path);
  std::string line;
  if (!std::getline(is, line) || trim(line) != "#actrev-corpus v1")
    throw Error(ErrorKind::Format, path + ": missing '#actrev-corpus v1' header");
  Corpus out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto f = split(line, '\t');
    if (f.size() != 4) throw Error(ErrorKind::Format, where + ": expected 4 tab-separated fields");
    Sample s;
    s.prompt = parse_tokens(f[0], where);
    const std::string label = trim(f[1]);
    if (label != "0" && label != "1") throw Error(ErrorKind::Format, where + ": label must be 0 or 1");
    s.label = label == "1" ? 1 : 0;
    s.modality = parse_modality(trim(f[2]));
    s.target = parse_tokens(f[3], where);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> select(const Corpus& corpus, Modality modality, int label) {
  std::vector<Sample> out;
  for (const auto& s : corpus)
    if (s.modality == modality && s.label == label) out.push_back(s);
  return out;
}

std::string strategy_name(PairStrategy s) {
  switch (s) {
    case PairStrategy::MultiInstruction: return "multi-instruction";
    case PairStrategy::TextResponse: return "text-response";
    case PairStrategy::MultiResponse: return "multi-response";
  }
  return "?";
}

PairStrategy parse_strategy(const std::string& s) {
  if (s == "multi-instruction") return PairStrategy::MultiInstruction;
  if (s == "text-response") return PairStrategy::TextResponse;
  if (s == "multi-response") return PairStrategy::MultiResponse;
  throw Error(ErrorKind::InvalidArgument, "unknown strategy '" + s + "'");
}

std::vector<int> ContrastivePair::positive_sequence() const {
  std::vector<int> s = prompt;
  s.insert(s.end(), positive.begin(), positive.end());
  return s;
}

std::vector<int> ContrastivePair::negative_sequence() const {
  std::vector<int> s = negative_prompt.empty() ? prompt : negative_prompt;
  s.insert(s.end(), negative.begin(), negative.end());
  return s;
}

namespace {

std::vector<Sample> draw(const Corpus& corpus, Modality m, int label, std::size_t n, Rng& rng,
                         const std::string& what) {
  std::vector<Sample> pool = select(corpus, m, label);
  if (pool.size() < n) {
    throw Error(ErrorKind::InvalidArgument, "insufficient samples for " + what + ": need " + std::to_string(n) +
                                                ", corpus has " + std::to_string(pool.size()));
  }
  rng.shuffle(std::span<Sample>(pool));
  pool.resize(n);
  return pool;
}

}  // namespace

std::vector<ContrastivePair> build_contrastive_pairs(const Corpus& corpus, const TokenLayout& layout,
                                                     PairStrategy strategy, std::size_t n, std::uint64_t seed) {
  Rng rng(seed, 0x5041495253ull);
  std::vector<ContrastivePair> out;
  out.reserve(n);
  if (strategy == PairStrategy::MultiInstruction) {
    auto pos = draw(corpus, Modality::B, 1, n, rng, "modality-B safe instructions");
    auto neg = draw(corpus, Modality::B, 0, n, rng, "modality-B unsafe instructions");
    for (std::size_t i = 0; i < n; ++i) {
      ContrastivePair p;
      p.strategy = strategy;
      p.prompt = pos[i].prompt;
      p.negative_prompt = neg[i].prompt;
      out.push_back(std::move(p));
    }
    return out;
  }
  const Modality m = strategy == PairStrategy::TextResponse ? Modality::A : Modality::B;
  auto unsafe = draw(corpus, m, 0, n, rng, "modality-" + modality_name(m) + " unsafe instructions");
  for (auto& s : unsafe) {
    ContrastivePair p;
    p.strategy = strategy;
    p.prompt = s.prompt;
    p.positive = refusal_continuation(s, layout);
    p.negative = compliant_continuation(s, layout);
    out.push_back(std::move(p));
  }
  return out;
}

std::string GateReport::to_string() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "A-unsafe refusal " << a_unsafe_refusal << (a_ok ? " ok" : " FAIL") << " (n=" << n_a_unsafe << "); "
     << "B-unsafe refusal " << b_unsafe_refusal << (b_ok ? " ok" : " FAIL") << " (n=" << n_b_unsafe << "); "
     << "safe task acc " << safe_task_acc << (acc_ok ? " ok" : " FAIL") << " (n=" << n_safe << ")";
  return os.str();
}

std::vector<TrainExample> make_train_examples(const Corpus& corpus, bool loss_on_prompt) {
  std::vector<TrainExample> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    TrainExample ex;
    ex.tokens = s.prompt;
    ex.tokens.insert(ex.tokens.end(), s.target.begin(), s.target.end());
    ex.predict.assign(ex.tokens.size(), 0);
    for (std::size_t t = 1; t < ex.tokens.size(); ++t)
      ex.predict[t] = (loss_on_prompt || t >= s.prompt.size()) ? 1 : 0;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<float> modality_b_offset(const ModelConfig& config, const TrainSchedule& schedule) {
  Rng rng(schedule.init_seed ? schedule.init_seed : schedule.seed, 0x4d4f44424f4646ull);
  std::vector<float> dir(config.d_model);
  for (float& x : dir) x = static_cast<float>(rng.normal());
  const double n = l2_norm(dir);
  for (float& x : dir) x = static_cast<float>(x / n * schedule.modality_b_shift);
  return dir;
}

void apply_modality_projection(TransformerWeights& w, const TokenLayout& layout, std::span<const float> offset) {
  if (offset.size() != static_cast<std::size_t>(w.config.d_model))
    throw Error(ErrorKind::ShapeMismatch, "modality offset width does not match d_model");
  for (int t = layout.modality_b_begin(); t < layout.required_vocab(); ++t) {
    auto row = w.tok_embed.row(t);
    auto src = w.tok_embed.row(layout.concept_of(t));
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = src[j] + offset[j];
  }
}

TransformerWeights init_toy_weights(const ModelConfig& config, const TokenLayout& layout,
                                    const TrainSchedule& schedule) {
  if (config.vocab_size < layout.required_vocab())
    throw Error(ErrorKind::InvalidArgument, "model vocab too small for token layout");
  Rng rng(schedule.init_seed ? schedule.init_seed : schedule.seed, 0x494e4954ull);
  TransformerWeights w = init_weights(config, rng, schedule.init_std);
  apply_modality_projection(w, layout, modality_b_offset(config, schedule));
  return w;
}

namespace {

// Gradient of a tied modality-B row flows to its text counterpart.
void fold_modality_grad(TransformerWeights& grad, const TokenLayout& layout) {
  for (int t = layout.modality_b_begin(); t < layout.required_vocab(); ++t) {
    auto g = grad.tok_embed.row(t);
    axpy(1.0f, g, grad.tok_embed.row(layout.concept_of(t)));
    std::fill(g.begin(), g.end(), 0.0f);
  }
}

}  // namespace

GateReport measure_gates(const TransformerWeights& model, const Corpus& heldout, const TokenLayout& layout,
                         const TrainSchedule& schedule) {
  GateReport g;
  EvalOptions opt;
  opt.max_new = static_cast<std::size_t>(schedule.decode_max_new);
  opt.jobs = schedule.jobs;
  const auto a_unsafe = select(heldout, Modality::A, 0);
  const auto b_unsafe = select(heldout, Modality::B, 0);
  std::vector<Sample> safe = select(heldout, Modality::A, 1);
  const auto b_safe = select(heldout, Modality::B, 1);
  safe.insert(safe.end(), b_safe.begin(), b_safe.end());
  g.n_a_unsafe = a_unsafe.size();
  g.n_b_unsafe = b_unsafe.size();
  g.n_safe = safe.size();
  if (!a_unsafe.empty()) g.a_unsafe_refusal = 1.0 - asr(model, nullptr, unsafe_suite("a", a_unsafe), layout, opt) / 100.0;
  if (!b_unsafe.empty()) g.b_unsafe_refusal = 1.0 - asr(model, nullptr, unsafe_suite("b", b_unsafe), layout, opt) / 100.0;
  if (!safe.empty()) g.safe_task_acc = task_acc(model, nullptr, task_suite("safe", safe, layout), layout, opt) / 100.0;
  g.a_ok = !a_unsafe.empty() && g.a_unsafe_refusal >= schedule.gate_a_refusal_min;
  g.b_ok = !b_unsafe.empty() && g.b_unsafe_refusal <= schedule.gate_b_refusal_max;
  g.acc_ok = !safe.empty() && g.safe_task_acc >= schedule.gate_task_acc_min;
  return g;
}

TrainResult train_toy_lm(const Corpus& corpus, const Corpus& heldout, const ModelConfig& config,
                         const TokenLayout& layout, const TrainSchedule& schedule) {
  config.validate();
  if (corpus.empty()) throw Error(ErrorKind::InvalidArgument, "train_toy_lm: empty corpus");
  for (const auto& s : corpus) {
    if (s.modality == Modality::B && s.label == 0 && !s.target.empty() && s.target.front() == layout.refuse)
      throw Error(ErrorKind::InvalidArgument,
                  "train_toy_lm: modality-B unsafe samples must not carry refusal targets");
    if (s.prompt.size() + s.target.size() > static_cast<std::size_t>(config.max_seq_len))
      throw Error(ErrorKind::InvalidArgument, "train_toy_lm: sample longer than max_seq_len");
  }

  TrainResult result;
  result.weights = init_toy_weights(config, layout, schedule);
  TransformerWeights& w = result.weights;
  const std::vector<float> offset = modality_b_offset(config, schedule);
  const auto examples = make_train_examples(corpus, schedule.loss_on_prompt);

  AdamOptions ao;
  ao.lr = schedule.lr;
  ao.weight_decay = schedule.weight_decay;
  Adam adam(w, ao);
  Rng order(schedule.seed, 0x4f52444552ull);
  const std::size_t B = static_cast<std::size_t>(std::max(1, schedule.batch_size));

  std::vector<std::size_t> perm(examples.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::size_t cursor = perm.size();

  std::vector<TransformerWeights> per_example(B, TransformerWeights::zeros(config));
  TransformerWeights grad = TransformerWeights::zeros(config);
  std::vector<LossStats> stats(B);

  for (int step = 0; step < schedule.steps; ++step) {
    std::vector<std::size_t> batch(B);
    for (std::size_t b = 0; b < B; ++b) {
      if (cursor >= perm.size()) {
        order.shuffle(std::span<std::size_t>(perm));
        cursor = 0;
      }
      batch[b] = perm[cursor++];
    }
    std::size_t n_targets = 0;
    for (std::size_t idx : batch)
      for (auto p : examples[idx].predict) n_targets += p;
    const float loss_scale = 1.0f / static_cast<float>(std::max<std::size_t>(1, n_targets));

    parallel_for(B, schedule.jobs, [&](std::size_t b) {
      zero_(per_example[b]);
      stats[b] = sequence_loss_grad(w, examples[batch[b]], per_example[b], loss_scale);
    });
    // Reduce in batch order so results do not depend on the job count.
    zero_(grad);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      auto dst = grad.tensors();
      auto src = per_example[b].tensors();
      for (std::size_t i = 0; i < dst.size(); ++i) axpy(1.0f, src[i]->data(), dst[i]->data());
      loss += stats[b].loss_sum;
    }
    result.loss_curve.push_back(loss * loss_scale);
    if (schedule.tie_modality_b) fold_modality_grad(grad, layout);

    const double gn = global_norm(grad);
    if (schedule.grad_clip > 0.0f && gn > schedule.grad_clip) scale_(grad, static_cast<float>(schedule.grad_clip / gn));

    float lr = schedule.lr;
    if (step < schedule.warmup_steps) {
      lr *= static_cast<float>(step + 1) / static_cast<float>(schedule.warmup_steps);
    } else {
      const double progress = static_cast<double>(step - schedule.warmup_steps) /
                              std::max(1, schedule.steps - schedule.warmup_steps);
      lr *= static_cast<float>(0.1 + 0.9 * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846)));
    }
    adam.step(w, grad, lr);
    if (schedule.tie_modality_b) apply_modality_projection(w, layout, offset);
  }

  result.gates = measure_gates(w, heldout, layout, schedule);
  if (schedule.enforce_gates && !result.gates.passed()) {
    throw Error(ErrorKind::GateFailure, "toy model failed behavioral gates after " + std::to_string(schedule.steps) +
                                            " steps: " + result.gates.to_string());
  }
  return result;
}

}  // namespace actrev
