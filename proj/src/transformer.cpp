#include "actrev/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "actrev/error.hpp"
#include "actrev/util.hpp"

namespace actrev {

namespace {

constexpr float kLnEps = 1e-5f;

void require(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) throw Error(kind, msg);
}

void ln_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& out) {
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto y = layer_norm(x.row(t), gain.data(), bias.data(), kLnEps);
    std::copy(y.begin(), y.end(), out.row(t).begin());
  }
}

// out[t] = m * x[t] for every row t.
void project_rows(const Matrix& m, const Matrix& x, Matrix& out) {
  for (std::size_t t = 0; t < x.rows(); ++t) matvec(m, x.row(t), out.row(t));
}

}  // namespace

int ModelConfig::site_width(const HookSite& site) const {
  return site.kind == SiteKind::HeadOutput ? d_head : d_model;
}

void ModelConfig::validate_site(const HookSite& site) const {
  require(site.layer >= 0 && site.layer < n_layers, ErrorKind::InvalidArgument,
          "site " + site.to_string() + ": layer out of range for " + to_string());
  if (site.kind == SiteKind::HeadOutput) {
    require(site.head.has_value() && *site.head >= 0 && *site.head < n_heads,
            ErrorKind::InvalidArgument,
            "site " + site.to_string() + ": head index missing or out of range for " + to_string());
  } else {
    require(!site.head.has_value(), ErrorKind::InvalidArgument,
            "site " + site.to_string() + ": only head sites carry a head index");
  }
}

void ModelConfig::validate() const {
  require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_head >= 1 && d_mlp >= 1 &&
              vocab_size >= 1 && max_seq_len >= 1,
          ErrorKind::InvalidArgument, "model config counts must be >= 1: " + to_string());
  require(d_model == n_heads * d_head, ErrorKind::InvalidArgument,
          "model config requires d_model = n_heads * d_head: " + to_string());
}

std::string ModelConfig::to_string() const {
  std::ostringstream os;
  os << "{L=" << n_layers << " H=" << n_heads << " D=" << d_model << " d_head=" << d_head
     << " d_mlp=" << d_mlp << " V=" << vocab_size << " T=" << max_seq_len << "}";
  return os.str();
}

TransformerWeights TransformerWeights::zeros(const ModelConfig& c) {
  c.validate();
  const std::size_t D = c.d_model, HD = static_cast<std::size_t>(c.n_heads) * c.d_head;
  TransformerWeights w;
  w.config = c;
  w.tok_embed = Matrix(c.vocab_size, D);
  w.pos_embed = Matrix(c.max_seq_len, D);
  w.layers.resize(c.n_layers);
  for (auto& l : w.layers) {
    l.ln1_gain = Matrix(1, D);
    l.ln1_bias = Matrix(1, D);
    l.wq = Matrix(HD, D);
    l.wk = Matrix(HD, D);
    l.wv = Matrix(HD, D);
    l.wo = Matrix(D, HD);
    l.ln2_gain = Matrix(1, D);
    l.ln2_bias = Matrix(1, D);
    l.w1 = Matrix(c.d_mlp, D);
    l.b1 = Matrix(1, c.d_mlp);
    l.w2 = Matrix(D, c.d_mlp);
    l.b2 = Matrix(1, D);
  }
  w.lnf_gain = Matrix(1, D);
  w.lnf_bias = Matrix(1, D);
  w.unembed = Matrix(c.vocab_size, D);
  return w;
}

std::vector<Matrix*> TransformerWeights::tensors() {
  std::vector<Matrix*> out{&tok_embed, &pos_embed};
  for (auto& l : layers) {
    for (Matrix* m : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_gain,
                      &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2})
      out.push_back(m);
  }
  out.push_back(&lnf_gain);
  out.push_back(&lnf_bias);
  out.push_back(&unembed);
  return out;
}

std::vector<const Matrix*> TransformerWeights::tensors() const {
  auto mut = const_cast<TransformerWeights*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> TransformerWeights::tensor_names() const {
  std::vector<std::string> names{"tok_embed", "pos_embed"};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const char* n : {"ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo", "ln2_gain", "ln2_bias",
                          "w1", "b1", "w2", "b2"})
      names.push_back("layers." + std::to_string(i) + "." + n);
  }
  names.insert(names.end(), {"lnf_gain", "lnf_bias", "unembed"});
  return names;
}

std::size_t TransformerWeights::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

void TransformerWeights::validate() const {
  config.validate();
  const TransformerWeights ref = zeros(config);
  const auto mine = tensors();
  const auto theirs = ref.tensors();
  const auto names = tensor_names();
  require(mine.size() == theirs.size(), ErrorKind::ShapeMismatch, "tensor count mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    require(mine[i]->rows() == theirs[i]->rows() && mine[i]->cols() == theirs[i]->cols(),
            ErrorKind::ShapeMismatch,
            "tensor " + names[i] + " has shape " + mine[i]->shape_string() + ", expected " +
                theirs[i]->shape_string());
    require(mine[i]->all_finite(), ErrorKind::InvalidArgument,
            "tensor " + names[i] + " has non-finite entries");
  }
}

std::string TransformerWeights::fingerprint() const {
  Fingerprint fp;
  fp.text(config.to_string());
  for (const Matrix* m : tensors()) {
    fp.u64(m->rows()).u64(m->cols()).floats(m->data());
  }
  return fp.hex();
}

TransformerWeights init_weights(const ModelConfig& config, Rng& rng, float init_std) {
  TransformerWeights w = TransformerWeights::zeros(config);
  const float resid_std = init_std / std::sqrt(2.0f * config.n_layers);
  auto fill = [&](Matrix& m, float std) {
    for (float& x : m.data()) x = static_cast<float>(rng.normal() * std);
  };
  fill(w.tok_embed, init_std);
  fill(w.pos_embed, init_std);
  for (auto& l : w.layers) {
    fill(l.wq, init_std);
    fill(l.wk, init_std);
    fill(l.wv, init_std);
    fill(l.wo, resid_std);
    fill(l.w1, init_std);
    fill(l.w2, resid_std);
  }
  fill(w.unembed, init_std);
  for (auto& l : w.layers) {
    l.ln1_gain = Matrix(1, config.d_model, 1.0f);
    l.ln2_gain = Matrix(1, config.d_model, 1.0f);
  }
  w.lnf_gain = Matrix(1, config.d_model, 1.0f);
  return w;
}

// ---------------------------------------------------------------------------
// Weight file: little-endian.
//   magic[8] "ACTREVWT" | u32 version | u32 x 7 config
//   | u32 tensor_count | per tensor: u32 rows, u32 cols, f32[rows*cols]
// Tensor order is TransformerWeights::tensors().

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.gcount() == 4, ErrorKind::Format, path + ": truncated weight file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is, const std::string& path) {
  const std::uint32_t bits = get_u32(is, path);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void save_weights(const TransformerWeights& w, const std::string& path) {
  w.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::Io, "cannot write " + path);
  os.write(kWeightMagic, 8);
  put_u32(os, kWeightFormatVersion);
  const auto& c = w.config;
  for (int v : {c.n_layers, c.n_heads, c.d_model, c.d_head, c.d_mlp, c.vocab_size, c.max_seq_len})
    put_u32(os, static_cast<std::uint32_t>(v));
  const auto ts = w.tensors();
  put_u32(os, static_cast<std::uint32_t>(ts.size()));
  for (const Matrix* m : ts) {
    put_u32(os, static_cast<std::uint32_t>(m->rows()));
    put_u32(os, static_cast<std::uint32_t>(m->cols()));
    for (float f : m->data()) put_f32(os, f);
  }
  require(static_cast<bool>(os), ErrorKind::Io, "write failed for " + path);
}

TransformerWeights load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::NotFound, "cannot open weight file " + path);
  char magic[8];
  is.read(magic, 8);
  require(is.gcount() == 8 && std::memcmp(magic, kWeightMagic, 8) == 0, ErrorKind::Format,
          path + ": not a weight file (bad magic)");
  const std::uint32_t version = get_u32(is, path);
  require(version == kWeightFormatVersion, ErrorKind::Format,
          path + ": unsupported weight format version " + std::to_string(version));
  ModelConfig c;
  for (int* v : {&c.n_layers, &c.n_heads, &c.d_model, &c.d_head, &c.d_mlp, &c.vocab_size,
                 &c.max_seq_len})
    *v = static_cast<int>(get_u32(is, path));
  TransformerWeights w = TransformerWeights::zeros(c);
  auto ts = w.tensors();
  require(get_u32(is, path) == ts.size(), ErrorKind::Format, path + ": tensor count mismatch");
  for (Matrix* m : ts) {
    const std::uint32_t r = get_u32(is, path);
    const std::uint32_t cc = get_u32(is, path);
    require(r == m->rows() && cc == m->cols(), ErrorKind::Format,
            path + ": tensor shape " + std::to_string(r) + "x" + std::to_string(cc) +
                " does not match config, expected " + m->shape_string());
    for (float& f : m->data()) f = get_f32(is, path);
  }
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------

void HookRegistry::add(const HookSite& site, SiteHook hook) { hooks_[site].push_back(std::move(hook)); }

void HookRegistry::run(const HookSite& site, std::size_t position, std::span<float> value) const {
  auto it = hooks_.find(site);
  if (it == hooks_.end()) return;
  for (const auto& h : it->second) h(site, position, value);
}

const Matrix& ForwardTrace::capture(const HookSite& site) const {
  auto it = captures.find(site);
  if (it == captures.end()) throw Error(ErrorKind::NotFound, "site " + site.to_string() + " was not captured");
  return it->second;
}

void validate_plan(const SteeringPlan& plan, const ModelConfig& config) {
  require(std::isfinite(plan.alpha), ErrorKind::InvalidArgument, "plan strength must be finite");
  require(plan.layer >= 0 && plan.layer < config.n_layers, ErrorKind::InvalidArgument,
          "plan layer " + std::to_string(plan.layer) + " out of range for " + config.to_string());
  if (plan.kind == PlanKind::Layer) {
    require(plan.vectors.size() == 1, ErrorKind::InvalidArgument, "layer plan needs exactly one vector");
    require(plan.vectors[0].direction.size() == static_cast<std::size_t>(config.d_model),
            ErrorKind::ShapeMismatch,
            "layer plan vector width " + std::to_string(plan.vectors[0].direction.size()) +
                " != d_model " + std::to_string(config.d_model));
    return;
  }
  require(plan.head_mask.size() == static_cast<std::size_t>(config.n_heads), ErrorKind::ShapeMismatch,
          "head mask has " + std::to_string(plan.head_mask.size()) + " entries, model has " +
              std::to_string(config.n_heads) + " heads");
  for (int h = 0; h < config.n_heads; ++h) {
    if (!plan.head_mask[h]) continue;
    const RevisionVector* v = plan.head_vector(h);
    require(v != nullptr, ErrorKind::InvalidArgument, "no revision vector for active head " + std::to_string(h));
    require(v->direction.size() == static_cast<std::size_t>(config.d_head), ErrorKind::ShapeMismatch,
            "head vector width " + std::to_string(v->direction.size()) + " != d_head " +
                std::to_string(config.d_head));
  }
}

ForwardTrace forward(const TransformerWeights& w, std::span<const int> tokens, const ForwardOptions& opt) {
  const ModelConfig& c = w.config;
  const std::size_t T = tokens.size();
  require(T > 0, ErrorKind::InvalidArgument, "forward: empty token sequence");
  require(T <= static_cast<std::size_t>(c.max_seq_len), ErrorKind::InvalidArgument,
          "forward: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
              std::to_string(c.max_seq_len));
  for (int tok : tokens)
    require(tok >= 0 && tok < c.vocab_size, ErrorKind::InvalidArgument,
            "forward: token " + std::to_string(tok) + " outside vocabulary");
  for (const auto& s : opt.capture) c.validate_site(s);
  if (opt.plan) validate_plan(*opt.plan, c);

  const std::size_t D = c.d_model, H = c.n_heads, dh = c.d_head, HD = H * dh;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  ForwardTrace trace;
  for (const auto& s : opt.capture) trace.captures.emplace(s, Matrix(T, c.site_width(s)));
  auto capture_row = [&](const HookSite& s, std::size_t t, std::span<const float> v) {
    auto it = trace.captures.find(s);
    if (it != trace.captures.end()) std::copy(v.begin(), v.end(), it->second.row(t).begin());
  };

  Matrix x(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    auto te = w.tok_embed.row(tokens[t]);
    auto pe = w.pos_embed.row(t);
    auto xr = x.row(t);
    for (std::size_t i = 0; i < D; ++i) xr[i] = te[i] + pe[i];
  }

  Matrix h(T, D), q(T, HD), k(T, HD), v(T, HD), heads(T, HD), m(T, D), hid(T, c.d_mlp), delta(T, D);
  std::vector<float> scores(T);

  for (int l = 0; l < c.n_layers; ++l) {
    const LayerWeights& L = w.layers[l];
    const bool plan_here = opt.plan && opt.plan->layer == l;

    ln_rows(x, L.ln1_gain, L.ln1_bias, h);
    project_rows(L.wq, h, q);
    project_rows(L.wk, h, k);
    project_rows(L.wv, h, v);

    for (std::size_t hh = 0; hh < H; ++hh) {
      const HookSite site = HookSite::head_output(l, static_cast<int>(hh));
      const RevisionVector* rv =
          plan_here && opt.plan->kind == PlanKind::Head ? opt.plan->head_vector(static_cast<int>(hh)) : nullptr;
      for (std::size_t t = 0; t < T; ++t) {
        std::span<const float> qt = q.row(t).subspan(hh * dh, dh);
        for (std::size_t s = 0; s <= t; ++s) scores[s] = static_cast<float>(dot(qt, k.row(s).subspan(hh * dh, dh)));
        softmax_inplace(std::span<float>(scores.data(), t + 1), scale);
        auto out = heads.row(t).subspan(hh * dh, dh);
        for (std::size_t j = 0; j < dh; ++j) {
          double acc = 0.0;
          for (std::size_t s = 0; s <= t; ++s) acc += static_cast<double>(scores[s]) * v(s, hh * dh + j);
          out[j] = static_cast<float>(acc);
        }
        capture_row(site, t, out);
        if (rv && t >= opt.inject_from) axpy(opt.plan->signed_alpha(), rv->direction, out);
        if (opt.hooks) opt.hooks->run(site, t, out);
      }
    }

    project_rows(L.wo, heads, delta);
    const HookSite attn_site = HookSite::attention_residual(l);
    for (std::size_t t = 0; t < T; ++t) {
      auto xr = x.row(t);
      auto dr = delta.row(t);
      for (std::size_t i = 0; i < D; ++i) xr[i] += dr[i];
      capture_row(attn_site, t, xr);
      if (opt.hooks) opt.hooks->run(attn_site, t, xr);
    }

    ln_rows(x, L.ln2_gain, L.ln2_bias, m);
    project_rows(L.w1, m, hid);
    for (std::size_t t = 0; t < T; ++t) {
      auto hr = hid.row(t);
      for (std::size_t i = 0; i < hr.size(); ++i) hr[i] = std::max(0.0f, hr[i] + L.b1.data()[i]);
    }
    project_rows(L.w2, hid, delta);
    const HookSite layer_site = HookSite::layer_residual(l);
    for (std::size_t t = 0; t < T; ++t) {
      auto xr = x.row(t);
      auto dr = delta.row(t);
      for (std::size_t i = 0; i < D; ++i) xr[i] += dr[i] + L.b2.data()[i];
      capture_row(layer_site, t, xr);
      if (plan_here && opt.plan->kind == PlanKind::Layer && t >= opt.inject_from)
        axpy(opt.plan->signed_alpha(), opt.plan->vectors[0].direction, xr);
      if (opt.hooks) opt.hooks->run(layer_site, t, xr);
    }
  }

  ln_rows(x, w.lnf_gain, w.lnf_bias, h);
  trace.logits = Matrix(T, c.vocab_size);
  project_rows(w.unembed, h, trace.logits);
  require(trace.logits.all_finite(), ErrorKind::InvalidArgument, "forward: non-finite logits");
  return trace;
}

int argmax(std::span<const float> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

std::vector<int> decode(const TransformerWeights& w, std::span<const int> prompt, const SteeringPlan* plan,
                        const DecodeOptions& options) {
  require(!prompt.empty(), ErrorKind::InvalidArgument, "decode: empty prompt");
  require(prompt.size() + options.max_new <= static_cast<std::size_t>(w.config.max_seq_len),
          ErrorKind::InvalidArgument,
          "decode: prompt length " + std::to_string(prompt.size()) + " + max_new " +
              std::to_string(options.max_new) + " exceeds context " + std::to_string(w.config.max_seq_len));
  std::vector<int> seq(prompt.begin(), prompt.end());
  ForwardOptions fo;
  fo.plan = plan;
  fo.inject_from = plan && plan->generated_only ? prompt.size() : 0;
  for (std::size_t i = 0; i < options.max_new; ++i) {
    const ForwardTrace tr = forward(w, seq, fo);
    const int next = argmax(tr.logits.row(seq.size() - 1));
    seq.push_back(next);
    if (next == options.end_token) break;
  }
  return seq;
}

std::vector<float> last_token_activation(const ForwardTrace& trace, const HookSite& site) {
  const Matrix& m = trace.capture(site);
  auto r = m.row(m.rows() - 1);
  return {r.begin(), r.end()};
}

}  // namespace actrev
