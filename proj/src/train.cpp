#include "actrev/train.hpp"

#include <algorithm>
#include <cmath>

#include "actrev/error.hpp"

namespace actrev {

namespace {

constexpr float kLnEps = 1e-5f;

struct LnCache {
  Matrix xhat;
  std::vector<float> rstd;
};

void ln_forward(const Matrix& x, const Matrix& g, const Matrix& b, Matrix& out, LnCache& cache) {
  const std::size_t T = x.rows(), D = x.cols();
  cache.xhat = Matrix(T, D);
  cache.rstd.assign(T, 0.0f);
  out = Matrix(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    const MeanVar mv = mean_var(x.row(t));
    const double rstd = 1.0 / std::sqrt(mv.var + kLnEps);
    cache.rstd[t] = static_cast<float>(rstd);
    for (std::size_t i = 0; i < D; ++i) {
      const float xh = static_cast<float>((x(t, i) - mv.mean) * rstd);
      cache.xhat(t, i) = xh;
      out(t, i) = xh * g.data()[i] + b.data()[i];
    }
  }
}

// dx += LN backward of dy; accumulates gain/bias grads.
void ln_backward(const Matrix& dy, const LnCache& c, const Matrix& g, Matrix& dg, Matrix& db, Matrix& dx) {
  const std::size_t T = dy.rows(), D = dy.cols();
  std::vector<double> dxhat(D);
  for (std::size_t t = 0; t < T; ++t) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      const float d = dy(t, i);
      dg.data()[i] += d * c.xhat(t, i);
      db.data()[i] += d;
      dxhat[i] = static_cast<double>(d) * g.data()[i];
      mean_d += dxhat[i];
      mean_dx += dxhat[i] * c.xhat(t, i);
    }
    mean_d /= static_cast<double>(D);
    mean_dx /= static_cast<double>(D);
    for (std::size_t i = 0; i < D; ++i) {
      dx(t, i) += static_cast<float>(c.rstd[t] * (dxhat[i] - mean_d - c.xhat(t, i) * mean_dx));
    }
  }
}

// y[t] = W x[t]
void linear_forward(const Matrix& W, const Matrix& x, Matrix& y) {
  y = Matrix(x.rows(), W.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) matvec(W, x.row(t), y.row(t));
}

// dW += dy[t] (x) x[t]; dx[t] += W^T dy[t]
void linear_backward(const Matrix& W, const Matrix& x, const Matrix& dy, Matrix& dW, Matrix* dx) {
  const std::size_t T = x.rows(), out = W.rows(), in = W.cols();
  std::vector<double> acc(in);
  for (std::size_t t = 0; t < T; ++t) {
    auto xr = x.row(t);
    auto dyr = dy.row(t);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const float d = dyr[o];
      if (d == 0.0f) continue;
      auto dWr = dW.row(o);
      auto Wr = W.row(o);
      for (std::size_t i = 0; i < in; ++i) {
        dWr[i] += d * xr[i];
        acc[i] += static_cast<double>(d) * Wr[i];
      }
    }
    if (dx) {
      auto dxr = dx->row(t);
      for (std::size_t i = 0; i < in; ++i) dxr[i] += static_cast<float>(acc[i]);
    }
  }
}

struct LayerCache {
  Matrix x_in;
  LnCache ln1;
  Matrix h1, q, k, v;
  std::vector<Matrix> probs;  // per head, T x T (lower triangle)
  Matrix heads;
  Matrix x_mid;
  LnCache ln2;
  Matrix h2, z, a;
};

}  // namespace

LossStats sequence_loss_grad(const TransformerWeights& w, const TrainExample& ex, TransformerWeights& grad,
                             float loss_scale) {
  const ModelConfig& c = w.config;
  const std::size_t T = ex.tokens.size();
  if (T < 2 || ex.predict.size() != T)
    throw Error(ErrorKind::InvalidArgument, "train example needs >= 2 tokens and a matching mask");
  if (T > static_cast<std::size_t>(c.max_seq_len))
    throw Error(ErrorKind::InvalidArgument, "train example longer than max_seq_len");
  const std::size_t D = c.d_model, H = c.n_heads, dh = c.d_head, HD = H * dh, V = c.vocab_size;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  std::vector<LayerCache> caches(c.n_layers);
  Matrix x(T, D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i) x(t, i) = w.tok_embed(ex.tokens[t], i) + w.pos_embed(t, i);

  for (int l = 0; l < c.n_layers; ++l) {
    const LayerWeights& L = w.layers[l];
    LayerCache& C = caches[l];
    C.x_in = x;
    ln_forward(x, L.ln1_gain, L.ln1_bias, C.h1, C.ln1);
    linear_forward(L.wq, C.h1, C.q);
    linear_forward(L.wk, C.h1, C.k);
    linear_forward(L.wv, C.h1, C.v);
    C.heads = Matrix(T, HD);
    C.probs.assign(H, Matrix(T, T));
    for (std::size_t h = 0; h < H; ++h) {
      Matrix& P = C.probs[h];
      for (std::size_t t = 0; t < T; ++t) {
        auto qt = C.q.row(t).subspan(h * dh, dh);
        auto pr = P.row(t);
        for (std::size_t s = 0; s <= t; ++s) pr[s] = static_cast<float>(dot(qt, C.k.row(s).subspan(h * dh, dh)));
        softmax_inplace(pr.subspan(0, t + 1), scale);
        for (std::size_t j = 0; j < dh; ++j) {
          double acc = 0.0;
          for (std::size_t s = 0; s <= t; ++s) acc += static_cast<double>(pr[s]) * C.v(s, h * dh + j);
          C.heads(t, h * dh + j) = static_cast<float>(acc);
        }
      }
    }
    Matrix attn_out;
    linear_forward(L.wo, C.heads, attn_out);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += attn_out.data()[i];
    C.x_mid = x;
    ln_forward(x, L.ln2_gain, L.ln2_bias, C.h2, C.ln2);
    linear_forward(L.w1, C.h2, C.z);
    C.a = C.z;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < static_cast<std::size_t>(c.d_mlp); ++i) {
        C.z(t, i) += L.b1.data()[i];
        C.a(t, i) = std::max(0.0f, C.z(t, i));
      }
    Matrix mlp_out;
    linear_forward(L.w2, C.a, mlp_out);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < D; ++i) x(t, i) += mlp_out(t, i) + L.b2.data()[i];
  }

  LnCache lnf;
  Matrix hf;
  ln_forward(x, w.lnf_gain, w.lnf_bias, hf, lnf);
  Matrix logits;
  linear_forward(w.unembed, hf, logits);

  LossStats stats;
  Matrix dlogits(T, V);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    if (!ex.predict[t + 1]) continue;
    auto p = softmax(logits.row(t));
    const int target = ex.tokens[t + 1];
    stats.loss_sum += -std::log(std::max(1e-30, static_cast<double>(p[target])));
    ++stats.count;
    for (std::size_t j = 0; j < V; ++j) dlogits(t, j) = p[j] * loss_scale;
    dlogits(t, target) -= loss_scale;
  }

  Matrix dhf(T, D);
  linear_backward(w.unembed, hf, dlogits, grad.unembed, &dhf);
  Matrix dx(T, D);
  ln_backward(dhf, lnf, w.lnf_gain, grad.lnf_gain, grad.lnf_bias, dx);

  for (int l = c.n_layers - 1; l >= 0; --l) {
    const LayerWeights& L = w.layers[l];
    LayerWeights& G = grad.layers[l];
    const LayerCache& C = caches[l];

    // MLP sublayer; dx is the gradient flowing into x_out.
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < D; ++i) G.b2.data()[i] += dx(t, i);
    Matrix da(T, c.d_mlp);
    linear_backward(L.w2, C.a, dx, G.w2, &da);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < static_cast<std::size_t>(c.d_mlp); ++i) {
        if (C.z(t, i) <= 0.0f) da(t, i) = 0.0f;
        G.b1.data()[i] += da(t, i);
      }
    Matrix dh2(T, D);
    linear_backward(L.w1, C.h2, da, G.w1, &dh2);
    ln_backward(dh2, C.ln2, L.ln2_gain, G.ln2_gain, G.ln2_bias, dx);

    // Attention sublayer; dx now holds the gradient into x_mid.
    Matrix dheads(T, HD);
    linear_backward(L.wo, C.heads, dx, G.wo, &dheads);
    Matrix dq(T, HD), dk(T, HD), dv(T, HD);
    std::vector<double> dp(T);
    for (std::size_t h = 0; h < H; ++h) {
      const Matrix& P = C.probs[h];
      for (std::size_t t = 0; t < T; ++t) {
        auto dout = dheads.row(t).subspan(h * dh, dh);
        double wsum = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          dp[s] = dot(dout, C.v.row(s).subspan(h * dh, dh));
          wsum += P(t, s) * dp[s];
          auto dvs = dv.row(s).subspan(h * dh, dh);
          for (std::size_t j = 0; j < dh; ++j) dvs[j] += P(t, s) * dout[j];
        }
        auto qt = C.q.row(t).subspan(h * dh, dh);
        auto dqt = dq.row(t).subspan(h * dh, dh);
        for (std::size_t s = 0; s <= t; ++s) {
          const float ds = static_cast<float>(P(t, s) * (dp[s] - wsum) * scale);
          if (ds == 0.0f) continue;
          auto ks = C.k.row(s).subspan(h * dh, dh);
          auto dks = dk.row(s).subspan(h * dh, dh);
          for (std::size_t j = 0; j < dh; ++j) {
            dqt[j] += ds * ks[j];
            dks[j] += ds * qt[j];
          }
        }
      }
    }
    Matrix dh1(T, D);
    linear_backward(L.wq, C.h1, dq, G.wq, &dh1);
    linear_backward(L.wk, C.h1, dk, G.wk, &dh1);
    linear_backward(L.wv, C.h1, dv, G.wv, &dh1);
    ln_backward(dh1, C.ln1, L.ln1_gain, G.ln1_gain, G.ln1_bias, dx);
  }

  for (std::size_t t = 0; t < T; ++t) {
    auto dtok = grad.tok_embed.row(ex.tokens[t]);
    auto dpos = grad.pos_embed.row(t);
    for (std::size_t i = 0; i < D; ++i) {
      dtok[i] += dx(t, i);
      dpos[i] += dx(t, i);
    }
  }
  return stats;
}

LossStats sequence_loss(const TransformerWeights& w, const TrainExample& ex) {
  const ForwardTrace tr = forward(w, ex.tokens);
  LossStats stats;
  for (std::size_t t = 0; t + 1 < ex.tokens.size(); ++t) {
    if (!ex.predict[t + 1]) continue;
    auto p = softmax(tr.logits.row(t));
    stats.loss_sum += -std::log(std::max(1e-30, static_cast<double>(p[ex.tokens[t + 1]])));
    ++stats.count;
  }
  return stats;
}

void zero_(TransformerWeights& w) {
  for (Matrix* m : w.tensors()) std::fill(m->data().begin(), m->data().end(), 0.0f);
}

double global_norm(const TransformerWeights& w) {
  double s = 0.0;
  for (const Matrix* m : w.tensors()) s += dot(m->data(), m->data());
  return std::sqrt(s);
}

void scale_(TransformerWeights& w, float s) {
  for (Matrix* m : w.tensors())
    for (float& x : m->data()) x *= s;
}

Adam::Adam(const TransformerWeights& shape_like, AdamOptions options)
    : opt_(options), m_(TransformerWeights::zeros(shape_like.config)), v_(TransformerWeights::zeros(shape_like.config)) {}

void Adam::step(TransformerWeights& weights, const TransformerWeights& grad, float lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(opt_.beta1), t_);
  const double bc2 = 1.0 - std::pow(static_cast<double>(opt_.beta2), t_);
  auto ws = weights.tensors();
  auto gs = grad.tensors();
  auto ms = m_.tensors();
  auto vs = v_.tensors();
  for (std::size_t i = 0; i < ws.size(); ++i) {
    auto wd = ws[i]->data();
    auto gd = gs[i]->data();
    auto md = ms[i]->data();
    auto vd = vs[i]->data();
    // Decay applies to matrices only, not gains/biases.
    const bool decay = ws[i]->rows() > 1 && opt_.weight_decay > 0.0f;
    for (std::size_t j = 0; j < wd.size(); ++j) {
      md[j] = opt_.beta1 * md[j] + (1.0f - opt_.beta1) * gd[j];
      vd[j] = opt_.beta2 * vd[j] + (1.0f - opt_.beta2) * gd[j] * gd[j];
      const double mhat = md[j] / bc1;
      const double vhat = vd[j] / bc2;
      double upd = mhat / (std::sqrt(vhat) + opt_.eps);
      if (decay) upd += opt_.weight_decay * wd[j];
      wd[j] -= static_cast<float>(lr * upd);
    }
  }
}

}  // namespace actrev
