#include "actrev/probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "actrev/error.hpp"
#include "actrev/rng.hpp"
#include "actrev/util.hpp"

namespace actrev {

namespace {

void require_two_classes(const LabeledActivationSet& set, const char* who) {
  if (set.n_pos == 0 || set.n_neg == 0)
    throw Error(ErrorKind::InvalidArgument,
                std::string(who) + ": set at " + set.site.to_string() + " has a single class");
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Adam state for one flat tensor.
struct AdamSlot {
  std::vector<double> m, v;
  explicit AdamSlot(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  void step(std::span<float> w, std::span<const double> g, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      w[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
    }
  }
};

struct MlpActivations {
  std::vector<float> x, h1, h2;
  double p = 0.0;
};

void standardize(const MlpProbe& p, std::span<const float> in, std::vector<float>& out) {
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - p.mean[i]) * p.inv_std[i];
}

void mlp_forward(const MlpProbe& p, std::span<const float> input, MlpActivations& a) {
  standardize(p, input, a.x);
  a.h1.assign(MlpProbe::kHidden1, 0.0f);
  a.h2.assign(MlpProbe::kHidden2, 0.0f);
  for (int i = 0; i < MlpProbe::kHidden1; ++i)
    a.h1[i] = std::max(0.0f, static_cast<float>(dot(p.w1.row(i), a.x) + p.b1.data()[i]));
  for (int i = 0; i < MlpProbe::kHidden2; ++i)
    a.h2[i] = std::max(0.0f, static_cast<float>(dot(p.w2.row(i), a.h1) + p.b2.data()[i]));
  a.p = sigmoid(dot(p.w3.row(0), a.h2) + p.b3.data()[0]);
}

std::string entry_key(const ActivationEntry& e) {
  std::string key(reinterpret_cast<const char*>(e.vector.data()), e.vector.size() * sizeof(float));
  key.push_back(static_cast<char>(e.label));
  return key;
}

}  // namespace

double MlpProbe::predict(std::span<const float> x) const {
  if (x.size() != input_width())
    throw Error(ErrorKind::ShapeMismatch, "probe input width " + std::to_string(x.size()) + " != " +
                                              std::to_string(input_width()));
  MlpActivations a;
  mlp_forward(*this, x, a);
  return a.p;
}

ProbeSplit stratified_split(const LabeledActivationSet& set, double val_fraction, std::uint64_t seed) {
  // Unique entries in first-occurrence order, one list per class.
  std::map<std::string, bool> seen;
  std::vector<ActivationEntry> by_class[2];
  for (const auto& e : set.entries) {
    if (seen.emplace(entry_key(e), true).second) by_class[e.label].push_back(e);
  }
  ProbeSplit split;
  Rng rng(seed, 0x53504c4954ull);
  for (int c = 0; c < 2; ++c) {
    auto& items = by_class[c];
    rng.shuffle(std::span<ActivationEntry>(items));
    auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(items.size())));
    if (items.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, items.size() - 1);
    for (std::size_t i = 0; i < items.size(); ++i) (i < n_val ? split.val : split.train).push_back(items[i]);
  }
  return split;
}

MlpProbeFit train_mlp_probe(const LabeledActivationSet& set, std::uint64_t seed, const ProbeOptions& opt) {
  require_two_classes(set, "train_mlp_probe");
  if (set.entries.size() < 10)
    throw Error(ErrorKind::InvalidArgument, "train_mlp_probe: need at least 10 entries, got " +
                                                std::to_string(set.entries.size()));
  const std::size_t in = set.width;
  ProbeSplit split = stratified_split(set, opt.val_fraction, seed);
  if (split.train.empty()) throw Error(ErrorKind::InvalidArgument, "train_mlp_probe: empty training split");

  MlpProbe p;
  p.epochs = opt.epochs;
  p.seed = seed;
  p.mean.assign(in, 0.0f);
  p.inv_std.assign(in, 1.0f);
  if (opt.standardize) {
    for (std::size_t j = 0; j < in; ++j) {
      double s = 0.0, ss = 0.0;
      for (const auto& e : split.train) s += e.vector[j];
      const double mean = s / static_cast<double>(split.train.size());
      for (const auto& e : split.train) ss += (e.vector[j] - mean) * (e.vector[j] - mean);
      const double sd = std::sqrt(ss / static_cast<double>(split.train.size()));
      p.mean[j] = static_cast<float>(mean);
      p.inv_std[j] = static_cast<float>(1.0 / std::max(sd, 1e-6));
    }
  }

  Rng rng(seed, 0x50524f4245ull);
  auto init = [&](std::size_t rows, std::size_t cols, double std) {
    Matrix m(rows, cols);
    for (float& x : m.data()) x = static_cast<float>(rng.normal() * std);
    return m;
  };
  const int H1 = MlpProbe::kHidden1, H2 = MlpProbe::kHidden2;
  p.w1 = init(H1, in, std::sqrt(2.0 / in));
  p.b1 = Matrix(1, H1);
  p.w2 = init(H2, H1, std::sqrt(2.0 / H1));
  p.b2 = Matrix(1, H2);
  p.w3 = init(1, H2, std::sqrt(1.0 / H2));
  p.b3 = Matrix(1, 1);

  std::vector<Matrix*> params{&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3};
  std::vector<AdamSlot> slots;
  std::vector<std::vector<double>> grads;
  for (Matrix* m : params) {
    slots.emplace_back(m->size());
    grads.emplace_back(m->size(), 0.0);
  }

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t B = static_cast<std::size_t>(std::max(1, opt.batch_size));
  MlpActivations a;
  std::vector<double> d2(H2), d1(H1);
  int t = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t end = std::min(order.size(), start + B);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
      const double inv_n = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const ActivationEntry& e = split.train[order[k]];
        mlp_forward(p, e.vector, a);
        const double dz = (a.p - e.label) * inv_n;  // d BCE / d logit
        for (int j = 0; j < H2; ++j) {
          grads[4][j] += dz * a.h2[j];
          d2[j] = a.h2[j] > 0.0f ? dz * p.w3.data()[j] : 0.0;
        }
        grads[5][0] += dz;
        std::fill(d1.begin(), d1.end(), 0.0);
        for (int j = 0; j < H2; ++j) {
          if (d2[j] == 0.0) continue;
          grads[3][j] += d2[j];
          auto w2r = p.w2.row(j);
          double* g2 = grads[2].data() + static_cast<std::size_t>(j) * H1;
          for (int i = 0; i < H1; ++i) {
            g2[i] += d2[j] * a.h1[i];
            d1[i] += d2[j] * w2r[i];
          }
        }
        for (int i = 0; i < H1; ++i) {
          if (a.h1[i] <= 0.0f) continue;
          grads[1][i] += d1[i];
          double* g1 = grads[0].data() + static_cast<std::size_t>(i) * in;
          for (std::size_t c = 0; c < in; ++c) g1[c] += d1[i] * a.x[c];
        }
      }
      ++t;
      for (std::size_t k = 0; k < params.size(); ++k) slots[k].step(params[k]->data(), grads[k], opt.lr, t);
    }
  }

  MlpProbeFit fit;
  fit.n_train = split.train.size();
  fit.n_val = split.val.size();
  auto acc = [&](const std::vector<ActivationEntry>& items) {
    if (items.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& e : items) hit += p.classify(e.vector) == (e.label == 1);
    return static_cast<double>(hit) / static_cast<double>(items.size());
  };
  fit.train_accuracy = acc(split.train);
  fit.val_accuracy = acc(split.val);
  fit.probe = std::move(p);
  return fit;
}

double accuracy(const MlpProbe& probe, const LabeledActivationSet& set) {
  if (set.entries.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& e : set.entries) hit += probe.classify(e.vector) == (e.label == 1);
  return static_cast<double>(hit) / static_cast<double>(set.entries.size());
}

// ---------------------------------------------------------------------------

double LinearProbe::score(std::span<const float> x) const {
  if (x.size() != w.size())
    throw Error(ErrorKind::ShapeMismatch, "linear probe width " + std::to_string(w.size()) + " != input " +
                                              std::to_string(x.size()));
  return dot(w, x) + b;
}

LinearProbe train_linear_probe(const LabeledActivationSet& set, const LinearProbeOptions& opt) {
  require_two_classes(set, "train_linear_probe");
  const std::size_t n = set.entries.size(), d = set.width;
  Eigen::MatrixXd X(n, d + 1);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) X(i, j) = set.entries[i].vector[j];
    X(i, d) = 1.0;
    y(i) = set.entries[i].label;
  }
  // Newton / IRLS on the L2-regularized mean log-loss; the bias is unpenalized.
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, opt.l2);
  reg(d) = 1e-10;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Eigen::VectorXd z = X * beta;
    Eigen::VectorXd p(n), wts(n);
    for (std::size_t i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      wts(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
    }
    const Eigen::VectorXd grad = X.transpose() * (p - y) / static_cast<double>(n) + reg.cwiseProduct(beta);
    Eigen::MatrixXd hess = X.transpose() * wts.asDiagonal() * X / static_cast<double>(n);
    hess.diagonal() += reg;
    const Eigen::VectorXd delta = hess.ldlt().solve(grad);
    beta -= delta;
    if (delta.squaredNorm() < opt.tol) break;
  }
  LinearProbe probe;
  probe.w.resize(d);
  for (std::size_t j = 0; j < d; ++j) probe.w[j] = static_cast<float>(beta(j));
  probe.b = static_cast<float>(beta(d));
  if (!all_finite(probe.w) || !std::isfinite(probe.b))
    throw Error(ErrorKind::InvalidArgument, "train_linear_probe: diverged");
  if (l2_norm(probe.w) == 0.0) throw Error(ErrorKind::InvalidArgument, "train_linear_probe: zero weight vector");
  return probe;
}

double accuracy(const LinearProbe& probe, const LabeledActivationSet& set) {
  if (set.entries.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& e : set.entries) hit += probe.classify(e.vector) == (e.label == 1);
  return static_cast<double>(hit) / static_cast<double>(set.entries.size());
}

// ---------------------------------------------------------------------------

const HeatmapCell* HeatmapReport::find(const HookSite& site) const {
  for (const auto& c : cells)
    if (c.site == site) return &c;
  return nullptr;
}

double HeatmapReport::mean_val() const {
  double s = 0.0;
  for (const auto& c : cells) s += c.val_accuracy;
  return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
}

double HeatmapReport::mean_eval(const std::string& name) const {
  double s = 0.0;
  for (const auto& c : cells) s += c.eval_accuracy.at(name);
  return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
}

// #actrev-heatmap v1
// #train <fingerprint>
// #eval <name> <fingerprint>        (one per eval set)
// site<TAB>val<TAB><name>...         column header
// <site><TAB><acc><TAB><acc>...      one record per cell
void HeatmapReport::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path);
  os << "#actrev-heatmap v1\n#train " << train_fingerprint << '\n';
  for (const auto& [name, fp] : eval_fingerprints) os << "#eval " << name << ' ' << fp << '\n';
  os << "site\tval";
  for (const auto& [name, fp] : eval_fingerprints) os << '\t' << name;
  os << '\n';
  char buf[32];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.6f", c.val_accuracy);
    os << c.site.to_string() << '\t' << buf;
    for (const auto& [name, fp] : eval_fingerprints) {
      std::snprintf(buf, sizeof buf, "%.6f", c.eval_accuracy.at(name));
      os << '\t' << buf;
    }
    os << '\n';
  }
}

HeatmapReport HeatmapReport::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::NotFound, "cannot open heatmap " + path);
  HeatmapReport r;
  std::string line;
  if (!std::getline(is, line) || trim(line) != "#actrev-heatmap v1")
    throw Error(ErrorKind::Format, path + ": missing heatmap header");
  std::vector<std::string> columns;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    if (line.rfind("#train ", 0) == 0) {
      r.train_fingerprint = trim(line.substr(7));
    } else if (line.rfind("#eval ", 0) == 0) {
      const auto parts = split(trim(line.substr(6)), ' ');
      if (parts.size() != 2) throw Error(ErrorKind::Format, path + ": bad #eval line");
      r.eval_fingerprints[parts[0]] = parts[1];
    } else if (line.rfind("site\t", 0) == 0) {
      columns = split(trim(line), '\t');
    } else {
      const auto f = split(trim(line), '\t');
      if (columns.empty() || f.size() != columns.size()) throw Error(ErrorKind::Format, path + ": bad record");
      HeatmapCell c;
      c.site = HookSite::parse(f[0]);
      c.val_accuracy = std::stod(f[1]);
      for (std::size_t i = 2; i < f.size(); ++i) c.eval_accuracy[columns[i]] = std::stod(f[i]);
      r.cells.push_back(std::move(c));
    }
  }
  return r;
}

HeatmapReport heatmap(const ModelConfig& config, const ActivationGrid& train,
                      const std::map<std::string, const ActivationGrid*>& eval, std::uint64_t seed,
                      const ProbeOptions& opt, std::size_t jobs) {
  const auto sites = grid_sites(config);
  for (const auto& [name, g] : eval) {
    if (g->head_sets.size() != train.head_sets.size() || g->layer_sets.size() != train.layer_sets.size())
      throw Error(ErrorKind::ShapeMismatch, "heatmap: eval grid '" + name + "' does not match training sites");
    for (const auto& s : sites)
      if (g->at(s, config.n_heads).site != train.at(s, config.n_heads).site)
        throw Error(ErrorKind::ShapeMismatch, "heatmap: site mismatch in eval grid '" + name + "'");
  }
  HeatmapReport report;
  report.cells.resize(sites.size());
  {
    Fingerprint fp;
    for (const auto& s : sites) fp.text(train.at(s, config.n_heads).fingerprint());
    report.train_fingerprint = fp.hex();
  }
  for (const auto& [name, g] : eval) {
    Fingerprint fp;
    for (const auto& s : sites) fp.text(g->at(s, config.n_heads).fingerprint());
    report.eval_fingerprints[name] = fp.hex();
  }
  parallel_for(sites.size(), jobs, [&](std::size_t i) {
    const auto& set = train.at(sites[i], config.n_heads);
    const MlpProbeFit fit = train_mlp_probe(set, seed + i, opt);
    HeatmapCell& c = report.cells[i];
    c.site = sites[i];
    c.val_accuracy = fit.val_accuracy;
    for (const auto& [name, g] : eval) c.eval_accuracy[name] = accuracy(fit.probe, g->at(sites[i], config.n_heads));
  });
  return report;
}

}  // namespace actrev
