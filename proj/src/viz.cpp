#include "actrev/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "actrev/error.hpp"
#include "actrev/rng.hpp"
#include "actrev/util.hpp"

namespace actrev {

std::string projection_name(ProjectionMethod m) { return m == ProjectionMethod::PCA ? "pca" : "tsne"; }

namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<float>>& vectors, const std::vector<std::size_t>& order) {
  const std::size_t d = vectors.front().size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < order.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) X(r, c) = vectors[order[r]][c];
  return X;
}

void check_inputs(const std::vector<std::vector<float>>& vectors, const std::vector<std::string>& groups,
                  std::size_t min_n) {
  if (vectors.size() < min_n)
    throw Error(ErrorKind::InvalidArgument, "projection needs at least " + std::to_string(min_n) + " vectors");
  if (groups.size() != vectors.size())
    throw Error(ErrorKind::ShapeMismatch, "one group label per vector is required");
  const std::size_t d = vectors.front().size();
  if (d == 0) throw Error(ErrorKind::ShapeMismatch, "vectors must be non-empty");
  for (const auto& v : vectors) {
    if (v.size() != d) throw Error(ErrorKind::ShapeMismatch, "projection vectors must share one width");
    for (float x : v)
      if (!std::isfinite(x)) throw Error(ErrorKind::InvalidArgument, "projection input is not finite");
  }
}

Eigen::MatrixXd sq_distances(const Eigen::MatrixXd& X) {
  const Eigen::VectorXd sq = X.rowwise().squaredNorm();
  Eigen::MatrixXd D = (-2.0 * X * X.transpose()).colwise() + sq;
  D.rowwise() += sq.transpose();
  D = D.cwiseMax(0.0);
  D.diagonal().setZero();
  return D;
}

// Conditional row i at precision beta; returns entropy in nats.
double conditional_row(const Eigen::MatrixXd& D, Eigen::Index i, double beta, Eigen::VectorXd& row) {
  const Eigen::Index n = D.rows();
  double dmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j)
    if (j != i) dmin = std::min(dmin, D(i, j));
  double sum = 0.0, dsum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) {
      row(j) = 0.0;
      continue;
    }
    row(j) = std::exp(-(D(i, j) - dmin) * beta);
    sum += row(j);
    dsum += (D(i, j) - dmin) * row(j);
  }
  row /= sum;
  return std::log(sum) + beta * dsum / sum;
}

}  // namespace

// ---------------------------------------------------------------------------
// PCA

Projection2D pca_project(const std::vector<std::vector<float>>& vectors, const std::vector<std::string>& groups) {
  check_inputs(vectors, groups, 3);
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  Eigen::MatrixXd X = to_matrix(vectors, order);
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(X.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::InvalidArgument, "PCA eigen-decomposition failed");

  const Eigen::Index d = cov.rows();
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, 2);
  Projection2D p;
  p.method = ProjectionMethod::PCA;
  for (int k = 0; k < 2 && k < d; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - k);
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    W.col(k) = v;
    p.explained[k] = std::max(0.0, es.eigenvalues()(d - 1 - k));
  }
  const Eigen::MatrixXd Y = X * W;
  p.points.resize(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) p.points[i] = {Y(i, 0), Y(i, 1), groups[i]};
  return p;
}

// ---------------------------------------------------------------------------
// t-SNE

double row_perplexity(const Eigen::MatrixXd& X, std::size_t i, double beta) {
  const Eigen::MatrixXd D = sq_distances(X);
  Eigen::VectorXd row(D.rows());
  const double h = conditional_row(D, static_cast<Eigen::Index>(i), beta, row);
  return std::exp(h);
}

Eigen::MatrixXd tsne_joint_affinities(const Eigen::MatrixXd& X, double perplexity, std::size_t jobs) {
  const Eigen::Index n = X.rows();
  if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n))
    throw Error(ErrorKind::InvalidArgument, "perplexity infeasible: need 0 < perplexity < n (n=" +
                                                std::to_string(n) + ", perplexity=" + std::to_string(perplexity) + ")");
  const Eigen::MatrixXd D = sq_distances(X);
  const double target = std::log(perplexity);
  Eigen::MatrixXd P(n, n);
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t ri) {
    const auto i = static_cast<Eigen::Index>(ri);
    Eigen::VectorXd row(n);
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 200; ++it) {
      const double h = conditional_row(D, i, beta, row);
      if (std::abs(h - target) < 1e-10) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
    P.row(i) = row.transpose();
  });
  Eigen::MatrixXd J = (P + P.transpose()) / (2.0 * static_cast<double>(n));
  J = J.cwiseMax(1e-12);
  J.diagonal().setZero();
  return J;
}

double tsne_kl(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Y) {
  const Eigen::MatrixXd num = (1.0 + sq_distances(Y).array()).inverse().matrix();
  const double z = num.sum() - static_cast<double>(Y.rows());  // diagonal is 1
  double kl = 0.0;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      if (i == j || P(i, j) <= 0.0) continue;
      kl += P(i, j) * std::log(P(i, j) / (num(i, j) / z));
    }
  return kl;
}

Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Y) {
  Eigen::MatrixXd num = (1.0 + sq_distances(Y).array()).inverse().matrix();
  num.diagonal().setZero();
  const Eigen::MatrixXd Q = num / num.sum();
  const Eigen::MatrixXd W = ((P - Q).array() * num.array()).matrix();
  // sum_j W_ij (y_i - y_j) = diag(W 1) Y - W Y
  const Eigen::VectorXd rs = W.rowwise().sum();
  return 4.0 * (rs.asDiagonal() * Y - W * Y);
}

Projection2D tsne_project(const std::vector<std::vector<float>>& vectors, const std::vector<std::string>& groups,
                          const TsneParams& params) {
  check_inputs(vectors, groups, 2);
  if (vectors.size() > kTsneMaxPoints)
    throw Error(ErrorKind::InvalidArgument, "exact t-SNE is capped at " + std::to_string(kTsneMaxPoints) + " points");
  if (params.iterations < 0 || params.exaggeration_iters < 0 || !(params.learning_rate > 0.0))
    throw Error(ErrorKind::InvalidArgument, "t-SNE iterations and learning rate must be positive");

  // Canonical order so that seeding does not depend on input order.
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (vectors[a] != vectors[b]) return vectors[a] < vectors[b];
    return groups[a] < groups[b];
  });
  const Eigen::MatrixXd X = to_matrix(vectors, order);
  const Eigen::MatrixXd P = tsne_joint_affinities(X, params.perplexity);
  const Eigen::Index n = X.rows();

  Rng rng(params.seed, 0x54534e45ull);
  Eigen::MatrixXd Y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) Y(i, c) = 1e-4 * rng.normal();
  Eigen::MatrixXd vel = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);

  Projection2D out;
  out.method = ProjectionMethod::TSNE;
  out.tsne = params;
  out.kl.reserve(static_cast<std::size_t>(params.iterations));
  double kl_prev = tsne_kl(P, Y);
  for (int it = 0; it < params.iterations; ++it) {
    const bool early = it < params.exaggeration_iters;
    const Eigen::MatrixXd G = early ? tsne_gradient(P * params.exaggeration, Y) : tsne_gradient(P, Y);
    const double mom = early ? params.momentum_early : params.momentum_late;
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool same = (G(i, c) > 0) == (vel(i, c) > 0);
        gains(i, c) = std::max(0.01, same ? gains(i, c) * 0.8 : gains(i, c) + 0.2);
      }
    Eigen::MatrixXd step = mom * vel - params.learning_rate * gains.cwiseProduct(G);
    Eigen::MatrixXd cand = Y + step;
    cand.rowwise() -= cand.colwise().mean();
    double kl = tsne_kl(P, cand);
    if (!early && !(kl <= kl_prev)) {
      // After exaggeration the objective must not go up: drop momentum and
      // backtrack along the plain gradient.
      vel.setZero();
      bool accepted = false;
      double eta = params.learning_rate;
      for (int k = 0; k < 60 && !accepted; ++k, eta /= 2.0) {
        cand = Y - eta * G;
        cand.rowwise() -= cand.colwise().mean();
        kl = tsne_kl(P, cand);
        accepted = kl <= kl_prev;
      }
      if (!accepted) {
        out.kl.push_back(kl_prev);
        continue;
      }
      step = cand - Y;
    }
    vel = step;
    Y = cand;
    kl_prev = kl;
    out.kl.push_back(kl);
  }

  out.points.resize(vectors.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    out.points[order[r]] = {Y(static_cast<Eigen::Index>(r), 0), Y(static_cast<Eigen::Index>(r), 1), groups[order[r]]};
  return out;
}

// ---------------------------------------------------------------------------
// Plot data

std::string render_svg(const Projection2D& p) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double size = 480.0, pad = 24.0;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!p.points.empty()) {
    x0 = x1 = p.points[0].x;
    y0 = y1 = p.points[0].y;
    for (const auto& q : p.points) {
      x0 = std::min(x0, q.x), x1 = std::max(x1, q.x);
      y0 = std::min(y0, q.y), y1 = std::max(y1, q.y);
    }
  }
  const double sx = x1 > x0 ? (size - 2 * pad) / (x1 - x0) : 1.0;
  const double sy = y1 > y0 ? (size - 2 * pad) / (y1 - y0) : 1.0;
  std::map<std::string, int> color;
  for (const auto& q : p.points) color.emplace(q.group, 0);
  int k = 0;
  for (auto& [g, c] : color) c = k++ % 6;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\" viewBox=\"0 0 "
     << size << ' ' << size << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  char buf[160];
  for (const auto& q : p.points) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" fill-opacity=\"0.7\"/>\n",
                  pad + (q.x - x0) * sx, size - pad - (q.y - y0) * sy, palette[color[q.group]]);
    os << buf;
  }
  int row = 0;
  for (const auto& [g, c] : color) {
    std::snprintf(buf, sizeof buf, "<text x=\"8\" y=\"%d\" font-size=\"12\" fill=\"%s\">", 16 + 14 * row++, palette[c]);
    os << buf << g << "</text>\n";
  }
  os << "<text x=\"" << size - 8 << "\" y=\"16\" font-size=\"12\" text-anchor=\"end\">" << projection_name(p.method)
     << "</text>\n</svg>\n";
  return os.str();
}

void emit_plot_data(const Projection2D& p, const std::string& path) {
  for (const auto& q : p.points) {
    if (!std::isfinite(q.x) || !std::isfinite(q.y)) throw Error(ErrorKind::InvalidArgument, "projection has non-finite points");
    if (q.group.find_first_of(",\n\r<>&") != std::string::npos)
      throw Error(ErrorKind::InvalidArgument, "group label '" + q.group + "' has reserved characters");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot write plot data: " + path);
  f << "x,y,group\n";
  char buf[64];
  for (const auto& q : p.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,", q.x, q.y);
    f << buf << q.group << '\n';
  }
  if (!f) throw Error(ErrorKind::Io, "write failed: " + path);
  std::ofstream s(path + ".svg", std::ios::binary);
  if (!s) throw Error(ErrorKind::Io, "cannot write plot: " + path + ".svg");
  s << render_svg(p);
}

std::vector<ProjectedPoint> read_plot_data(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot read plot data: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "x,y,group") throw Error(ErrorKind::Format, path + ": missing x,y,group header");
  std::vector<ProjectedPoint> out;
  while (std::getline(f, line)) {
    auto cols = split(line, ',');
    if (cols.size() != 3) throw Error(ErrorKind::Format, path + ": expected 3 columns: " + line);
    char* end = nullptr;
    ProjectedPoint q;
    q.x = std::strtod(cols[0].c_str(), &end);
    if (*end) throw Error(ErrorKind::Format, path + ": bad x: " + cols[0]);
    q.y = std::strtod(cols[1].c_str(), &end);
    if (*end) throw Error(ErrorKind::Format, path + ": bad y: " + cols[1]);
    q.group = cols[2];
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster metrics

double silhouette(const std::vector<ProjectedPoint>& points) {
  std::map<std::string, int> gid;
  for (const auto& q : points) gid.emplace(q.group, 0);
  if (gid.size() < 2) throw Error(ErrorKind::InvalidArgument, "silhouette needs two or more groups");
  int k = 0;
  for (auto& [g, id] : gid) id = k++;
  const std::size_t n = points.size();
  std::vector<int> label(n);
  std::vector<std::size_t> count(gid.size(), 0);
  for (std::size_t i = 0; i < n; ++i) ++count[label[i] = gid[points[i].group]];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(gid.size(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[label[j]] += std::hypot(points[i].x - points[j].x, points[i].y - points[j].y);
    }
    if (count[label[i]] < 2) continue;  // singleton: s = 0
    const double a = sum[label[i]] / static_cast<double>(count[label[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gid.size(); ++g)
      if (static_cast<int>(g) != label[i]) b = std::min(b, sum[g] / static_cast<double>(count[g]));
    const double m = std::max(a, b);
    if (m > 0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

GroupSpread group_spread(const std::vector<ProjectedPoint>& points) {
  std::map<std::string, std::vector<const ProjectedPoint*>> by;
  for (const auto& q : points) by[q.group].push_back(&q);
  if (by.size() != 2) throw Error(ErrorKind::InvalidArgument, "group_spread needs exactly two groups");
  double cx[2], cy[2], spread[2];
  int g = 0;
  for (const auto& [name, pts] : by) {
    cx[g] = cy[g] = 0.0;
    for (auto* q : pts) cx[g] += q->x, cy[g] += q->y;
    cx[g] /= static_cast<double>(pts.size());
    cy[g] /= static_cast<double>(pts.size());
    spread[g] = 0.0;
    for (auto* q : pts) spread[g] += std::hypot(q->x - cx[g], q->y - cy[g]);
    spread[g] /= static_cast<double>(pts.size());
    ++g;
  }
  GroupSpread s;
  s.centroid_distance = std::hypot(cx[0] - cx[1], cy[0] - cy[1]);
  s.within_spread = (spread[0] + spread[1]) / 2.0;
  return s;
}

}  // namespace actrev
