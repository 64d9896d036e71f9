#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace actrev {

enum class ProjectionMethod : std::uint8_t { PCA, TSNE };
std::string projection_name(ProjectionMethod m);

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  std::string group;
};

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  int exaggeration_iters = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  double momentum_early = 0.5;
  double momentum_late = 0.8;
};

// Exact t-SNE is O(n^2) in memory and time.
inline constexpr std::size_t kTsneMaxPoints = 3000;

struct Projection2D {
  ProjectionMethod method = ProjectionMethod::PCA;
  std::vector<ProjectedPoint> points;
  TsneParams tsne;
  // t-SNE: KL(P || Q) against the unexaggerated P after every iteration.
  std::vector<double> kl;
  // PCA: variance along the two kept components.
  double explained[2] = {0.0, 0.0};
};

Projection2D pca_project(const std::vector<std::vector<float>>& vectors, const std::vector<std::string>& groups);
Projection2D tsne_project(const std::vector<std::vector<float>>& vectors, const std::vector<std::string>& groups,
                          const TsneParams& params);

// t-SNE pieces, exposed for the gradient and calibration checks.
// Row-conditional affinities with per-row bandwidth found by bisection on
// entropy, then symmetrized: P = (P_cond + P_cond^T) / 2n.
Eigen::MatrixXd tsne_joint_affinities(const Eigen::MatrixXd& X, double perplexity, std::size_t jobs = 1);
// Perplexity 2^H of one row of conditional affinities (H in bits).
double row_perplexity(const Eigen::MatrixXd& X, std::size_t i, double beta);
double tsne_kl(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Y);
// dKL/dY for the Student-t kernel; n x 2.
Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Y);

// Writes `path` (x,y,group rows) and `path`.svg.
void emit_plot_data(const Projection2D& p, const std::string& path);
std::vector<ProjectedPoint> read_plot_data(const std::string& path);
std::string render_svg(const Projection2D& p);

// Mean silhouette over points using Euclidean distance in the projection.
double silhouette(const std::vector<ProjectedPoint>& points);

struct GroupSpread {
  double centroid_distance = 0.0;
  // Mean distance of a point to its own group centroid, averaged over both groups.
  double within_spread = 0.0;
  bool separated() const { return centroid_distance > within_spread; }
};
// Exactly two groups required.
GroupSpread group_spread(const std::vector<ProjectedPoint>& points);

}  // namespace actrev
