#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fps/feature_store.hpp"
#include "fps/losses.hpp"

namespace fps {

/// Mean pairwise Euclidean distance between classes. Entries with no
/// contributing pairs are NaN and flagged in `missing`.
struct ClassDistanceMatrix {
  Eigen::MatrixXd mean;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> missing;
};

// Entry (i, j): mean ||x - x'|| over x in class i of `a`, x' in class j of `b`.
ClassDistanceMatrix class_distance_matrix(const FeatureSet& a, std::span<const std::int32_t> labels_a,
                                          const FeatureSet& b, std::span<const std::int32_t> labels_b,
                                          std::size_t classes);
// Same set on both sides; self-pairs are excluded.
ClassDistanceMatrix class_distance_matrix(const FeatureSet& a, std::span<const std::int32_t> labels,
                                          std::size_t classes);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / counts.size(); }
};

struct Distribution {
  Histogram histogram;
  double bandwidth = 0.0;
  std::vector<double> grid;     // KDE abscissae, uniform spacing
  std::vector<double> density;  // empty unless requested
};

// Histogram over [min, max] (widened by 0.5 on each side when all values are
// equal). Optional range override pins the bin edges.
Histogram histogram(std::span<const double> values, std::size_t bins,
                    std::optional<std::pair<double, double>> range = std::nullopt);

// Histogram plus, when `with_density`, a Gaussian KDE on a uniform grid with
// Silverman's bandwidth, extended to 5 bandwidths past the data.
Distribution distribution_export(std::span<const double> values, std::size_t bins,
                                 bool with_density);

double silverman_bandwidth(std::span<const double> values);
double trapezoid(std::span<const double> x, std::span<const double> y);

/// One (theta, b) cell of the two-class plane sweep
/// sin(theta) x1 + cos(theta) x2 + b = 0.
struct LandscapeCell {
  double theta = 0.0;
  double b = 0.0;
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
  double combined_accuracy = 0.0;
  double supervised_loss = 0.0;
  double unsupervised_loss = 0.0;
  double joint_loss = 0.0;
};

// Head whose logits are [f/2, -f/2] with f = sin(theta) x1 + cos(theta) x2 + b.
DecisionHead plane_head(double theta, double b);

// Target labels are used only for the accuracy columns. The unsupervised
// loss is entropy_loss at alpha with target sample weights; the joint loss
// is joint_beta * supervised + (1 - joint_beta) * unsupervised.
inline constexpr double kDefaultJointBeta = 0.5;
std::vector<LandscapeCell> landscape_2d(const FeatureSet& source, const FeatureSet& target,
                                        std::span<const double> theta_grid,
                                        std::span<const double> b_grid, const LossConfig& loss_cfg,
                                        double joint_beta = kDefaultJointBeta);

void write_landscape_csv(const std::vector<LandscapeCell>& cells, const std::filesystem::path& path);
void write_distance_csv(const ClassDistanceMatrix& m, const std::filesystem::path& path);
void write_distribution_csv(const Distribution& d, const std::filesystem::path& histogram_path,
                            const std::filesystem::path& density_path);

// Per-sample entropies of the target-plane predictions.
std::vector<double> sample_entropies(const DecisionHead& head, const Eigen::MatrixXd& x);

}  // namespace fps
