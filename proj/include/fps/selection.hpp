#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fps/feature_store.hpp"
#include "fps/losses.hpp"
#include "fps/trainer.hpp"

namespace fps {

struct ICDMResult {
  double d_intra_hat = 0.0;
  std::optional<double> d_intra_true;
  std::optional<double> R;
  std::vector<std::size_t> per_class_counts;  // pseudo-label counts
};

// Root-mean-square distance of each sample to its class centroid. Empty
// classes have no centroid and contribute nothing.
double intra_class_distance(const Eigen::MatrixXd& x, std::span<const std::int32_t> labels,
                            std::size_t classes);

ICDMResult icdm(const FeatureSet& target, std::span<const std::int32_t> pseudo_labels,
                std::optional<std::span<const std::int32_t>> true_labels = std::nullopt,
                std::size_t classes = 0);

inline const std::vector<double> kDefaultAlphaGrid = {0.15, 0.25, 0.35, 0.45, 0.55,
                                                      0.65, 0.75, 0.85, 0.95};

// How alpha0 follows the swept alpha: kept as configured, or alpha / 2.
enum class Alpha0Rule { kFixed, kHalfAlpha };

struct SweepRow {
  double alpha = 0.0;
  double d_intra_hat = 0.0;
  std::optional<double> R;
  std::optional<double> target_accuracy;
  bool selected = false;
};

struct SweepResult {
  double selected_alpha = 0.0;
  std::vector<SweepRow> table;
  std::vector<AdaptReport> reports;  // in candidate order
};

// Runs adapt per candidate with the shared master seed; selects the
// smallest D_intra_hat, ties toward smaller alpha. `target_labels`, when
// given, are used only for the R and accuracy columns.
SweepResult sweep_alpha(const FeatureSet& source, const FeatureSet& target,
                        std::span<const double> candidates, const LossConfig& loss_template,
                        const TrainConfig& train_cfg, Alpha0Rule alpha0_rule = Alpha0Rule::kFixed,
                        std::optional<std::span<const std::int32_t>> target_labels = std::nullopt);

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path);

}  // namespace fps
