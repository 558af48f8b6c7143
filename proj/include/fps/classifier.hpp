#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fps/feature_store.hpp"
#include "json.hpp"

namespace fps {

/// Linear decision head. Source samples are scored with (W, b); target
/// samples with the shifted plane (W + dW, b + db).
struct DecisionHead {
  Eigen::MatrixXd W;   // dim x classes
  Eigen::VectorXd b;   // classes
  Eigen::MatrixXd dW;  // dim x classes
  Eigen::VectorXd db;  // classes

  static DecisionHead zeros(std::size_t dim, std::size_t classes);

  std::size_t dim() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(W.cols()); }

  Eigen::MatrixXd target_weights() const { return W + dW; }
  Eigen::VectorXd target_bias() const { return b + db; }

  bool all_finite() const;
};

enum class Plane { kSource, kTarget };

Eigen::VectorXd logits_source(const DecisionHead& head, const Eigen::VectorXd& x);
Eigen::VectorXd logits_target(const DecisionHead& head, const Eigen::VectorXd& x);

// Row-wise logits for an N x dim matrix.
Eigen::MatrixXd logits(const DecisionHead& head, const Eigen::MatrixXd& x, Plane plane);

Eigen::VectorXd softmax(const Eigen::VectorXd& y);
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& y);
Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& y);

// Index of the largest entry; ties go to the lowest index.
std::int32_t argmax(std::span<const double> values);

std::vector<std::int32_t> predict(const DecisionHead& head, const FeatureSet& set, Plane plane);
std::vector<std::int32_t> predict(const DecisionHead& head, const Eigen::MatrixXd& x, Plane plane);

// Fraction of labeled samples predicted correctly; unlabeled entries are skipped.
double accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth);

Eigen::MatrixXd feature_matrix(const FeatureSet& set);
// Patches stacked as (n_samples * n_patches) x dim, sample-major.
Eigen::MatrixXd patch_matrix(const FeatureSet& set);

nlohmann::json head_to_json(const DecisionHead& head);
DecisionHead head_from_json(const nlohmann::json& j);
void write_head(const DecisionHead& head, const std::filesystem::path& path);
DecisionHead read_head(const std::filesystem::path& path);

}  // namespace fps
