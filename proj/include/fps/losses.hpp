#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "fps/classifier.hpp"
#include "fps/feature_store.hpp"
#include "fps/preprocess.hpp"
#include "fps/rng.hpp"

namespace fps {

// Sign reading of the entropy objective. kIntent minimizes
// alpha*E[SE] - (1-alpha)*CE; kPrinted is the literal composite
// alpha*(-E[SE]) + (alpha-1)*(-CE), which is its negation.
enum class SignConvention { kIntent, kPrinted };

// kPrinted: beta + (beta - beta0) e^{-t/T}; kInterpolating: beta + (beta0 - beta) e^{-t/T}.
enum class BetaSchedule { kPrinted, kInterpolating };

struct LossConfig {
  double alpha = 0.55;
  double alpha0 = 0.1;
  double beta = 0.95;
  double beta0 = 0.1;
  double lambda = 1.0;
  double T = 1000.0;
  double T_gamma = 3000.0;
  double gamma_amplitude = 0.1;
  double weight_sharpness = kDefaultWeightSharpness;  // A in the sample weights
  bool clamp_beta = true;
  BetaSchedule beta_schedule = BetaSchedule::kPrinted;
  SignConvention sign = SignConvention::kIntent;
  // Ablation switches for the individual terms.
  bool use_se = true;
  bool use_ce = true;
  bool use_cr = true;
  bool use_delta = true;

  void validate() const;
};

enum class PoolingMode { kUniform, kSquaredUniform };

struct PoolingPerturbation {
  PoolingMode mode = PoolingMode::kUniform;
  std::uint64_t seed = 0;
};

struct Schedule {
  double alpha_t = 0.0;
  double beta_t = 0.0;
  double gamma_t = 0.0;
};

Schedule schedule(const LossConfig& config, double t);

// Gradient of a scalar loss with respect to every head parameter.
using HeadGradient = DecisionHead;

struct LossGrad {
  double value = 0.0;
  HeadGradient grad;
};

// ---- value-only terms on probabilities -------------------------------------

// Shannon entropy (natural log) with 0 log 0 = 0. Rejects vectors that do not
// sum to 1 within 1e-6 or have negative entries.
double sample_entropy(std::span<const double> p);
double sample_entropy(const Eigen::VectorXd& p);

// (1/N) sum_i w_i SE(p_i).
double loss_se(const Eigen::MatrixXd& probs, const SampleWeights& weights,
               SignConvention sign = SignConvention::kIntent);
// -SE(pbar) with pbar the weighted mean row.
double loss_ce(const Eigen::MatrixXd& probs, const SampleWeights& weights);
double entropy_loss(const Eigen::MatrixXd& probs, const SampleWeights& weights, double alpha_t,
                    SignConvention sign = SignConvention::kIntent);

double loss_delta(const DecisionHead& head);

double loss_sce(const DecisionHead& head, const Eigen::MatrixXd& source_x,
                std::span<const std::int32_t> labels);
double loss_sce(const DecisionHead& head, const FeatureSet& source);

// ---- random pooling --------------------------------------------------------

// Convex combination sum_p w_p x_p / sum_p w_p of the patch rows, with
// weights drawn in patch order from `rng`.
Eigen::VectorXd random_pool(const Eigen::Ref<const Eigen::MatrixXd>& patches, PoolingMode mode,
                            Rng& rng);

// Two independent pooled views per sample, drawn in sample order
// (sample i: first view's P weights, then the second view's P weights).
struct PoolingDraws {
  Eigen::MatrixXd first;
  Eigen::MatrixXd second;
};

PoolingDraws draw_pooling_pairs(const Eigen::MatrixXd& patches, std::size_t n_patches,
                                PoolingMode mode, Rng& rng);
PoolingDraws draw_pooling_pairs(const Eigen::MatrixXd& patches, std::size_t n_patches,
                                std::span<const std::size_t> samples, PoolingMode mode, Rng& rng);

// Weighted mean of ||y_i - yhat_i||_2 over target-plane logits, divided by C.
double loss_cr(const DecisionHead& head, const PoolingDraws& draws, const SampleWeights& weights);
double loss_cr(const DecisionHead& head, const FeatureSet& patch_set, PoolingMode mode,
               const SampleWeights& weights, Rng& rng);

// Per-sample CR; with `normalized`, divided by (||y|| + ||yhat||) / 2.
std::vector<double> cr_values(const DecisionHead& head, const PoolingDraws& draws,
                              bool normalized);

// ---- value and gradient ----------------------------------------------------

LossGrad sce_loss_grad(const DecisionHead& head, const Eigen::MatrixXd& source_x,
                       std::span<const std::int32_t> labels);
LossGrad se_loss_grad(const DecisionHead& head, const Eigen::MatrixXd& target_x,
                      const SampleWeights& weights);
LossGrad ce_loss_grad(const DecisionHead& head, const Eigen::MatrixXd& target_x,
                      const SampleWeights& weights);
LossGrad cr_loss_grad(const DecisionHead& head, const PoolingDraws& draws,
                      const SampleWeights& weights);
LossGrad delta_loss_grad(const DecisionHead& head);

// ---- total objective -------------------------------------------------------

/// Everything the objective reads, in training precision. Target labels
/// are deliberately absent.
struct AdaptationProblem {
  Eigen::MatrixXd source_x;
  std::vector<std::int32_t> source_y;
  Eigen::MatrixXd target_x;
  Eigen::MatrixXd target_patches;  // (N_t * n_patches) x dim, empty without patches
  std::size_t n_patches = 0;
  SampleWeights weights;
  std::size_t num_classes = 0;

  std::size_t dim() const { return static_cast<std::size_t>(source_x.cols()); }
  std::size_t n_target() const { return static_cast<std::size_t>(target_x.rows()); }
  bool has_patches() const { return n_patches > 0; }

  // Requires a fully labeled source and matching dims; target labels are dropped.
  static AdaptationProblem build(const FeatureSet& source, const FeatureSet& target,
                                 SampleWeights weights);
};

struct LossBreakdown {
  double total = 0.0;
  double sce = 0.0;
  double se = 0.0;
  double ce = 0.0;
  double entropy = 0.0;
  double cr = 0.0;
  double delta = 0.0;
  Schedule sched;
};

struct TotalLoss {
  LossBreakdown parts;
  HeadGradient grad;  // empty unless requested
};

// L = beta_t SCE + (1 - beta_t) [entropy(alpha_t) + lambda CR + gamma_t L_delta].
// `draws` may be null when CR is disabled or the problem has no patches.
TotalLoss total_loss(const DecisionHead& head, const AdaptationProblem& problem,
                     const LossConfig& config, double t, const PoolingDraws* draws,
                     bool want_grad);

// Draws the pooling pairs from `rng` when CR is active, then evaluates.
TotalLoss total_loss(const DecisionHead& head, const AdaptationProblem& problem,
                     const LossConfig& config, double t, PoolingMode mode, Rng& rng,
                     bool want_grad);

bool cr_active(const AdaptationProblem& problem, const LossConfig& config);

// grad += scale * other
void accumulate(HeadGradient& grad, double scale, const HeadGradient& other);

}  // namespace fps
