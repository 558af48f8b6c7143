#include "fps/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fps/errors.hpp"

namespace fps {
namespace {

constexpr double kNormTolerance = 1e-6;

void check_weights(Eigen::Index rows, const SampleWeights& weights) {
  if (static_cast<std::size_t>(rows) != weights.size()) {
    throw DataError("row count " + std::to_string(rows) + " does not match " +
                    std::to_string(weights.size()) + " sample weights");
  }
}

struct LogitLoss {
  double value = 0.0;
  Eigen::MatrixXd dz;  // d value / d logits
};

// (1/N) sum_i w_i H(softmax(z_i)); dH/dz_k = -p_k (log p_k + H).
LogitLoss se_from_logits(const Eigen::MatrixXd& z, const SampleWeights& w) {
  const Eigen::Index n = z.rows();
  LogitLoss out;
  out.dz.resize(n, z.cols());
  if (n == 0) return out;
  const Eigen::MatrixXd logp = log_softmax_rows(z);
  const Eigen::MatrixXd p = logp.array().exp();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = -(p.row(i).array() * logp.row(i).array()).sum();
    const double wi = w[static_cast<std::size_t>(i)] / static_cast<double>(n);
    total += wi * h;
    out.dz.row(i) = -wi * (p.row(i).array() * (logp.row(i).array() + h));
  }
  out.value = total;
  return out;
}

// sum_c pbar_c log pbar_c with pbar = sum_i w_i p_i / sum_i w_i.
LogitLoss ce_from_logits(const Eigen::MatrixXd& z, const SampleWeights& w) {
  const Eigen::Index n = z.rows();
  const Eigen::Index c = z.cols();
  LogitLoss out;
  out.dz = Eigen::MatrixXd::Zero(n, c);
  if (n == 0) return out;
  const Eigen::MatrixXd p = softmax_rows(z);
  double wsum = 0.0;
  Eigen::RowVectorXd pbar = Eigen::RowVectorXd::Zero(c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double wi = w[static_cast<std::size_t>(i)];
    wsum += wi;
    pbar += wi * p.row(i);
  }
  pbar /= wsum;
  Eigen::RowVectorXd log_pbar(c);
  double value = 0.0;
  for (Eigen::Index k = 0; k < c; ++k) {
    log_pbar(k) = std::log(std::max(pbar(k), std::numeric_limits<double>::min()));
    if (pbar(k) > 0.0) value += pbar(k) * log_pbar(k);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double wi = w[static_cast<std::size_t>(i)] / wsum;
    const double mix = p.row(i).dot(log_pbar);
    out.dz.row(i) = wi * (p.row(i).array() * (log_pbar.array() - mix));
  }
  out.value = value;
  return out;
}

HeadGradient chain_target(const DecisionHead& head, const Eigen::MatrixXd& x,
                          const Eigen::MatrixXd& dz) {
  HeadGradient g = DecisionHead::zeros(head.dim(), head.num_classes());
  g.W = x.transpose() * dz;
  g.b = dz.colwise().sum().transpose();
  g.dW = g.W;
  g.db = g.b;
  return g;
}

HeadGradient chain_source(const DecisionHead& head, const Eigen::MatrixXd& x,
                          const Eigen::MatrixXd& dz) {
  HeadGradient g = DecisionHead::zeros(head.dim(), head.num_classes());
  g.W = x.transpose() * dz;
  g.b = dz.colwise().sum().transpose();
  return g;
}

void check_labels(std::span<const std::int32_t> labels, Eigen::Index rows, std::size_t classes) {
  if (labels.size() != static_cast<std::size_t>(rows)) {
    throw DataError("supervised loss: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(rows) + " samples");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("supervised loss: label " + std::to_string(labels[i]) + " at sample " +
                      std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

void LossConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!(T > 0.0) || !(T_gamma > 0.0)) throw DataError("LossConfig: T and T_gamma must be > 0");
  if (!unit(alpha) || !unit(alpha0)) throw DataError("LossConfig: alpha and alpha0 must lie in [0, 1]");
  if (!std::isfinite(beta) || !std::isfinite(beta0) || !std::isfinite(lambda) ||
      !std::isfinite(gamma_amplitude)) {
    throw DataError("LossConfig: non-finite weight");
  }
}

Schedule schedule(const LossConfig& config, double t) {
  const double decay = std::exp(-t / config.T);
  Schedule s;
  s.alpha_t = config.alpha + (config.alpha0 - config.alpha) * decay;
  const double gap = config.beta_schedule == BetaSchedule::kPrinted ? config.beta - config.beta0
                                                                    : config.beta0 - config.beta;
  s.beta_t = config.beta + gap * decay;
  if (config.clamp_beta) s.beta_t = std::clamp(s.beta_t, 0.0, 1.0);
  s.gamma_t = config.gamma_amplitude * std::exp(-t / config.T_gamma);
  return s;
}

void accumulate(HeadGradient& grad, double scale, const HeadGradient& other) {
  if (scale == 0.0) return;
  grad.W += scale * other.W;
  grad.b += scale * other.b;
  grad.dW += scale * other.dW;
  grad.db += scale * other.db;
}

double sample_entropy(std::span<const double> p) {
  double sum = 0.0, h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) {
      throw DataError("sample_entropy: negative or NaN probability " + std::to_string(v));
    }
    sum += v;
    if (v > 0.0) h -= v * std::log(v);
  }
  if (std::abs(sum - 1.0) > kNormTolerance) {
    std::ostringstream msg;
    msg << "sample_entropy: probabilities sum to " << sum;
    throw DataError(msg.str());
  }
  return h;
}

double sample_entropy(const Eigen::VectorXd& p) {
  return sample_entropy(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

double loss_se(const Eigen::MatrixXd& probs, const SampleWeights& weights, SignConvention sign) {
  check_weights(probs.rows(), weights);
  const Eigen::Index n = probs.rows();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd row = probs.row(i).transpose();
    total += weights[static_cast<std::size_t>(i)] * sample_entropy(row);
  }
  const double mean = total / static_cast<double>(n);
  return sign == SignConvention::kIntent ? mean : -mean;
}

double loss_ce(const Eigen::MatrixXd& probs, const SampleWeights& weights) {
  check_weights(probs.rows(), weights);
  if (probs.rows() == 0) return 0.0;
  Eigen::VectorXd pbar = Eigen::VectorXd::Zero(probs.cols());
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const Eigen::VectorXd row = probs.row(i).transpose();
    sample_entropy(row);  // validates the row
    pbar += weights[static_cast<std::size_t>(i)] * row;
    wsum += weights[static_cast<std::size_t>(i)];
  }
  pbar /= wsum;
  return -sample_entropy(pbar);
}

double entropy_loss(const Eigen::MatrixXd& probs, const SampleWeights& weights, double alpha_t,
                    SignConvention sign) {
  const double se = loss_se(probs, weights, sign);
  const double ce = loss_ce(probs, weights);
  return sign == SignConvention::kIntent ? alpha_t * se + (1.0 - alpha_t) * ce
                                         : alpha_t * se + (alpha_t - 1.0) * ce;
}

double loss_delta(const DecisionHead& head) { return head.dW.norm() + head.db.norm(); }

double loss_sce(const DecisionHead& head, const Eigen::MatrixXd& source_x,
                std::span<const std::int32_t> labels) {
  check_labels(labels, source_x.rows(), head.num_classes());
  if (source_x.rows() == 0) return 0.0;
  const Eigen::MatrixXd logp = log_softmax_rows(logits(head, source_x, Plane::kSource));
  double total = 0.0;
  for (Eigen::Index i = 0; i < logp.rows(); ++i) total -= logp(i, labels[static_cast<std::size_t>(i)]);
  return total / static_cast<double>(logp.rows());
}

double loss_sce(const DecisionHead& head, const FeatureSet& source) {
  if (!source.labels) throw DataError("supervised loss needs source labels");
  return loss_sce(head, feature_matrix(source), *source.labels);
}

Eigen::VectorXd random_pool(const Eigen::Ref<const Eigen::MatrixXd>& patches, PoolingMode mode,
                            Rng& rng) {
  const Eigen::Index p_count = patches.rows();
  if (p_count == 0) throw DataError("random_pool: no patches");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(patches.cols());
  double wsum = 0.0;
  for (Eigen::Index p = 0; p < p_count; ++p) {
    const double eta = rng.uniform01();
    const double omega = mode == PoolingMode::kUniform ? eta : eta * eta;
    acc += omega * patches.row(p).transpose();
    wsum += omega;
  }
  // A single patch is its own convex combination; the draw is still consumed.
  if (p_count == 1) return patches.row(0).transpose();
  return acc / wsum;
}

PoolingDraws draw_pooling_pairs(const Eigen::MatrixXd& patches, std::size_t n_patches,
                                std::span<const std::size_t> samples, PoolingMode mode,
                                Rng& rng) {
  if (n_patches == 0) throw DataError("pooling draws need patch features");
  const auto p = static_cast<Eigen::Index>(n_patches);
  PoolingDraws draws;
  draws.first.resize(static_cast<Eigen::Index>(samples.size()), patches.cols());
  draws.second.resize(static_cast<Eigen::Index>(samples.size()), patches.cols());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const auto block = patches.middleRows(static_cast<Eigen::Index>(samples[r]) * p, p);
    draws.first.row(static_cast<Eigen::Index>(r)) = random_pool(block, mode, rng).transpose();
    draws.second.row(static_cast<Eigen::Index>(r)) = random_pool(block, mode, rng).transpose();
  }
  return draws;
}

PoolingDraws draw_pooling_pairs(const Eigen::MatrixXd& patches, std::size_t n_patches,
                                PoolingMode mode, Rng& rng) {
  if (n_patches == 0) throw DataError("pooling draws need patch features");
  std::vector<std::size_t> all(static_cast<std::size_t>(patches.rows()) / n_patches);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return draw_pooling_pairs(patches, n_patches, all, mode, rng);
}

std::vector<double> cr_values(const DecisionHead& head, const PoolingDraws& draws,
                              bool normalized) {
  const Eigen::MatrixXd wt = head.target_weights();
  const Eigen::MatrixXd diff = (draws.first - draws.second) * wt;
  std::vector<double> out(static_cast<std::size_t>(diff.rows()));
  Eigen::MatrixXd y1, y2;
  if (normalized) {
    y1 = logits(head, draws.first, Plane::kTarget);
    y2 = logits(head, draws.second, Plane::kTarget);
  }
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    double v = diff.row(i).norm();
    if (normalized) {
      const double scale = 0.5 * (y1.row(i).norm() + y2.row(i).norm());
      v = scale > 0.0 ? v / scale : 0.0;
    }
    out[static_cast<std::size_t>(i)] = v;
  }
  return out;
}

double loss_cr(const DecisionHead& head, const PoolingDraws& draws, const SampleWeights& weights) {
  return cr_loss_grad(head, draws, weights).value;
}

double loss_cr(const DecisionHead& head, const FeatureSet& patch_set, PoolingMode mode,
               const SampleWeights& weights, Rng& rng) {
  if (!patch_set.has_patches()) {
    throw DataError("CR loss needs patch features; set lambda = 0 for pooled-only data");
  }
  const PoolingDraws draws = draw_pooling_pairs(patch_matrix(patch_set), patch_set.n_patches, mode, rng);
  return loss_cr(head, draws, weights);
}

LossGrad sce_loss_grad(const DecisionHead& head, const Eigen::MatrixXd& source_x,
                       std::span<const std::int32_t> labels) {
  check_labels(labels, source_x.rows(), head.num_classes());
  LossGrad out;
  const Eigen::Index n = source_x.rows();
  if (n == 0) {
    out.grad = DecisionHead::zeros(head.dim(), head.num_classes());
    return out;
  }
  const Eigen::MatrixXd logp = log_softmax_rows(logits(head, source_x, Plane::kSource));
  Eigen::MatrixXd dz = logp.array().exp();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    total -= logp(i, y);
    dz(i, y) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value = total * inv_n;
  out.grad = chain_source(head, source_x, dz * inv_n);
  return out;
}

LossGrad se_loss_grad(const DecisionHead& head, const Eigen::MatrixXd& target_x,
                      const SampleWeights& weights) {
  check_weights(target_x.rows(), weights);
  const LogitLoss l = se_from_logits(logits(head, target_x, Plane::kTarget), weights);
  return {l.value, chain_target(head, target_x, l.dz)};
}

LossGrad ce_loss_grad(const DecisionHead& head, const Eigen::MatrixXd& target_x,
                      const SampleWeights& weights) {
  check_weights(target_x.rows(), weights);
  const LogitLoss l = ce_from_logits(logits(head, target_x, Plane::kTarget), weights);
  return {l.value, chain_target(head, target_x, l.dz)};
}

// With u_i the difference of the pooled views and v_i = (W + dW)^T u_i,
// CR_i = ||v_i|| and dCR_i/d(W + dW) = u_i v_i^T / ||v_i||. Biases cancel.
LossGrad cr_loss_grad(const DecisionHead& head, const PoolingDraws& draws,
                      const SampleWeights& weights) {
  check_weights(draws.first.rows(), weights);
  LossGrad out;
  out.grad = DecisionHead::zeros(head.dim(), head.num_classes());
  const Eigen::Index n = draws.first.rows();
  if (n == 0) return out;
  const Eigen::MatrixXd u = draws.first - draws.second;
  Eigen::MatrixXd v = u * head.target_weights();
  const double denom = static_cast<double>(n) * static_cast<double>(head.num_classes());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = v.row(i).norm();
    const double wi = weights[static_cast<std::size_t>(i)];
    total += wi * norm;
    v.row(i) *= norm > 0.0 ? wi / (denom * norm) : 0.0;
  }
  out.value = total / denom;
  out.grad.W = u.transpose() * v;
  out.grad.dW = out.grad.W;
  return out;
}

LossGrad delta_loss_grad(const DecisionHead& head) {
  LossGrad out;
  out.grad = DecisionHead::zeros(head.dim(), head.num_classes());
  const double nw = head.dW.norm();
  const double nb = head.db.norm();
  out.value = nw + nb;
  if (nw > 0.0) out.grad.dW = head.dW / nw;
  if (nb > 0.0) out.grad.db = head.db / nb;
  return out;
}

AdaptationProblem AdaptationProblem::build(const FeatureSet& source, const FeatureSet& target,
                                           SampleWeights weights) {
  if (source.dim != target.dim) {
    throw DataError("dimension mismatch: source dim " + std::to_string(source.dim) +
                    ", target dim " + std::to_string(target.dim));
  }
  if (!source.labels) throw DataError("source domain must be labeled");
  std::int32_t max_label = -1;
  for (std::size_t i = 0; i < source.labels->size(); ++i) {
    const std::int32_t y = (*source.labels)[i];
    if (y < 0) throw DataError("source sample " + std::to_string(i) + " is unlabeled");
    max_label = std::max(max_label, y);
  }
  if (weights.size() != target.n_samples) {
    throw DataError("expected " + std::to_string(target.n_samples) + " target weights, got " +
                    std::to_string(weights.size()));
  }

  AdaptationProblem p;
  p.source_x = feature_matrix(source);
  p.source_y = *source.labels;
  p.target_x = feature_matrix(target);
  p.n_patches = target.n_patches;
  if (target.has_patches()) p.target_patches = patch_matrix(target);
  p.weights = std::move(weights);
  p.num_classes = source.class_count > 0 ? source.class_count
                                         : static_cast<std::size_t>(max_label + 1);
  if (p.num_classes < 2) throw DataError("need at least two classes");
  return p;
}

bool cr_active(const AdaptationProblem& problem, const LossConfig& config) {
  return config.use_cr && config.lambda != 0.0 && problem.has_patches();
}

TotalLoss total_loss(const DecisionHead& head, const AdaptationProblem& problem,
                     const LossConfig& config, double t, const PoolingDraws* draws,
                     bool want_grad) {
  TotalLoss out;
  LossBreakdown& parts = out.parts;
  parts.sched = schedule(config, t);
  const double alpha = parts.sched.alpha_t;
  const double beta = parts.sched.beta_t;
  const double gamma = parts.sched.gamma_t;
  const double unsup = 1.0 - beta;

  const LossGrad sce = sce_loss_grad(head, problem.source_x, problem.source_y);
  parts.sce = sce.value;

  check_weights(problem.target_x.rows(), problem.weights);
  const Eigen::MatrixXd z = logits(head, problem.target_x, Plane::kTarget);
  const LogitLoss se = se_from_logits(z, problem.weights);
  const LogitLoss ce = ce_from_logits(z, problem.weights);

  const bool printed = config.sign == SignConvention::kPrinted;
  const double se_sign = printed ? -1.0 : 1.0;
  parts.se = se_sign * se.value;
  parts.ce = ce.value;
  const double se_coef = config.use_se ? alpha : 0.0;
  const double ce_coef = config.use_ce ? (printed ? alpha - 1.0 : 1.0 - alpha) : 0.0;
  parts.entropy = se_coef * parts.se + ce_coef * parts.ce;

  LossGrad cr;
  const bool with_cr = cr_active(problem, config);
  if (with_cr) {
    if (draws == nullptr) throw DataError("CR term active but no pooling draws supplied");
    cr = cr_loss_grad(head, *draws, problem.weights);
    parts.cr = cr.value;
  }
  const LossGrad delta = delta_loss_grad(head);
  parts.delta = delta.value;

  const double cr_coef = with_cr ? config.lambda : 0.0;
  const double delta_coef = config.use_delta ? gamma : 0.0;
  parts.total = beta * parts.sce +
                unsup * (parts.entropy + cr_coef * parts.cr + delta_coef * parts.delta);

  if (want_grad) {
    out.grad = DecisionHead::zeros(head.dim(), head.num_classes());
    accumulate(out.grad, beta, sce.grad);
    const Eigen::MatrixXd dz = unsup * (se_coef * se_sign * se.dz + ce_coef * ce.dz);
    accumulate(out.grad, 1.0, chain_target(head, problem.target_x, dz));
    if (with_cr) accumulate(out.grad, unsup * cr_coef, cr.grad);
    accumulate(out.grad, unsup * delta_coef, delta.grad);
  }
  return out;
}

TotalLoss total_loss(const DecisionHead& head, const AdaptationProblem& problem,
                     const LossConfig& config, double t, PoolingMode mode, Rng& rng,
                     bool want_grad) {
  if (!cr_active(problem, config)) return total_loss(head, problem, config, t, nullptr, want_grad);
  const PoolingDraws draws =
      draw_pooling_pairs(problem.target_patches, problem.n_patches, mode, rng);
  return total_loss(head, problem, config, t, &draws, want_grad);
}

}  // namespace fps
