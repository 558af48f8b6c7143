#include "fps/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fps/errors.hpp"
#include "fps/preprocess.hpp"
#include "fps/selection.hpp"

namespace fps {
namespace {

// Distinct stream for report diagnostics so they never perturb training draws.
constexpr std::uint64_t kDiagnosticStream = 0xD1A6'0000'0000'0001ULL;

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AdaptationProblem subproblem(const AdaptationProblem& full, std::span<const std::size_t> src,
                             std::span<const std::size_t> tgt) {
  AdaptationProblem p;
  p.num_classes = full.num_classes;
  p.n_patches = full.n_patches;
  p.source_x.resize(static_cast<Eigen::Index>(src.size()), full.source_x.cols());
  p.source_y.resize(src.size());
  for (std::size_t r = 0; r < src.size(); ++r) {
    p.source_x.row(static_cast<Eigen::Index>(r)) = full.source_x.row(static_cast<Eigen::Index>(src[r]));
    p.source_y[r] = full.source_y[src[r]];
  }
  p.target_x.resize(static_cast<Eigen::Index>(tgt.size()), full.target_x.cols());
  p.weights.sharpness = full.weights.sharpness;
  p.weights.weights.resize(tgt.size());
  const auto np = static_cast<Eigen::Index>(full.n_patches);
  if (full.has_patches()) {
    p.target_patches.resize(static_cast<Eigen::Index>(tgt.size()) * np, full.target_x.cols());
  }
  for (std::size_t r = 0; r < tgt.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const auto src_row = static_cast<Eigen::Index>(tgt[r]);
    p.target_x.row(row) = full.target_x.row(src_row);
    p.weights.weights[r] = full.weights[tgt[r]];
    if (full.has_patches()) {
      p.target_patches.middleRows(row * np, np) = full.target_patches.middleRows(src_row * np, np);
    }
  }
  return p;
}

std::string describe(const LossBreakdown& parts) {
  std::ostringstream s;
  s << "L_total=" << parts.total << " L_SCE=" << parts.sce << " L_SE=" << parts.se
    << " L_CE=" << parts.ce << " L_CR=" << parts.cr << " L_delta=" << parts.delta
    << " alpha_t=" << parts.sched.alpha_t << " beta_t=" << parts.sched.beta_t
    << " gamma_t=" << parts.sched.gamma_t;
  return s.str();
}

// Plain SGD with optional heavy-ball momentum over a gradient callback.
template <typename GradFn>
void sgd_loop(DecisionHead& head, const TrainConfig& cfg, GradFn&& step_grad) {
  HeadGradient velocity = DecisionHead::zeros(head.dim(), head.num_classes());
  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    const HeadGradient g = step_grad(t);
    const double lr = learning_rate(cfg, t);
    if (cfg.momentum != 0.0) {
      velocity.W = cfg.momentum * velocity.W + g.W;
      velocity.b = cfg.momentum * velocity.b + g.b;
      velocity.dW = cfg.momentum * velocity.dW + g.dW;
      velocity.db = cfg.momentum * velocity.db + g.db;
      accumulate(head, -lr, velocity);
    } else {
      accumulate(head, -lr, g);
    }
    if (!head.all_finite()) {
      throw NumericalError("non-finite head parameters after step " + std::to_string(t) +
                           " (lr " + std::to_string(lr) + ")");
    }
  }
}

std::string pooling_name(PoolingMode m) { return m == PoolingMode::kUniform ? "uniform" : "squared_uniform"; }

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(max_lr > 0.0)) throw DataError("TrainConfig: max_lr must be > 0");
  if (warmup_steps > total_steps) throw DataError("TrainConfig: warmup_steps exceeds total_steps");
  if (batch_mode == BatchMode::kMinibatch && batch_size == 0) {
    throw DataError("TrainConfig: minibatch mode needs batch_size > 0");
  }
  if (log_every == 0) throw DataError("TrainConfig: log_every must be > 0");
  if (histogram_bins == 0) throw DataError("TrainConfig: histogram_bins must be > 0");
}

double learning_rate(const TrainConfig& config, std::size_t t) {
  if (config.warmup_steps == 0) return config.max_lr;
  const double ramp = static_cast<double>(t + 1) / static_cast<double>(config.warmup_steps);
  return config.max_lr * std::min(1.0, ramp);
}

OptimizeResult optimize(const AdaptationProblem& problem, const LossConfig& loss_cfg,
                        const TrainConfig& train_cfg, DecisionHead head) {
  loss_cfg.validate();
  train_cfg.validate();
  if (head.dim() != problem.dim() || head.num_classes() != problem.num_classes) {
    throw DataError("initial head shape does not match the problem");
  }

  OptimizeResult result;
  Rng rng(train_cfg.master_seed);
  const bool minibatch = train_cfg.batch_mode == BatchMode::kMinibatch;
  const bool with_cr = cr_active(problem, loss_cfg);

  auto evaluate = [&](std::size_t t, bool want_grad) {
    const AdaptationProblem* active = &problem;
    AdaptationProblem batch;
    if (minibatch) {
      const auto src = sample_indices(problem.source_x.rows(), train_cfg.batch_size, rng);
      const auto tgt = sample_indices(problem.n_target(), train_cfg.batch_size, rng);
      batch = subproblem(problem, src, tgt);
      active = &batch;
    }
    std::optional<PoolingDraws> draws;
    if (with_cr) {
      draws = draw_pooling_pairs(active->target_patches, active->n_patches, train_cfg.pooling, rng);
    }
    TotalLoss tl = total_loss(head, *active, loss_cfg, static_cast<double>(t),
                              draws ? &*draws : nullptr, want_grad);
    if (!std::isfinite(tl.parts.total)) {
      throw NumericalError("non-finite loss at step " + std::to_string(t) + ": " +
                           describe(tl.parts));
    }
    return tl;
  };

  sgd_loop(head, train_cfg, [&](std::size_t t) {
    TotalLoss tl = evaluate(t, true);
    if (t % train_cfg.log_every == 0) result.trace.push_back({t, tl.parts});
    return std::move(tl.grad);
  });
  // Final state, evaluated without an update.
  result.trace.push_back({train_cfg.total_steps, evaluate(train_cfg.total_steps, false).parts});
  result.head = std::move(head);
  return result;
}

AdaptReport adapt(const FeatureSet& source, const FeatureSet& target, const LossConfig& loss_cfg,
                  const TrainConfig& train_cfg, const std::optional<DecisionHead>& initial_head) {
  const auto start = std::chrono::steady_clock::now();
  if (source.stats_fingerprint != target.stats_fingerprint) {
    throw DataError("preprocessing mismatch: source stats fingerprint '" +
                    source.stats_fingerprint + "' differs from target '" +
                    target.stats_fingerprint + "'");
  }

  AdaptReport report;
  const FeatureSet unlabeled = target.without_labels();
  AdaptationProblem problem = AdaptationProblem::build(
      source, unlabeled, compute_sample_weights(unlabeled, loss_cfg.weight_sharpness));
  if (loss_cfg.use_cr && loss_cfg.lambda != 0.0 && !problem.has_patches()) {
    report.warnings.push_back("target has no patch features; CR term disabled (lambda = 0)");
  }

  DecisionHead head = initial_head ? *initial_head
                                   : DecisionHead::zeros(problem.dim(), problem.num_classes);
  OptimizeResult opt = optimize(problem, loss_cfg, train_cfg, std::move(head));
  report.final_head = std::move(opt.head);
  report.loss_trace = std::move(opt.trace);

  report.pseudo_labels = predict(report.final_head, problem.target_x, Plane::kTarget);
  if (target.labels) report.target_accuracy = accuracy(report.pseudo_labels, *target.labels);

  const auto& bins = train_cfg.histogram_bins;
  if (problem.n_target() > 0) {
    const auto se = sample_entropies(report.final_head, problem.target_x);
    report.se_histogram =
        histogram(se, bins, std::make_pair(0.0, std::log(static_cast<double>(problem.num_classes))));
    if (problem.has_patches()) {
      Rng diag(train_cfg.master_seed ^ kDiagnosticStream);
      const PoolingDraws draws =
          draw_pooling_pairs(problem.target_patches, problem.n_patches, train_cfg.pooling, diag);
      report.cr_histogram = histogram(cr_values(report.final_head, draws, false), bins);
    }
    report.d_intra_hat =
        intra_class_distance(problem.target_x, report.pseudo_labels, problem.num_classes);
  }
  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

DecisionHead train_supervised(const FeatureSet& set, const TrainConfig& train_cfg) {
  train_cfg.validate();
  if (!set.labels) throw DataError("supervised training needs labels");
  std::size_t classes = set.class_count;
  for (std::size_t i = 0; i < set.labels->size(); ++i) {
    if ((*set.labels)[i] < 0) {
      throw DataError("supervised training: sample " + std::to_string(i) + " is unlabeled");
    }
    classes = std::max(classes, static_cast<std::size_t>((*set.labels)[i]) + 1);
  }
  const Eigen::MatrixXd x = feature_matrix(set);
  DecisionHead head = DecisionHead::zeros(set.dim, classes);
  Rng rng(train_cfg.master_seed);
  sgd_loop(head, train_cfg, [&](std::size_t t) {
    LossGrad lg;
    if (train_cfg.batch_mode == BatchMode::kMinibatch) {
      const auto idx = sample_indices(set.n_samples, train_cfg.batch_size, rng);
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(idx.size()), x.cols());
      std::vector<std::int32_t> yb(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        xb.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
        yb[r] = (*set.labels)[idx[r]];
      }
      lg = sce_loss_grad(head, xb, yb);
    } else {
      lg = sce_loss_grad(head, x, *set.labels);
    }
    if (!std::isfinite(lg.value)) {
      throw NumericalError("non-finite supervised loss at step " + std::to_string(t));
    }
    return std::move(lg.grad);
  });
  return head;
}

FeatureSet concat(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim != b.dim) throw DataError("concat: dimension mismatch");
  if (a.has_labels() != b.has_labels()) throw DataError("concat: only one set is labeled");
  FeatureSet out;
  out.dim = a.dim;
  out.n_samples = a.n_samples + b.n_samples;
  out.n_patches = a.n_patches == b.n_patches ? a.n_patches : 0;
  out.features = a.features;
  out.features.insert(out.features.end(), b.features.begin(), b.features.end());
  if (out.n_patches > 0) {
    out.patch_features = a.patch_features;
    out.patch_features.insert(out.patch_features.end(), b.patch_features.begin(),
                              b.patch_features.end());
  }
  if (a.labels) {
    std::vector<std::int32_t> labels = *a.labels;
    labels.insert(labels.end(), b.labels->begin(), b.labels->end());
    out.labels = std::move(labels);
  }
  out.class_count = std::max(a.class_count, b.class_count);
  out.class_names = a.class_names.size() >= b.class_names.size() ? a.class_names : b.class_names;
  out.domain_tag = "joint";
  out.stats_fingerprint = a.stats_fingerprint == b.stats_fingerprint ? a.stats_fingerprint : "";
  return out;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f.precision(17);
  f << "step,L_total,L_SCE,L_SE,L_CE,L_CR,L_delta,alpha_t,beta_t,gamma_t\n";
  for (const auto& r : trace) {
    const auto& p = r.parts;
    f << r.step << ',' << p.total << ',' << p.sce << ',' << p.se << ',' << p.ce << ',' << p.cr
      << ',' << p.delta << ',' << p.sched.alpha_t << ',' << p.sched.beta_t << ','
      << p.sched.gamma_t << '\n';
  }
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"alpha", c.alpha},
          {"alpha0", c.alpha0},
          {"beta", c.beta},
          {"beta0", c.beta0},
          {"lambda", c.lambda},
          {"T", c.T},
          {"T_gamma", c.T_gamma},
          {"gamma_amplitude", c.gamma_amplitude},
          {"weight_sharpness", c.weight_sharpness},
          {"clamp_beta", c.clamp_beta},
          {"beta_schedule", c.beta_schedule == BetaSchedule::kPrinted ? "printed" : "interpolating"},
          {"sign", c.sign == SignConvention::kIntent ? "intent" : "printed"},
          {"use_se", c.use_se},
          {"use_ce", c.use_ce},
          {"use_cr", c.use_cr},
          {"use_delta", c.use_delta}};
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_lr", c.max_lr},
          {"total_steps", c.total_steps},
          {"warmup_steps", c.warmup_steps},
          {"batch_mode", c.batch_mode == BatchMode::kFull ? "full" : "minibatch"},
          {"batch_size", c.batch_size},
          {"master_seed", c.master_seed},
          {"log_every", c.log_every},
          {"momentum", c.momentum},
          {"pooling", pooling_name(c.pooling)},
          {"histogram_bins", c.histogram_bins},
          {"optimizer", "sgd"},
          {"lr_schedule", "linear warmup, constant after"},
          {"rng_algorithm", Rng::kAlgorithm}};
}

void merge_json(const nlohmann::json& j, LossConfig& c) {
  try {
    maybe(j, "alpha", c.alpha);
    maybe(j, "alpha0", c.alpha0);
    maybe(j, "beta", c.beta);
    maybe(j, "beta0", c.beta0);
    maybe(j, "lambda", c.lambda);
    maybe(j, "T", c.T);
    maybe(j, "T_gamma", c.T_gamma);
    maybe(j, "gamma_amplitude", c.gamma_amplitude);
    maybe(j, "weight_sharpness", c.weight_sharpness);
    maybe(j, "clamp_beta", c.clamp_beta);
    maybe(j, "use_se", c.use_se);
    maybe(j, "use_ce", c.use_ce);
    maybe(j, "use_cr", c.use_cr);
    maybe(j, "use_delta", c.use_delta);
    if (j.contains("beta_schedule")) {
      const auto v = j.at("beta_schedule").get<std::string>();
      if (v == "printed") c.beta_schedule = BetaSchedule::kPrinted;
      else if (v == "interpolating") c.beta_schedule = BetaSchedule::kInterpolating;
      else throw DataError("beta_schedule must be 'printed' or 'interpolating'");
    }
    if (j.contains("sign")) {
      const auto v = j.at("sign").get<std::string>();
      if (v == "intent") c.sign = SignConvention::kIntent;
      else if (v == "printed") c.sign = SignConvention::kPrinted;
      else throw DataError("sign must be 'intent' or 'printed'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad loss config: ") + e.what());
  }
}

void merge_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    maybe(j, "max_lr", c.max_lr);
    maybe(j, "total_steps", c.total_steps);
    maybe(j, "warmup_steps", c.warmup_steps);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "master_seed", c.master_seed);
    maybe(j, "log_every", c.log_every);
    maybe(j, "momentum", c.momentum);
    maybe(j, "histogram_bins", c.histogram_bins);
    if (j.contains("batch_mode")) {
      const auto v = j.at("batch_mode").get<std::string>();
      if (v == "full") c.batch_mode = BatchMode::kFull;
      else if (v == "minibatch") c.batch_mode = BatchMode::kMinibatch;
      else throw DataError("batch_mode must be 'full' or 'minibatch'");
    }
    if (j.contains("pooling")) {
      const auto v = j.at("pooling").get<std::string>();
      if (v == "uniform") c.pooling = PoolingMode::kUniform;
      else if (v == "squared_uniform") c.pooling = PoolingMode::kSquaredUniform;
      else throw DataError("pooling must be 'uniform' or 'squared_uniform'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad train config: ") + e.what());
  }
}

nlohmann::json report_json(const AdaptReport& r) {
  nlohmann::json j;
  j["target_accuracy"] = r.target_accuracy ? nlohmann::json(*r.target_accuracy) : nlohmann::json();
  j["d_intra_hat"] = r.d_intra_hat;
  j["elapsed_seconds"] = r.elapsed_seconds;
  j["warnings"] = r.warnings;
  auto hist = [](const Histogram& h) {
    return nlohmann::json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
  };
  j["se_histogram"] = hist(r.se_histogram);
  j["cr_histogram"] = hist(r.cr_histogram);
  std::vector<std::size_t> counts(r.final_head.num_classes(), 0);
  for (auto y : r.pseudo_labels) counts[static_cast<std::size_t>(y)] += 1;
  j["pseudo_label_counts"] = counts;
  if (!r.loss_trace.empty()) {
    const auto& p = r.loss_trace.back().parts;
    j["final_loss"] = {{"L_total", p.total}, {"L_SCE", p.sce}, {"L_SE", p.se}, {"L_CE", p.ce},
                       {"L_CR", p.cr}, {"L_delta", p.delta}};
  }
  return j;
}

}  // namespace fps
