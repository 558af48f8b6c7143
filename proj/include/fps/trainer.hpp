#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fps/analysis.hpp"
#include "fps/classifier.hpp"
#include "fps/feature_store.hpp"
#include "fps/losses.hpp"
#include "json.hpp"

namespace fps {

enum class BatchMode { kFull, kMinibatch };

struct TrainConfig {
  double max_lr = 1.0;
  std::size_t total_steps = 36000;
  std::size_t warmup_steps = 4000;
  BatchMode batch_mode = BatchMode::kFull;
  std::size_t batch_size = 256;  // per domain, minibatch mode only
  std::uint64_t master_seed = 0;
  std::size_t log_every = 500;
  double momentum = 0.0;
  PoolingMode pooling = PoolingMode::kUniform;
  std::size_t histogram_bins = 20;

  void validate() const;
};

// Linear warmup to max_lr over warmup_steps, constant afterwards. Step t is
// 0-based; the first update uses max_lr / warmup_steps.
double learning_rate(const TrainConfig& config, std::size_t t);

struct TraceRow {
  std::size_t step = 0;
  LossBreakdown parts;
};

struct AdaptReport {
  DecisionHead final_head;
  std::vector<TraceRow> loss_trace;
  std::optional<double> target_accuracy;
  std::vector<std::int32_t> pseudo_labels;
  Histogram se_histogram;
  Histogram cr_histogram;  // empty counts without patch features
  double d_intra_hat = 0.0;
  double elapsed_seconds = 0.0;
  std::vector<std::string> warnings;
};

/// Full FPS optimization of (W, b, dW, db) with plain SGD.
///
/// Both sets must carry the same stats fingerprint. Target labels, if
/// present, are removed before the objective is built and only scored for
/// the report. `initial_head` defaults to zeros.
AdaptReport adapt(const FeatureSet& source, const FeatureSet& target, const LossConfig& loss_cfg,
                  const TrainConfig& train_cfg,
                  const std::optional<DecisionHead>& initial_head = std::nullopt);

// Same optimizer on an already-built problem; returns the head and trace.
struct OptimizeResult {
  DecisionHead head;
  std::vector<TraceRow> trace;
};
OptimizeResult optimize(const AdaptationProblem& problem, const LossConfig& loss_cfg,
                        const TrainConfig& train_cfg, DecisionHead head);

// Minimizes the supervised cross-entropy only, on any labeled set.
DecisionHead train_supervised(const FeatureSet& set, const TrainConfig& train_cfg);

// Concatenation of two labeled sets (features and labels) for joint training.
FeatureSet concat(const FeatureSet& a, const FeatureSet& b);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path);

nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const TrainConfig& c);
// Overwrites only the keys present in `j`.
void merge_json(const nlohmann::json& j, LossConfig& c);
void merge_json(const nlohmann::json& j, TrainConfig& c);
nlohmann::json report_json(const AdaptReport& report);

}  // namespace fps
