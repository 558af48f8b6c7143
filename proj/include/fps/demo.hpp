#pragma once

#include "fps/losses.hpp"
#include "fps/preprocess.hpp"
#include "fps/synthetic.hpp"
#include "fps/trainer.hpp"

namespace fps {

// Standardized copies of a generated pair; the target keeps its labels for scoring.
struct PreparedPair {
  FeatureSet source;
  FeatureSet target;
  PreprocessStats stats;
};

PreparedPair prepare(const SyntheticPair& raw, double std_scale = kDefaultStdScale,
                     bool apply_sqrt = false);

struct DemoConfig {
  ShiftSpec spec;
  LossConfig loss;
  TrainConfig train;
  double std_scale = kDefaultStdScale;
};

// The shifted 2-D two-class setup used by `demo`.
DemoConfig default_demo(std::uint64_t seed);

struct DemoResult {
  double source_only_accuracy = 0.0;
  double fps_accuracy = 0.0;
  double joint_accuracy = 0.0;
  DecisionHead source_head;
  DecisionHead joint_head;
  AdaptReport fps;
};

// Source-only and joint heads use the supervised loss alone with the same
// optimizer settings; FPS never sees target labels.
DemoResult run_demo(const DemoConfig& config);

}  // namespace fps
