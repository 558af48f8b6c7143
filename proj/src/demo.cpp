#include "fps/demo.hpp"

#include <cmath>

namespace fps {

PreparedPair prepare(const SyntheticPair& raw, double std_scale, bool apply_sqrt) {
  PreparedPair out;
  out.stats = fit_stats(raw.source, raw.target, std_scale, apply_sqrt);
  out.source = apply_stats(raw.source, out.stats);
  out.target = apply_stats(raw.target, out.stats);
  return out;
}

DemoConfig default_demo(std::uint64_t seed) {
  DemoConfig c;
  c.spec.classes = 2;
  c.spec.dim = 2;
  c.spec.per_class = 200;
  c.spec.spread = 1.0;
  c.spec.patch_count = 4;
  c.spec.patch_noise = 0.5;
  c.spec.seed = seed;
  // Rotate the target about the centroid until each class mean sits one
  // spread from the source bisector. Source and target remain jointly
  // separable by a plane through the centroid.
  const auto means = class_means(c.spec);
  const double gap = std::hypot(means[1][0] - means[0][0], means[1][1] - means[0][1]);
  c.spec.shift_rotation = std::acos(std::min(1.0, 2.0 * c.spec.spread / gap));
  return c;
}

DemoResult run_demo(const DemoConfig& config) {
  const PreparedPair data = prepare(generate(config.spec), config.std_scale);
  const auto& labels = *data.target.labels;
  DemoResult r;
  r.source_head = train_supervised(data.source, config.train);
  r.source_only_accuracy = accuracy(predict(r.source_head, data.target, Plane::kTarget), labels);
  r.joint_head = train_supervised(concat(data.source, data.target), config.train);
  r.joint_accuracy = accuracy(predict(r.joint_head, data.target, Plane::kTarget), labels);
  r.fps = adapt(data.source, data.target.without_labels(), config.loss, config.train);
  r.fps_accuracy = accuracy(r.fps.pseudo_labels, labels);
  return r;
}

}  // namespace fps
