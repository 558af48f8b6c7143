#include <fstream>
#include <sstream>

#include "fps/demo.hpp"
#include "fps/errors.hpp"
#include "fps/trainer.hpp"
#include "support.hpp"

using namespace fps;

namespace {

PreparedPair blobs(std::uint64_t seed, std::size_t classes, std::size_t per_class, double rotation = 0.0) {
  ShiftSpec spec;
  spec.classes = classes;
  spec.dim = 2;
  spec.per_class = per_class;
  spec.patch_count = 3;
  spec.patch_noise = 0.3;
  spec.shift_rotation = rotation;
  spec.seed = seed;
  return prepare(generate(spec));
}

TrainConfig short_run(std::size_t steps) {
  TrainConfig c;
  c.total_steps = steps;
  c.warmup_steps = steps / 10;
  c.log_every = 10;
  c.master_seed = 3;
  return c;
}

LossConfig supervised_only() {
  LossConfig c;
  c.beta = 1.0;
  c.beta0 = 1.0;
  return c;
}

}  // namespace

TEST_CASE("learning rate ramps linearly then holds") {
  TrainConfig c;
  c.max_lr = 1.0;
  c.total_steps = 10;
  c.warmup_steps = 4;
  const std::vector<double> want = {0.25, 0.5, 0.75, 1.0, 1.0, 1.0};
  for (std::size_t t = 0; t < want.size(); ++t) CHECK(learning_rate(c, t) == want[t]);
  c.warmup_steps = 0;
  CHECK(learning_rate(c, 0) == 1.0);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.max_lr = 0.0;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = TrainConfig{};
  c.warmup_steps = c.total_steps + 1;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = TrainConfig{};
  c.batch_mode = BatchMode::kMinibatch;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = TrainConfig{};
  c.log_every = 0;
  CHECK_THROWS_AS(c.validate(), DataError);
}

TEST_CASE("zero steps returns the initial head untouched") {
  const PreparedPair d = blobs(1, 2, 20);
  TrainConfig c = short_run(0);
  const AdaptReport r = adapt(d.source, d.target, LossConfig{}, c);
  CHECK(fps::testing::same_head_bits(r.final_head, DecisionHead::zeros(2, 2)));
  REQUIRE(r.loss_trace.size() == 1);
  CHECK(r.loss_trace[0].step == 0);
}

TEST_CASE("supervised-only run on separable data decreases the loss monotonically") {
  const PreparedPair d = blobs(2, 2, 50);
  TrainConfig c = short_run(300);
  c.warmup_steps = 0;
  c.max_lr = 0.5;
  c.log_every = 1;
  const AdaptReport r = adapt(d.source, d.target, supervised_only(), c);
  REQUIRE(r.loss_trace.size() == 301);
  for (std::size_t k = 1; k < r.loss_trace.size(); ++k) {
    CHECK(r.loss_trace[k].parts.total <= r.loss_trace[k - 1].parts.total + 1e-12);
  }
  CHECK(accuracy(predict(r.final_head, d.source, Plane::kSource), *d.source.labels) == 1.0);
  // Only the supervised term acts, and it never touches the target plane shift.
  CHECK(r.final_head.dW.isZero(0.0));
  CHECK(r.final_head.db.isZero(0.0));
}

TEST_CASE("identical seeds give bit-identical heads and traces") {
  const PreparedPair d = blobs(3, 3, 30, 0.3);
  for (BatchMode mode : {BatchMode::kFull, BatchMode::kMinibatch}) {
    TrainConfig c = short_run(3500);
    c.batch_mode = mode;
    c.batch_size = 16;
    const AdaptReport a = adapt(d.source, d.target, LossConfig{}, c);
    const AdaptReport b = adapt(d.source, d.target, LossConfig{}, c);
    CHECK(fps::testing::same_head_bits(a.final_head, b.final_head));
    REQUIRE(a.loss_trace.size() == b.loss_trace.size());
    for (std::size_t k = 0; k < a.loss_trace.size(); ++k) {
      CHECK(std::bit_cast<std::uint64_t>(a.loss_trace[k].parts.total) ==
            std::bit_cast<std::uint64_t>(b.loss_trace[k].parts.total));
    }
    c.master_seed += 1;
    const AdaptReport other = adapt(d.source, d.target, LossConfig{}, c);
    CHECK_FALSE(fps::testing::same_head_bits(a.final_head, other.final_head));
  }
}

TEST_CASE("target labels have no influence on the optimization") {
  const PreparedPair d = blobs(4, 2, 30, 0.4);
  FeatureSet scrambled = d.target;
  for (auto& y : *scrambled.labels) y = 1 - y;
  const TrainConfig c = short_run(3500);
  const AdaptReport a = adapt(d.source, d.target, LossConfig{}, c);
  const AdaptReport b = adapt(d.source, scrambled, LossConfig{}, c);
  const AdaptReport u = adapt(d.source, d.target.without_labels(), LossConfig{}, c);
  CHECK(fps::testing::same_head_bits(a.final_head, b.final_head));
  CHECK(fps::testing::same_head_bits(a.final_head, u.final_head));
  CHECK(a.target_accuracy.has_value());
  CHECK_FALSE(u.target_accuracy.has_value());
  CHECK(*a.target_accuracy + *b.target_accuracy == doctest::Approx(1.0));
}

TEST_CASE("mismatched preprocessing fingerprints are refused with both values named") {
  PreparedPair d = blobs(5, 2, 10);
  d.target.stats_fingerprint = "deadbeefdeadbeef";
  CHECK_THROWS_WITH_AS(adapt(d.source, d.target, LossConfig{}, short_run(10)),
                       doctest::Contains("deadbeefdeadbeef"), DataError);
  try {
    adapt(d.source, d.target, LossConfig{}, short_run(10));
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(d.source.stats_fingerprint) != std::string::npos);
  }
}

TEST_CASE("a target without patches disables CR with a warning") {
  PreparedPair d = blobs(6, 2, 10);
  d.target.n_patches = 0;
  d.target.patch_features.clear();
  const AdaptReport r = adapt(d.source, d.target, LossConfig{}, short_run(50));
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("CR term disabled") != std::string::npos);
  for (const auto& row : r.loss_trace) CHECK(row.parts.cr == 0.0);
}

TEST_CASE("divergent learning rate raises a numerical error") {
  Rng rng(7);
  FeatureSet s = fps::testing::random_set(rng, 20, 3, 0, 3, true);
  for (auto& v : s.features) v *= 1e30f;
  const FeatureSet t = fps::testing::random_set(rng, 20, 3, 0, 3, false);
  TrainConfig c = short_run(50);
  c.max_lr = 1e300;
  c.warmup_steps = 0;
  CHECK_THROWS_AS(adapt(s, t, supervised_only(), c), NumericalError);
}

TEST_CASE("joint training on a separable union reaches full accuracy") {
  const PreparedPair d = blobs(8, 2, 40, 0.2);
  const FeatureSet u = concat(d.source, d.target);
  CHECK(u.n_samples == 160);
  CHECK(u.domain_tag == "joint");
  CHECK(u.stats_fingerprint == d.source.stats_fingerprint);
  TrainConfig c = short_run(2000);
  const DecisionHead h = train_supervised(u, c);
  CHECK(accuracy(predict(h, u, Plane::kSource), *u.labels) == 1.0);
}

TEST_CASE("supervised training refuses unlabeled data") {
  Rng rng(9);
  const FeatureSet s = fps::testing::random_set(rng, 5, 2, 0, 2, false);
  CHECK_THROWS_AS(train_supervised(s, short_run(10)), DataError);
}

TEST_CASE("on the demo shift FPS beats the source-only head") {
  const DemoConfig demo = default_demo(42);
  const PreparedPair d = prepare(generate(demo.spec), demo.std_scale);
  const DecisionHead src = train_supervised(d.source, demo.train);
  const double src_acc = accuracy(predict(src, d.target, Plane::kSource), *d.target.labels);
  const AdaptReport r = adapt(d.source, d.target.without_labels(), demo.loss, demo.train);
  const double fps_acc = accuracy(predict(r.final_head, d.target, Plane::kTarget), *d.target.labels);
  CHECK(fps_acc > src_acc);
  CHECK(r.d_intra_hat > 0.0);
  CHECK(r.pseudo_labels.size() == d.target.n_samples);
}

TEST_CASE("config JSON round-trips and partial merges touch only given keys") {
  LossConfig l;
  l.alpha = 0.3;
  l.sign = SignConvention::kPrinted;
  l.beta_schedule = BetaSchedule::kInterpolating;
  l.use_cr = false;
  LossConfig l2;
  merge_json(to_json(l), l2);
  CHECK(to_json(l2) == to_json(l));

  TrainConfig t;
  t.batch_mode = BatchMode::kMinibatch;
  t.pooling = PoolingMode::kSquaredUniform;
  t.total_steps = 77;
  TrainConfig t2;
  merge_json(to_json(t), t2);
  CHECK(t2.total_steps == 77);
  CHECK(t2.batch_mode == BatchMode::kMinibatch);
  CHECK(t2.pooling == PoolingMode::kSquaredUniform);

  LossConfig partial;
  merge_json(nlohmann::json{{"lambda", 0.25}}, partial);
  CHECK(partial.lambda == 0.25);
  CHECK(partial.alpha == LossConfig{}.alpha);

  CHECK_THROWS_AS(merge_json(nlohmann::json{{"sign", "sideways"}}, partial), DataError);
  CHECK_THROWS_AS(merge_json(nlohmann::json{{"alpha", "high"}}, partial), DataError);
  CHECK(to_json(TrainConfig{}).at("rng_algorithm") == Rng::kAlgorithm);
}

TEST_CASE("trace CSV has the documented header and one row per logged step") {
  fps::testing::TempDir dir("trace");
  const PreparedPair d = blobs(10, 2, 10);
  const AdaptReport r = adapt(d.source, d.target, LossConfig{}, short_run(25));
  CHECK(r.loss_trace.size() == 4);  // 0, 10, 20 and the final 25
  write_trace_csv(r.loss_trace, dir / "trace.csv");
  std::ifstream f(dir / "trace.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "step,L_total,L_SCE,L_SE,L_CE,L_CR,L_delta,alpha_t,beta_t,gamma_t");
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == r.loss_trace.size());

  const nlohmann::json j = report_json(r);
  CHECK(j.contains("d_intra_hat"));
  CHECK(j["pseudo_label_counts"].size() == 2);
}
