#include "cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fps/analysis.hpp"
#include "fps/classifier.hpp"
#include "fps/demo.hpp"
#include "fps/errors.hpp"
#include "fps/feature_store.hpp"
#include "fps/parallel.hpp"
#include "fps/preprocess.hpp"
#include "fps/selection.hpp"
#include "fps/trainer.hpp"
#include "json.hpp"

namespace fps::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kToolVersion = "1.0.0";

struct Params {
  std::string source, target, head, data, other, config, init_head;
  std::string out_dir = "fps_out";
  double alpha = 0, alpha0 = 0, beta = 0, beta0 = 0, lambda = 0, max_lr = 0;
  double std_scale = kDefaultStdScale, weight_sharpness = kDefaultWeightSharpness;
  std::size_t steps = 0, warmup = 0;
  std::uint64_t seed = 0;
  bool sqrt = false;
  std::vector<double> alphas;
  std::string alpha0_rule = "fixed";
  std::string plane = "target";
  std::size_t theta_steps = 72, b_steps = 41, bins = 20;
  double joint_beta = kDefaultJointBeta;
  double b_max = 10.0;
};

// Options registered on the active subcommand; null when not offered there.
struct Flags {
  CLI::Option *alpha = nullptr, *alpha0 = nullptr, *beta = nullptr, *beta0 = nullptr;
  CLI::Option *lambda = nullptr, *max_lr = nullptr, *steps = nullptr, *warmup = nullptr;
  CLI::Option *seed = nullptr, *weight_sharpness = nullptr, *sqrt = nullptr, *std_scale = nullptr;
};

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

struct Settings {
  LossConfig loss;
  TrainConfig train;
  double std_scale = kDefaultStdScale;
  bool sqrt = false;
};

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Defaults, then the JSON config, then explicit flags.
Settings resolve(const Params& p, const Flags& f, Settings s) {
  if (!p.config.empty()) {
    const json j = read_json_file(p.config);
    if (!j.is_object()) throw DataError("config must be a JSON object");
    if (j.contains("loss")) merge_json(j.at("loss"), s.loss);
    if (j.contains("train")) merge_json(j.at("train"), s.train);
    try {
      if (j.contains("seed")) s.train.master_seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("preprocess")) {
        const json& pp = j.at("preprocess");
        if (pp.contains("std_scale")) s.std_scale = pp.at("std_scale").get<double>();
        if (pp.contains("sqrt")) s.sqrt = pp.at("sqrt").get<bool>();
      }
    } catch (const json::exception& e) {
      throw DataError(std::string("bad config: ") + e.what());
    }
  }
  if (given(f.alpha)) s.loss.alpha = p.alpha;
  if (given(f.alpha0)) s.loss.alpha0 = p.alpha0;
  if (given(f.beta)) s.loss.beta = p.beta;
  if (given(f.beta0)) s.loss.beta0 = p.beta0;
  if (given(f.lambda)) s.loss.lambda = p.lambda;
  if (given(f.weight_sharpness)) s.loss.weight_sharpness = p.weight_sharpness;
  if (given(f.max_lr)) s.train.max_lr = p.max_lr;
  if (given(f.steps)) s.train.total_steps = p.steps;
  if (given(f.warmup)) s.train.warmup_steps = p.warmup;
  if (given(f.seed)) s.train.master_seed = p.seed;
  if (given(f.std_scale)) s.std_scale = p.std_scale;
  if (given(f.sqrt)) s.sqrt = p.sqrt;
  if (s.train.warmup_steps > s.train.total_steps) s.train.warmup_steps = s.train.total_steps;
  s.loss.validate();
  s.train.validate();
  return s;
}

void add_training_flags(CLI::App* app, Params& p, Flags& f) {
  f.alpha = app->add_option("--alpha", p.alpha, "Final SE/CE mixing weight");
  f.alpha0 = app->add_option("--alpha0", p.alpha0, "Initial SE/CE mixing weight");
  f.beta = app->add_option("--beta", p.beta, "Final supervised weight");
  f.beta0 = app->add_option("--beta0", p.beta0, "Initial supervised weight parameter");
  f.lambda = app->add_option("--lambda", p.lambda, "Consistency regularization weight");
  f.max_lr = app->add_option("--max-lr", p.max_lr, "Peak learning rate");
  f.steps = app->add_option("--steps", p.steps, "Total optimization steps");
  f.warmup = app->add_option("--warmup", p.warmup, "Linear warmup steps");
  f.seed = app->add_option("--seed", p.seed, "Master seed");
  f.weight_sharpness =
      app->add_option("--weight-sharpness", p.weight_sharpness, "Sample weight sharpness A");
}

void add_preprocess_flags(CLI::App* app, Params& p, Flags& f) {
  f.sqrt = app->add_flag("--sqrt", p.sqrt, "Square-root transform before standardization");
  f.std_scale = app->add_option("--std-scale", p.std_scale, "Target per-dimension std");
}

void add_common(CLI::App* app, Params& p) {
  app->add_option("--config", p.config, "JSON config; explicit flags override it");
  app->add_option("--out-dir", p.out_dir, "Output directory")->capture_default_str();
}

fs::path prepare_out_dir(const Params& p) {
  const fs::path dir(p.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

json input_entry(const fs::path& path, const FeatureSet& set) {
  return {{"path", path.string()},
          {"n_samples", set.n_samples},
          {"dim", set.dim},
          {"n_patches", set.n_patches},
          {"stats_fingerprint", set.stats_fingerprint}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f << std::setw(2) << j << '\n';
}

void write_run_metadata(const fs::path& dir, const std::string& command,
                        const std::vector<std::string>& argv, const Settings& s, json extra) {
  json j;
  j["command"] = command;
  j["argv"] = argv;
  j["tool_version"] = kToolVersion;
  j["seed"] = s.train.master_seed;
  j["loss"] = to_json(s.loss);
  j["train"] = to_json(s.train);
  j["preprocess"] = {{"std_scale", s.std_scale}, {"sqrt", s.sqrt}};
  j["formats"] = {{"container_version", kContainerVersion}, {"head_layout", "row-major"}};
  j["rng_algorithm"] = Rng::kAlgorithm;
  j["threads"] = worker_count();
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_json(dir / "run.json", j);
}

FeatureSet read_set(const std::string& path, const char* flag) {
  if (path.empty()) throw DataError(std::string("missing required ") + flag);
  return read_container(path).first;
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

// ---- subcommands -----------------------------------------------------------

int cmd_preprocess(const Params& p, const Settings& s, const std::vector<std::string>& argv,
                   std::ostream& out) {
  if (p.source.empty() || p.target.empty()) throw DataError("preprocess needs --source and --target");
  auto [src, src_manifest] = read_container(p.source);
  auto [tgt, tgt_manifest] = read_container(p.target);
  const PreprocessStats stats = fit_stats(src, tgt, s.std_scale, s.sqrt);
  const fs::path dir = prepare_out_dir(p);
  write_container(apply_stats(src, stats), src_manifest, dir / "source.fpsb");
  write_container(apply_stats(tgt, stats), tgt_manifest, dir / "target.fpsb");
  write_json(dir / "stats.json", {{"mu", stats.mu},
                                  {"sigma", stats.sigma},
                                  {"s", stats.s},
                                  {"sqrt_applied", stats.sqrt_applied},
                                  {"fingerprint", stats.fingerprint()}});
  write_run_metadata(dir, "preprocess", argv, s,
                     {{"inputs", {input_entry(p.source, src), input_entry(p.target, tgt)}},
                      {"stats_fingerprint", stats.fingerprint()}});
  out << "stats fingerprint " << stats.fingerprint() << "\n";
  return kExitOk;
}

void print_report(const AdaptReport& r, std::ostream& out) {
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  out << "d_intra_hat " << r.d_intra_hat << "\n";
  if (r.target_accuracy) out << "target accuracy " << pct(*r.target_accuracy) << "%\n";
}

int cmd_adapt(const Params& p, const Settings& s, const std::vector<std::string>& argv,
              std::ostream& out) {
  const FeatureSet src = read_set(p.source, "--source");
  const FeatureSet tgt = read_set(p.target, "--target");
  std::optional<DecisionHead> init;
  if (!p.init_head.empty()) init = read_head(p.init_head);
  const AdaptReport report = adapt(src, tgt, s.loss, s.train, init);
  const fs::path dir = prepare_out_dir(p);
  write_head(report.final_head, dir / "head.json");
  write_trace_csv(report.loss_trace, dir / "trace.csv");
  write_json(dir / "report.json", report_json(report));
  write_run_metadata(dir, "adapt", argv, s,
                     {{"inputs", {input_entry(p.source, src), input_entry(p.target, tgt)}}});
  print_report(report, out);
  return kExitOk;
}

int cmd_sweep(const Params& p, const Settings& s, const std::vector<std::string>& argv,
              std::ostream& out) {
  const FeatureSet src = read_set(p.source, "--source");
  const FeatureSet tgt = read_set(p.target, "--target");
  const std::vector<double> grid = p.alphas.empty() ? kDefaultAlphaGrid : p.alphas;
  Alpha0Rule rule = Alpha0Rule::kFixed;
  if (p.alpha0_rule == "half") rule = Alpha0Rule::kHalfAlpha;
  else if (p.alpha0_rule != "fixed") throw DataError("--alpha0-rule must be 'fixed' or 'half'");
  std::optional<std::span<const std::int32_t>> labels;
  if (tgt.labels) labels = std::span<const std::int32_t>(*tgt.labels);
  const SweepResult result = sweep_alpha(src, tgt, grid, s.loss, s.train, rule, labels);
  const fs::path dir = prepare_out_dir(p);
  write_sweep_csv(result, dir / "sweep.csv");
  for (std::size_t k = 0; k < result.table.size(); ++k) {
    if (result.table[k].selected) write_head(result.reports[k].final_head, dir / "head.json");
  }
  write_run_metadata(dir, "sweep", argv, s,
                     {{"inputs", {input_entry(p.source, src), input_entry(p.target, tgt)}},
                      {"alpha_grid", grid},
                      {"alpha0_rule", p.alpha0_rule},
                      {"selected_alpha", result.selected_alpha}});
  out << "alpha      d_intra_hat  accuracy\n";
  for (const auto& row : result.table) {
    out << std::fixed << std::setprecision(2) << std::setw(5) << row.alpha << "  "
        << std::setprecision(6) << std::setw(12) << row.d_intra_hat << "  "
        << (row.target_accuracy ? pct(*row.target_accuracy) + "%" : std::string("n/a"))
        << (row.selected ? "  *" : "") << "\n";
  }
  out.unsetf(std::ios::floatfield);
  out << "selected alpha " << result.selected_alpha << "\n";
  return kExitOk;
}

int cmd_eval(const Params& p, const Settings& s, const std::vector<std::string>& argv,
             std::ostream& out) {
  if (p.head.empty()) throw DataError("eval needs --head");
  const FeatureSet data = read_set(p.data, "--data");
  if (!data.labels) throw DataError("eval needs a labeled container");
  Plane plane = Plane::kTarget;
  if (p.plane == "source") plane = Plane::kSource;
  else if (p.plane != "target") throw DataError("--plane must be 'source' or 'target'");
  const DecisionHead head = read_head(p.head);
  if (head.dim() != data.dim) throw DataError("head dimension does not match the data");
  const double acc = accuracy(predict(head, data, plane), *data.labels);
  const fs::path dir = prepare_out_dir(p);
  write_json(dir / "eval.json", {{"accuracy", acc}, {"plane", p.plane}, {"head", p.head}});
  write_run_metadata(dir, "eval", argv, s, {{"inputs", {input_entry(p.data, data)}}});
  out << "accuracy " << pct(acc) << "%\n";
  return kExitOk;
}

int cmd_demo(const Params& p, const Flags& f, const std::vector<std::string>& argv,
             std::ostream& out) {
  const std::uint64_t seed = given(f.seed) ? p.seed : 42;
  DemoConfig demo = default_demo(seed);
  Settings base{demo.loss, demo.train, demo.std_scale, false};
  const Settings s = resolve(p, f, base);
  demo.loss = s.loss;
  demo.train = s.train;
  demo.std_scale = s.std_scale;
  const DemoResult r = run_demo(demo);
  const fs::path dir = prepare_out_dir(p);
  write_head(r.fps.final_head, dir / "head.json");
  write_trace_csv(r.fps.loss_trace, dir / "trace.csv");
  const json table = {{"source_only", r.source_only_accuracy},
                      {"fps", r.fps_accuracy},
                      {"joint", r.joint_accuracy}};
  write_json(dir / "demo.json", table);
  write_run_metadata(
      dir, "demo", argv, s,
      {{"synthetic",
        {{"classes", demo.spec.classes},
         {"dim", demo.spec.dim},
         {"per_class", demo.spec.per_class},
         {"spread", demo.spec.spread},
         {"shift_translation", demo.spec.shift_translation},
         {"shift_rotation", demo.spec.shift_rotation},
         {"patch_count", demo.spec.patch_count},
         {"patch_noise", demo.spec.patch_noise},
         {"seed", demo.spec.seed}}},
       {"accuracy", table}});
  out << "method        target accuracy\n"
      << "source-only   " << pct(r.source_only_accuracy) << "%\n"
      << "FPS           " << pct(r.fps_accuracy) << "%\n"
      << "joint         " << pct(r.joint_accuracy) << "%\n";
  return kExitOk;
}

int cmd_landscape(const Params& p, const Flags& f, const std::vector<std::string>& argv,
                  std::ostream& out) {
  FeatureSet src, tgt;
  Settings s;
  if (p.source.empty() && p.target.empty()) {
    const DemoConfig demo = default_demo(given(f.seed) ? p.seed : 42);
    s = resolve(p, f, {demo.loss, demo.train, demo.std_scale, false});
    PreparedPair data = prepare(generate(demo.spec), s.std_scale);
    src = std::move(data.source);
    tgt = std::move(data.target);
  } else {
    s = resolve(p, f, Settings{});
    src = read_set(p.source, "--source");
    tgt = read_set(p.target, "--target");
  }
  if (src.dim != 2 || tgt.dim != 2) throw DataError("landscape needs 2-D features");
  if (p.theta_steps == 0 || p.b_steps < 2) throw DataError("landscape grid is too small");
  std::vector<double> thetas(p.theta_steps), bs(p.b_steps);
  for (std::size_t i = 0; i < p.theta_steps; ++i) {
    thetas[i] = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(p.theta_steps);
  }
  for (std::size_t i = 0; i < p.b_steps; ++i) {
    bs[i] = -p.b_max + 2.0 * p.b_max * static_cast<double>(i) / static_cast<double>(p.b_steps - 1);
  }
  const auto cells = landscape_2d(src, tgt, thetas, bs, s.loss, p.joint_beta);
  const fs::path dir = prepare_out_dir(p);
  write_landscape_csv(cells, dir / "landscape.csv");
  write_run_metadata(dir, "landscape", argv, s,
                     {{"theta_steps", p.theta_steps},
                      {"b_steps", p.b_steps},
                      {"b_max", p.b_max},
                      {"joint_beta", p.joint_beta}});
  out << "wrote " << cells.size() << " cells to " << (dir / "landscape.csv").string() << "\n";
  return kExitOk;
}

int cmd_analyze(const Params& p, const Settings& s, const std::vector<std::string>& argv,
                std::ostream& out) {
  const FeatureSet data = read_set(p.data, "--data");
  std::optional<DecisionHead> head;
  if (!p.head.empty()) head = read_head(p.head);
  std::vector<std::int32_t> labels;
  if (data.labels) labels = *data.labels;
  else if (head) labels = predict(*head, data, Plane::kTarget);
  else throw DataError("analyze needs labels in --data or a --head for pseudo-labels");

  std::size_t classes = data.class_count;
  for (auto y : labels) classes = std::max(classes, static_cast<std::size_t>(y + 1));
  const fs::path dir = prepare_out_dir(p);
  write_distance_csv(class_distance_matrix(data, labels, classes), dir / "distance.csv");
  if (!p.other.empty()) {
    const FeatureSet other = read_set(p.other, "--other");
    std::vector<std::int32_t> other_labels;
    if (other.labels) other_labels = *other.labels;
    else if (head) other_labels = predict(*head, other, Plane::kTarget);
    else throw DataError("--other needs labels or a --head");
    for (auto y : other_labels) classes = std::max(classes, static_cast<std::size_t>(y + 1));
    write_distance_csv(class_distance_matrix(data, labels, other, other_labels, classes),
                       dir / "distance_cross.csv");
  }
  if (head) {
    const auto se = sample_entropies(*head, feature_matrix(data));
    write_distribution_csv(distribution_export(se, p.bins, true), dir / "se_histogram.csv",
                           dir / "se_density.csv");
    if (data.has_patches()) {
      Rng rng(s.train.master_seed);
      const PoolingDraws draws =
          draw_pooling_pairs(patch_matrix(data), data.n_patches, s.train.pooling, rng);
      write_distribution_csv(distribution_export(cr_values(*head, draws, false), p.bins, true),
                             dir / "cr_histogram.csv", dir / "cr_density.csv");
      write_distribution_csv(distribution_export(cr_values(*head, draws, true), p.bins, true),
                             dir / "cr_normalized_histogram.csv", dir / "cr_normalized_density.csv");
    }
  }
  write_run_metadata(dir, "analyze", argv, s, {{"inputs", {input_entry(p.data, data)}}});
  out << "wrote analysis to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Feature plane search: adapt a frozen-feature linear head across domains", "fps"};
  app.require_subcommand(1);
  Params p;
  std::map<const CLI::App*, Flags> flag_sets;

  auto* preprocess = app.add_subcommand("preprocess", "Fit shared stats and write processed containers");
  Flags& f_preprocess = flag_sets[preprocess];
  preprocess->add_option("--source", p.source, "Raw source container")->required();
  preprocess->add_option("--target", p.target, "Raw target container")->required();
  add_preprocess_flags(preprocess, p, f_preprocess);
  add_common(preprocess, p);

  auto* adapt_cmd = app.add_subcommand("adapt", "Run FPS on processed containers");
  Flags& f_adapt_cmd = flag_sets[adapt_cmd];
  adapt_cmd->add_option("--source", p.source, "Processed labeled source container")->required();
  adapt_cmd->add_option("--target", p.target, "Processed target container")->required();
  adapt_cmd->add_option("--init-head", p.init_head, "Head JSON to start from");
  add_training_flags(adapt_cmd, p, f_adapt_cmd);
  add_common(adapt_cmd, p);

  auto* sweep = app.add_subcommand("sweep", "Select alpha by estimated intra-class distance");
  Flags& f_sweep = flag_sets[sweep];
  sweep->add_option("--source", p.source, "Processed labeled source container")->required();
  sweep->add_option("--target", p.target, "Processed target container")->required();
  sweep->add_option("--alphas", p.alphas, "Candidate alphas (default grid 0.15..0.95)");
  sweep->add_option("--alpha0-rule", p.alpha0_rule, "fixed | half")->capture_default_str();
  add_training_flags(sweep, p, f_sweep);
  add_common(sweep, p);

  auto* eval = app.add_subcommand("eval", "Score a head on a labeled container");
  flag_sets[eval];
  eval->add_option("--head", p.head, "Head JSON")->required();
  eval->add_option("--data", p.data, "Labeled container")->required();
  eval->add_option("--plane", p.plane, "target | source")->capture_default_str();
  add_common(eval, p);

  auto* demo = app.add_subcommand("demo", "Synthetic shifted demo: source-only vs FPS vs joint");
  Flags& f_demo = flag_sets[demo];
  add_training_flags(demo, p, f_demo);
  add_preprocess_flags(demo, p, f_demo);
  add_common(demo, p);

  auto* landscape = app.add_subcommand("landscape", "Accuracy and loss over a 2-D plane grid");
  Flags& f_landscape = flag_sets[landscape];
  landscape->add_option("--source", p.source, "Processed 2-D source container (default: demo data)");
  landscape->add_option("--target", p.target, "Processed 2-D target container");
  landscape->add_option("--theta-steps", p.theta_steps, "Angles over [0, 2 pi)")->capture_default_str();
  landscape->add_option("--b-steps", p.b_steps, "Offsets over [-b_max, b_max]")->capture_default_str();
  landscape->add_option("--b-max", p.b_max, "Offset range")->capture_default_str();
  landscape->add_option("--joint-beta", p.joint_beta, "Supervised share of the joint loss column")
      ->capture_default_str();
  add_training_flags(landscape, p, f_landscape);
  add_common(landscape, p);

  auto* analyze = app.add_subcommand("analyze", "Class distance matrices and SE/CR distributions");
  Flags& f_analyze = flag_sets[analyze];
  analyze->add_option("--data", p.data, "Container to analyze")->required();
  analyze->add_option("--other", p.other, "Second container for the cross-domain matrix");
  analyze->add_option("--head", p.head, "Head JSON for pseudo-labels and SE/CR");
  analyze->add_option("--bins", p.bins, "Histogram bins")->capture_default_str();
  f_analyze.seed = analyze->add_option("--seed", p.seed, "Seed for the pooling draws");
  add_common(analyze, p);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (demo->parsed()) return cmd_demo(p, f_demo, args, out);
    if (landscape->parsed()) return cmd_landscape(p, f_landscape, args, out);
    const CLI::App* active = app.get_subcommands().front();
    const Settings s = resolve(p, flag_sets[active], Settings{});
    if (preprocess->parsed()) return cmd_preprocess(p, s, args, out);
    if (adapt_cmd->parsed()) return cmd_adapt(p, s, args, out);
    if (sweep->parsed()) return cmd_sweep(p, s, args, out);
    if (eval->parsed()) return cmd_eval(p, s, args, out);
    if (analyze->parsed()) return cmd_analyze(p, s, args, out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace fps::cli
