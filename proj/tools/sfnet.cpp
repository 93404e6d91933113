#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfnet/ablate.hpp"
#include "sfnet/checkpoint.hpp"
#include "sfnet/config.hpp"
#include "sfnet/data.hpp"
#include "sfnet/gradcheck.hpp"
#include "sfnet/metrics.hpp"
#include "sfnet/model.hpp"
#include "sfnet/pnm.hpp"
#include "sfnet/train.hpp"
#include "sfnet/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sfnet;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

int report_error(const char* kind, int code, const std::string& message) {
  std::cerr << json({{"error", kind}, {"exit_code", code}, {"message", one_line(message)}}).dump()
            << std::endl;
  return code;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
}

json parse_json(const std::string& text, const fs::path& path) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<int> parse_shape(const std::string& text) {
  std::vector<int> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      dims.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--shape: '" + text + "' is not HxW or NxCxHxW with positive integers");
    }
  }
  if (dims.size() != 2 && dims.size() != 4) {
    throw ConfigError("--shape: '" + text + "' is not HxW or NxCxHxW");
  }
  return dims;
}

// The run config for a checkpoint: an explicit --config, or the config.json
// written next to the checkpoint by `train`.
RunConfig config_for_checkpoint(const fs::path& checkpoint, const std::string& config_path) {
  const fs::path path = config_path.empty() ? checkpoint.parent_path() / "config.json"
                                            : fs::path(config_path);
  if (!fs::exists(path)) {
    throw ConfigError("no model config for " + checkpoint.string() + " (looked for " +
                      path.string() + "; pass --config)");
  }
  return run_config_from_json(parse_json(read_text(path), path));
}

ParamStore load_model(const fs::path& checkpoint, const ModelConfig& cfg) {
  ParamStore params = build_params(cfg, 0);
  assign_params(params, load_checkpoint(checkpoint));
  return params;
}

json latency_json(const LatencyStats& s) {
  return {{"mean_ms", s.mean_ms}, {"median_ms", s.median_ms}, {"stddev_ms", s.stddev_ms},
          {"fps", s.fps}, {"runs", s.runs}, {"batch", s.batch}, {"samples_ms", s.samples_ms}};
}

json env_json(const EnvironmentFingerprint& e) {
  return {{"threads", e.threads}, {"compiler", e.compiler}, {"build_flags", e.build_flags},
          {"cpu", e.cpu}};
}

json eval_json(const EvalResult& e) {
  json per_class = json::array();
  for (std::size_t c = 0; c < e.per_class.size(); ++c) {
    per_class.push_back(e.present[c] ? json(e.per_class[c]) : json(nullptr));
  }
  return {{"miou", e.miou}, {"pixel_accuracy", e.pixel_accuracy}, {"per_class_iou", per_class}};
}

struct GenArgs {
  std::uint64_t seed = 42;
  int count = 250;
  int val_count = 50;
  int size = 64;
  int classes = 5;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  GenOptions opt;
  opt.seed = a.seed;
  opt.count = a.count;
  opt.val_count = a.val_count;
  opt.size = a.size;
  opt.num_classes = a.classes;
  const DatasetManifest m = gen_synthetic(a.out, opt);
  std::cout << json({{"out", a.out}, {"count", m.count}, {"train", m.train.size()},
                     {"val", m.val.size()}, {"size", m.width}, {"classes", m.num_classes},
                     {"seed", m.seed}})
                   .dump()
            << std::endl;
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  bool no_fam = false;
  bool no_ppm = false;
  std::optional<int> fam_k;
  std::optional<std::string> upsample;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  bool verbose = false;
};

int cmd_train(const TrainArgs& a) {
  json raw = json::object();
  std::string source;
  if (!a.config.empty()) {
    source = read_text(a.config);
    raw = parse_json(source, a.config);
  }
  RunConfig rc = run_config_from_json(raw);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (a.no_fam) rc.model.use_fam = false;
  if (a.no_ppm) rc.model.use_ppm = false;
  if (a.fam_k) rc.model.fam.kernel_size = *a.fam_k;
  if (a.upsample) rc.model.fam.upsample_mode = parse_upsample_mode(*a.upsample);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.iters) rc.train.total_iters = *a.iters;
  if (rc.data.empty()) throw ConfigError("train: no dataset (pass --data or set \"data\")");
  if (rc.out.empty()) throw ConfigError("train: no output directory (pass --out or set \"out\")");

  const Dataset data = Dataset::load(rc.data);
  const bool classes_given = raw.contains("model") && raw["model"].is_object() &&
                             raw["model"].contains("num_classes");
  if (!classes_given) rc.model.num_classes = data.num_classes();
  rc.validate();

  const fs::path out = rc.out;
  make_dirs(out);
  if (!a.config.empty()) write_text(out / "config.source.json", source);
  write_text(out / "config.json", to_json(rc).dump(2) + "\n");

  TrainOptions opt;
  opt.out_dir = out;
  opt.verbose = a.verbose;
  const TrainResult r = train_loop(data, rc.model, rc.train, opt);
  json summary = {{"out", rc.out},
                  {"iters", rc.train.total_iters},
                  {"final_miou", r.final_miou},
                  {"best_miou", r.best_miou},
                  {"best_iter", r.best_iter},
                  {"final_loss", r.losses.empty() ? json(nullptr) : json(r.losses.back())},
                  {"gflops", count_flops(rc.model, rc.train.crop_size, rc.train.crop_size).gflops()}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << std::endl;
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::string data;
  std::string report;
  std::string split = "val";
  int runs = 5;
};

int cmd_eval(const EvalArgs& a) {
  const RunConfig rc = config_for_checkpoint(a.checkpoint, a.config);
  const std::string data_dir = a.data.empty() ? rc.data : a.data;
  if (data_dir.empty()) throw ConfigError("eval: no dataset (pass --data)");
  const Dataset data = Dataset::load(data_dir);
  if (data.num_classes() != rc.model.num_classes) {
    throw ConfigError("eval: dataset has " + std::to_string(data.num_classes()) +
                      " classes but the model predicts " + std::to_string(rc.model.num_classes));
  }
  const ParamStore params = load_model(a.checkpoint, rc.model);
  const DatasetManifest& m = data.manifest();
  std::vector<int> indices;
  if (a.split == "val") {
    indices = m.val;
  } else if (a.split == "train") {
    indices = m.train;
  } else {
    for (int i = 0; i < m.count; ++i) indices.push_back(i);
  }
  if (indices.empty()) throw ConfigError("eval: split '" + a.split + "' is empty");
  const EvalResult e = evaluate(params, rc.model, data, indices);
  const LatencyStats lat =
      benchmark_forward(params, rc.model, Shape{1, 3, m.height, m.width}, 1, a.runs);
  json report = eval_json(e);
  report["checkpoint"] = a.checkpoint;
  report["data"] = data_dir;
  report["split"] = a.split;
  report["samples"] = indices.size();
  report["gflops"] = count_flops(rc.model, m.height, m.width).gflops();
  report["latency"] = latency_json(lat);
  report["environment"] = env_json(lat.env);
  report["model"] = to_json(rc.model);
  if (!a.report.empty()) {
    const fs::path path = a.report;
    if (path.has_parent_path()) make_dirs(path.parent_path());
    write_text(path, report.dump(2) + "\n");
  }
  std::cout << json({{"miou", e.miou}, {"pixel_accuracy", e.pixel_accuracy},
                     {"samples", indices.size()}})
                   .dump()
            << std::endl;
  return kOk;
}

struct GradcheckArgs {
  std::string scope = "all";
  int seeds = 10;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::vector<std::string> suites;
  if (a.scope == "all") {
    suites = gradcheck_suite_names();
  } else {
    suites.push_back(a.scope);
  }
  bool ok = true;
  for (const std::string& name : suites) {
    const SuiteResult r = run_gradcheck_suite(name, a.seeds);
    const bool pass = r.report.max_rel_err < a.tolerance;
    ok = ok && pass;
    std::printf("%-10s max_rel_err %.3e  probes %zu  skipped %zu  seeds %d  %.2f s  %s\n",
                name.c_str(), r.report.max_rel_err, r.report.probes, r.report.skipped, r.seeds,
                r.seconds, pass ? "PASS" : "FAIL");
    if (!pass) std::printf("           worst %s\n", r.report.worst.c_str());
  }
  std::fflush(stdout);
  if (!ok) {
    return report_error("numeric", kNumeric,
                        "gradient check exceeded tolerance " + std::to_string(a.tolerance));
  }
  return kOk;
}

struct BenchArgs {
  std::string checkpoint;
  std::string config;
  std::string shape = "1x3x64x64";
  int runs = 20;
  int warmup = 3;
  bool compare = false;
  std::string report;
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchArgs& a) {
  ModelConfig cfg;
  ParamStore params;
  if (!a.checkpoint.empty()) {
    cfg = config_for_checkpoint(a.checkpoint, a.config).model;
    params = load_model(a.checkpoint, cfg);
  } else {
    if (!a.config.empty()) {
      cfg = run_config_from_json(parse_json(read_text(a.config), a.config)).model;
    }
    cfg.validate();
    params = build_params(cfg, a.seed);
  }
  const std::vector<int> d = parse_shape(a.shape);
  const Shape shape = d.size() == 2 ? Shape{1, 3, d[0], d[1]} : Shape{d[0], d[1], d[2], d[3]};
  cfg.validate_input(shape.h, shape.w);
  json report = {{"shape", {shape.n, shape.c, shape.h, shape.w}},
                 {"gflops", count_flops(cfg, shape.h, shape.w).gflops() * shape.n},
                 {"model", to_json(cfg)}};
  if (a.compare) {
    ModelConfig candidate = cfg;
    candidate.use_fam = true;
    ModelConfig baseline = cfg;
    baseline.use_fam = false;
    const LatencyComparison c = compare_forward(params, candidate, baseline, shape, a.warmup, a.runs);
    report["fam"] = latency_json(c.candidate);
    report["bilinear"] = latency_json(c.baseline);
    report["fam_overhead"] = c.overhead;
    report["environment"] = env_json(c.candidate.env);
    std::printf("fam %.3f ms  bilinear %.3f ms (medians of %d)  overhead %+.1f%%\n",
                c.candidate.median_ms, c.baseline.median_ms, a.runs, 100.0 * c.overhead);
  } else {
    const LatencyStats s = benchmark_forward(params, cfg, shape, a.warmup, a.runs);
    report["latency"] = latency_json(s);
    report["environment"] = env_json(s.env);
    std::printf("mean %.3f ms  median %.3f ms  stddev %.3f ms  %.1f FPS\n", s.mean_ms, s.median_ms,
                s.stddev_ms, s.fps);
  }
  if (!a.report.empty()) write_text(a.report, report.dump(2) + "\n");
  std::cout << report["environment"].dump() << std::endl;
  return kOk;
}

struct VizArgs {
  std::string checkpoint;
  std::string config;
  std::string image;
  std::string label;
  std::string out_dir;
  std::vector<std::string> levels;
  int arrow_stride = 4;
  std::optional<double> max_mag;
};

int cmd_viz(const VizArgs& a) {
  const ModelConfig cfg = config_for_checkpoint(a.checkpoint, a.config).model;
  const ParamStore params = load_model(a.checkpoint, cfg);
  const RasterImage raster = read_ppm(a.image);
  cfg.validate_input(raster.height, raster.width);
  std::optional<LabelMap> gt;
  if (!a.label.empty()) gt = read_sample(a.image, a.label, cfg.num_classes).label;
  const fs::path out = a.out_dir;
  make_dirs(out);

  NoGradGuard no_grad;
  const ModelOutput result = model_forward(image_tensor(raster), params, cfg, Mode::kEval);
  const LabelMap pred = argmax_labels(result.logits);
  const std::vector<Rgb> palette = default_palette(cfg.num_classes);
  std::vector<std::string> written;
  auto emit = [&](const RasterImage& img, const std::string& name) {
    write_ppm(img, out / name);
    written.push_back(name);
  };
  emit(raster, "input.ppm");
  emit(label_image(pred, palette), "prediction.ppm");
  if (gt) {
    emit(label_image(*gt, palette), "ground_truth.ppm");
    emit(error_map(pred, *gt, palette), "error_map.ppm");
  }
  for (int l = 2; l <= 5; ++l) {
    emit(feature_heatmap(result.pyramid.level(l)), "feature_F" + std::to_string(l) + ".ppm");
  }
  for (int l = 2; l <= 4; ++l) {
    const Tensor& refined = result.pyramid.refined_level(l);
    if (refined.numel() > 0) {
      emit(feature_heatmap(refined), "feature_aligned_F" + std::to_string(l) + ".ppm");
    }
  }
  std::vector<std::string> unknown = a.levels;
  for (const auto& [name, field] : result.flows) {
    if (!a.levels.empty() && std::find(a.levels.begin(), a.levels.end(), name) == a.levels.end()) {
      continue;
    }
    std::erase(unknown, name);
    const Tensor view = upsample_flow_for_view(field.tensor(), raster.height, raster.width);
    emit(flow_to_color(view, a.max_mag), "flow_" + name + "_color.ppm");
    const double ratio = static_cast<double>(raster.width) / field.width();
    emit(flow_arrows(view, a.arrow_stride, ratio), "flow_" + name + "_arrows.ppm");
  }
  if (!unknown.empty()) {
    std::string names;
    for (const auto& [name, field] : result.flows) names += (names.empty() ? "" : ", ") + name;
    throw ConfigError("viz: unknown flow level '" + unknown.front() + "' (available: " +
                      (names.empty() ? "none, FAM is disabled" : names) + ")");
  }
  std::cout << json({{"out_dir", a.out_dir}, {"files", written}}).dump() << std::endl;
  return kOk;
}

struct AblateArgs {
  std::string data;
  std::string out;
  std::string config;
  std::optional<int> iters;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<int> kernel_sizes{1, 3, 5, 7};
  std::vector<std::uint64_t> kernel_seeds{1};
  bool no_kernel_grid = false;
  bool no_baseline = false;
  bool verbose = false;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig rc;
  if (!a.config.empty()) rc = run_config_from_json(parse_json(read_text(a.config), a.config));
  const Dataset data = Dataset::load(a.data);
  rc.model.num_classes = data.num_classes();
  if (a.iters) rc.train.total_iters = *a.iters;
  rc.data = a.data;
  rc.out = a.out;
  rc.validate();
  make_dirs(a.out);
  write_text(fs::path(a.out) / "config.json", to_json(rc).dump(2) + "\n");
  AblationOptions opt;
  opt.out_dir = a.out;
  opt.model = rc.model;
  opt.train = rc.train;
  opt.seeds = a.seeds;
  opt.kernel_sizes = a.kernel_sizes;
  opt.kernel_seeds = a.kernel_seeds;
  opt.baseline_grid = !a.no_baseline;
  opt.kernel_grid = !a.no_kernel_grid;
  opt.verbose = a.verbose;
  const AblationResult r = run_ablation(data, opt);
  std::cout << ablation_table(r) << std::flush;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sfnet: flow-aligned FPN segmentation on CPU"};
  app.require_subcommand(1);
  int code = kOk;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic segmentation dataset");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--n", gen.count, "Number of samples")->capture_default_str();
  gen_cmd->add_option("--val", gen.val_count, "Samples held out for validation")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes, "Classes including background")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->callback([&] { code = cmd_gen_data(gen); });

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "JSON run config");
  train_cmd->add_option("--data", tr.data, "Dataset directory");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_flag("--no-fam", tr.no_fam, "Use plain bilinear upsampling in the decoder");
  train_cmd->add_flag("--no-ppm", tr.no_ppm, "Replace the pyramid pooling head by a 1x1 conv");
  train_cmd->add_option("--fam-k", tr.fam_k, "FAM flow kernel size")
      ->check(CLI::IsMember({1, 3, 5, 7}));
  train_cmd->add_option("--upsample", tr.upsample, "FAM coarse-map upsampling")
      ->check(CLI::IsMember({"bilinear", "nearest"}));
  train_cmd->add_option("--seed", tr.seed, "Training seed");
  train_cmd->add_option("--iters", tr.iters, "Total iterations");
  train_cmd->add_flag("-v,--verbose", tr.verbose, "Progress on stderr");
  train_cmd->callback([&] { code = cmd_train(tr); });

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--config", ev.config, "Run config (default: config.json beside the checkpoint)");
  eval_cmd->add_option("--data", ev.data, "Dataset directory");
  eval_cmd->add_option("--out-report", ev.report, "JSON report path");
  eval_cmd->add_option("--split", ev.split, "Samples to evaluate")
      ->check(CLI::IsMember({"val", "train", "all"}))
      ->capture_default_str();
  eval_cmd->add_option("--runs", ev.runs, "Timed forward passes for latency")
      ->check(CLI::Range(3, 100000))
      ->capture_default_str();
  eval_cmd->callback([&] { code = cmd_eval(ev); });

  GradcheckArgs gc;
  std::vector<std::string> scopes = gradcheck_suite_names();
  scopes.push_back("all");
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc_cmd->add_option("--scope", gc.scope, "Suite to run")
      ->check(CLI::IsMember(scopes))
      ->capture_default_str();
  gc_cmd->add_option("--seeds", gc.seeds, "Seeds per suite")
      ->check(CLI::Range(1, 1000))
      ->capture_default_str();
  gc_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  gc_cmd->callback([&] { code = cmd_gradcheck(gc); });

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Time eval-mode forward passes");
  bench_cmd->add_option("--checkpoint", bn.checkpoint, "Checkpoint file (default: fresh weights)");
  bench_cmd->add_option("--config", bn.config, "Run config");
  bench_cmd->add_option("--shape", bn.shape, "HxW or NxCxHxW")->capture_default_str();
  bench_cmd->add_option("--runs", bn.runs, "Timed runs (rounds with --compare)")
      ->check(CLI::Range(3, 100000))
      ->capture_default_str();
  bench_cmd->add_option("--warmup", bn.warmup, "Untimed runs")->capture_default_str();
  bench_cmd->add_flag("--compare", bn.compare, "Interleave FAM and bilinear decoders");
  bench_cmd->add_option("--report", bn.report, "JSON report path");
  bench_cmd->add_option("--seed", bn.seed, "Init seed without a checkpoint")->capture_default_str();
  bench_cmd->callback([&] { code = cmd_bench(bn); });

  VizArgs vz;
  auto* viz_cmd = app.add_subcommand("viz", "Render predictions, flows and feature maps");
  viz_cmd->add_option("--checkpoint", vz.checkpoint, "Checkpoint file")->required();
  viz_cmd->add_option("--config", vz.config, "Run config (default: config.json beside the checkpoint)");
  viz_cmd->add_option("--image", vz.image, "Input PPM")->required();
  viz_cmd->add_option("--label", vz.label, "Ground-truth PGM for the error map");
  viz_cmd->add_option("--out-dir", vz.out_dir, "Output directory")->required();
  viz_cmd->add_option("--level", vz.levels, "FAM to render, e.g. l3 or fuse5 (default: all)");
  viz_cmd->add_option("--arrow-stride", vz.arrow_stride, "Arrow spacing in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  viz_cmd->add_option("--max-mag", vz.max_mag, "Flow magnitude of full saturation");
  viz_cmd->callback([&] { code = cmd_viz(vz); });

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the FAM/PPM and kernel-size grids");
  ablate_cmd->add_option("--data", ab.data, "Dataset directory")->required();
  ablate_cmd->add_option("--out", ab.out, "Output directory")->required();
  ablate_cmd->add_option("--config", ab.config, "Base run config");
  ablate_cmd->add_option("--iters", ab.iters, "Iterations per run");
  ablate_cmd->add_option("--seeds", ab.seeds, "Seeds of the FAM/PPM grid")->delimiter(',');
  ablate_cmd->add_option("--k-grid", ab.kernel_sizes, "FAM kernel sizes")
      ->delimiter(',')
      ->check(CLI::IsMember({1, 3, 5, 7}));
  ablate_cmd->add_option("--k-seeds", ab.kernel_seeds, "Seeds of the kernel grid")->delimiter(',');
  ablate_cmd->add_flag("--no-k-grid", ab.no_kernel_grid, "Skip the kernel-size grid");
  ablate_cmd->add_flag("--no-baseline", ab.no_baseline, "Skip the FAM/PPM grid");
  ablate_cmd->add_flag("-v,--verbose", ab.verbose, "Progress on stderr");
  ablate_cmd->callback([&] { code = cmd_ablate(ab); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("config", kConfig, e.what());
  } catch (const ConfigError& e) {
    return report_error("config", kConfig, e.what());
  } catch (const ShapeError& e) {
    return report_error("config", kConfig, e.what());
  } catch (const NumericError& e) {
    return report_error("numeric", kNumeric, e.what());
  } catch (const IoError& e) {
    return report_error("io", kIo, e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error("io", kIo, e.what());
  } catch (const std::exception& e) {
    return report_error("internal", kFailure, e.what());
  }
  return code;
}
