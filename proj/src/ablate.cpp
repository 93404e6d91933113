#include "sfnet/ablate.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "sfnet/config.hpp"
#include "sfnet/pnm.hpp"

namespace sfnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string run_tag(bool use_fam, bool use_ppm, int k) {
  std::string tag = use_fam ? "fam" : "bilinear";
  tag += use_ppm ? "_ppm" : "_noppm";
  if (use_fam) tag += "_k" + std::to_string(k);
  return tag;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

json row_json(const AblationRow& r) {
  return {{"config", r.config}, {"group", r.group}, {"use_fam", r.use_fam},
          {"use_ppm", r.use_ppm}, {"fam_k", r.fam_k}, {"seed", r.seed},
          {"miou", r.miou}, {"best_miou", r.best_miou}, {"pixel_accuracy", r.pixel_accuracy},
          {"gflops", r.gflops}, {"gflops_1024", r.gflops_1024}, {"seconds", r.seconds}};
}

}  // namespace

std::string ablation_name(bool use_fam, bool use_ppm) {
  std::string name = "FPN";
  if (use_fam) name += "+FAM";
  if (use_ppm) name += "+PPM";
  if (!use_fam) name += " (bilinear)";
  return name;
}

double AblationResult::mean_miou(const std::string& config, const std::string& group) const {
  for (const auto& s : summary) {
    if (s.config == config && s.group == group) return s.mean_miou;
  }
  throw std::out_of_range("no ablation summary for " + config + " / " + group);
}

AblationResult run_ablation(const Dataset& data, const AblationOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(options.out_dir / "runs", ec);
  if (ec) throw IoError((options.out_dir / "runs").string() + ": " + ec.message());
  const int size = options.train.crop_size;

  std::map<std::string, AblationRow> done;
  auto train_one = [&](bool use_fam, bool use_ppm, int k, std::uint64_t seed) {
    const std::string key = run_tag(use_fam, use_ppm, k) + "_s" + std::to_string(seed);
    if (auto it = done.find(key); it != done.end()) return it->second;
    ModelConfig m = options.model;
    m.use_fam = use_fam;
    m.use_ppm = use_ppm;
    m.fam.kernel_size = k;
    TrainConfig t = options.train;
    t.seed = seed;
    RunConfig rc;
    rc.model = m;
    rc.train = t;
    rc.data = data.root().string();
    const fs::path dir = options.out_dir / "runs" / key;
    rc.out = dir.string();
    fs::create_directories(dir, ec);
    write_text(dir / "config.json", to_json(rc).dump(2) + "\n");
    if (options.verbose) std::cerr << "[ablate] training " << key << "\n";
    const auto r0 = std::chrono::steady_clock::now();
    TrainOptions topt;
    topt.out_dir = dir;
    topt.verbose = options.verbose;
    const TrainResult tr = train_loop(data, m, t, topt);
    AblationRow row;
    row.config = ablation_name(use_fam, use_ppm);
    row.use_fam = use_fam;
    row.use_ppm = use_ppm;
    row.fam_k = k;
    row.seed = seed;
    row.miou = tr.final_miou;
    row.best_miou = tr.best_miou;
    row.pixel_accuracy = tr.final_eval.pixel_accuracy;
    row.gflops = count_flops(m, size, size).gflops();
    row.gflops_1024 = count_flops(m, 1024, 1024).gflops();
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
    write_text(dir / "result.json", row_json(row).dump(2) + "\n");
    if (options.verbose) {
      std::cerr << "[ablate] " << key << " mIoU " << row.miou << " (" << row.seconds << " s)\n";
    }
    done.emplace(key, row);
    return row;
  };

  AblationResult result;
  const int default_k = options.model.fam.kernel_size;
  if (options.baseline_grid) {
    for (bool use_ppm : {false, true}) {
      for (bool use_fam : {false, true}) {
        for (std::uint64_t seed : options.seeds) {
          AblationRow row = train_one(use_fam, use_ppm, default_k, seed);
          row.group = "baseline";
          result.rows.push_back(row);
        }
      }
    }
  }
  if (options.kernel_grid) {
    for (int k : options.kernel_sizes) {
      for (std::uint64_t seed : options.kernel_seeds) {
        AblationRow row = train_one(true, true, k, seed);
        row.group = "kernel";
        result.rows.push_back(row);
      }
    }
  }

  for (const AblationRow& r : result.rows) {
    auto it = std::find_if(result.summary.begin(), result.summary.end(), [&](const auto& s) {
      return s.group == r.group && s.config == r.config && s.fam_k == r.fam_k;
    });
    if (it == result.summary.end()) {
      result.summary.push_back({r.config, r.group, r.fam_k, 0, 0.0, r.gflops, r.gflops_1024});
      it = result.summary.end() - 1;
    }
    it->mean_miou = (it->mean_miou * it->runs + r.miou) / (it->runs + 1);
    ++it->runs;
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json rows = json::array();
  for (const auto& r : result.rows) rows.push_back(row_json(r));
  json summary = json::array();
  for (const auto& s : result.summary) {
    summary.push_back({{"config", s.config}, {"group", s.group}, {"fam_k", s.fam_k},
                       {"runs", s.runs}, {"mean_miou", s.mean_miou}, {"gflops", s.gflops},
                       {"gflops_1024", s.gflops_1024}});
  }
  write_text(options.out_dir / "results.json",
             json({{"rows", rows}, {"summary", summary}, {"seconds", result.seconds}}).dump(2) + "\n");
  write_text(options.out_dir / "results.md", ablation_table(result));
  return result;
}

std::string ablation_table(const AblationResult& result) {
  std::ostringstream os;
  os << std::fixed;
  os << "| group | config | k | seed | mIoU (%) | best mIoU (%) | GFLOPs | GFLOPs @1024 |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : result.rows) {
    os << "| " << r.group << " | " << r.config << " | " << (r.use_fam ? std::to_string(r.fam_k) : "-")
       << " | " << r.seed << " | " << std::setprecision(2) << 100.0 * r.miou << " | "
       << 100.0 * r.best_miou << " | " << std::setprecision(4) << r.gflops << " | "
       << std::setprecision(2) << r.gflops_1024 << " |\n";
  }
  os << "\n| group | config | k | runs | mean mIoU (%) | GFLOPs | GFLOPs @1024 |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& s : result.summary) {
    os << "| " << s.group << " | " << s.config << " | "
       << (s.config.find("FAM") != std::string::npos ? std::to_string(s.fam_k) : "-") << " | "
       << s.runs << " | " << std::setprecision(2) << 100.0 * s.mean_miou << " | "
       << std::setprecision(4) << s.gflops << " | " << std::setprecision(2) << s.gflops_1024
       << " |\n";
  }
  return os.str();
}

}  // namespace sfnet
