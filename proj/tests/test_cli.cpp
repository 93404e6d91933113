#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "sfnet/checkpoint.hpp"
#include "sfnet/config.hpp"
#include "sfnet/data.hpp"
#include "sfnet/model.hpp"
#include "sfnet/pnm.hpp"
#include "test_util.hpp"

using namespace sfnet;
using nlohmann::json;
using sfnet::testing::max_abs_diff;
using sfnet::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(SFNET_CLI) + " " + args + " > " + out.string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path small_dataset(const fs::path& dir) {
  GenOptions opt;
  opt.count = 12;
  opt.val_count = 4;
  gen_synthetic(dir / "data", opt);
  return dir / "data";
}

}  // namespace

TEST_CASE("gradcheck command reports PASS for the sampler") {
  const auto dir = scratch_dir("cli_gradcheck");
  RunResult r = run_cli("gradcheck --scope sampler --seeds 2", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("max_rel_err") != std::string::npos);
  CHECK(r.out.find("PASS") != std::string::npos);
}

TEST_CASE("config and I/O failures map to exit codes") {
  const auto dir = scratch_dir("cli_errors");
  const auto data = small_dataset(dir);
  {
    std::ofstream(dir / "bad.json") << R"({"model": {"use_fam": 1, "typo": 2}, "oops": {}})";
  }
  RunResult bad = run_cli("train --config " + (dir / "bad.json").string() + " --data " +
                              data.string() + " --out " + (dir / "run").string(),
                          dir);
  CHECK(bad.code == 2);
  CHECK(std::count(bad.err.begin(), bad.err.end(), '\n') == 1);
  const json e = json::parse(bad.err);
  CHECK(e["error"] == "config");
  const std::string msg = e["message"];
  CHECK(msg.find("model.use_fam") != std::string::npos);
  CHECK(msg.find("model.typo") != std::string::npos);
  CHECK(msg.find("oops") != std::string::npos);

  RunResult missing = run_cli("train --data " + (dir / "nope").string() + " --out " +
                                  (dir / "run").string(),
                              dir);
  CHECK(missing.code == 4);
  CHECK(json::parse(missing.err)["error"] == "io");

  CHECK(run_cli("train --data " + data.string() + " --out " + (dir / "r").string() +
                    " --fam-k 4",
                dir)
            .code == 2);
  CHECK(run_cli("frobnicate", dir).code == 2);
}

TEST_CASE("zero-iteration runs with and without FAM give equal logits") {
  const auto dir = scratch_dir("cli_zero");
  const auto data = small_dataset(dir);
  {
    std::ofstream(dir / "cfg.json") << "{ \"train\": {\"total_iters\": 0, \"seed\": 5} }\n";
  }
  const std::string common = " --config " + (dir / "cfg.json").string() + " --data " + data.string();
  RunResult fam = run_cli("train" + common + " --out " + (dir / "fam").string(), dir);
  REQUIRE(fam.code == 0);
  RunResult base = run_cli("train" + common + " --no-fam --out " + (dir / "base").string(), dir);
  REQUIRE(base.code == 0);

  CHECK(slurp(dir / "fam" / "config.source.json") == slurp(dir / "cfg.json"));
  const RunConfig fam_cfg = load_run_config((dir / "fam" / "config.json").string());
  const RunConfig base_cfg = load_run_config((dir / "base" / "config.json").string());
  CHECK(fam_cfg.model.use_fam);
  CHECK_FALSE(base_cfg.model.use_fam);
  CHECK(base_cfg.train.seed == 5);

  ParamStore fp = build_params(fam_cfg.model, 0);
  assign_params(fp, load_checkpoint(dir / "fam" / "last.sfal"));
  ParamStore bp = build_params(base_cfg.model, 0);
  assign_params(bp, load_checkpoint(dir / "base" / "last.sfal"));
  const Dataset ds = Dataset::load(data);
  for (int i = 0; i < ds.size(); ++i) {
    const Tensor& img = ds.sample(i).image;
    NoGradGuard no_grad;
    CHECK(max_abs_diff(model_forward(img, fp, fam_cfg.model, Mode::kEval).logits,
                       model_forward(img, bp, base_cfg.model, Mode::kEval).logits) == 0.0);
  }
}

TEST_CASE("eval, bench and viz commands") {
  const auto dir = scratch_dir("cli_eval");
  const auto data = small_dataset(dir);
  REQUIRE(run_cli("train --iters 2 --data " + data.string() + " --out " + (dir / "run").string(), dir)
              .code == 0);
  const std::string ckpt = (dir / "run" / "last.sfal").string();

  RunResult ev = run_cli("eval --checkpoint " + ckpt + " --data " + data.string() +
                             " --out-report " + (dir / "report.json").string(),
                         dir);
  REQUIRE(ev.code == 0);
  const json report = json::parse(slurp(dir / "report.json"));
  CHECK(report.contains("miou"));
  CHECK(report["per_class_iou"].size() == 5);
  CHECK(report["environment"].contains("cpu"));
  CHECK(report["latency"]["runs"] == 5);

  RunResult bench = run_cli("bench --checkpoint " + ckpt + " --shape 1x3x64x64 --runs 3 --compare "
                            "--report " + (dir / "bench.json").string(),
                            dir);
  REQUIRE(bench.code == 0);
  const json b = json::parse(slurp(dir / "bench.json"));
  CHECK(b.contains("fam_overhead"));
  CHECK(b["fam"]["runs"] == 3);

  const std::string stem = (data / "images" / "00000.ppm").string();
  RunResult viz = run_cli("viz --checkpoint " + ckpt + " --image " + stem + " --label " +
                              (data / "labels" / "00000.pgm").string() + " --out-dir " +
                              (dir / "viz").string(),
                          dir);
  REQUIRE(viz.code == 0);
  for (const char* name : {"prediction.ppm", "error_map.ppm", "feature_F2.ppm", "feature_F5.ppm",
                           "flow_l2_color.ppm", "flow_l2_arrows.ppm", "flow_fuse5_color.ppm"}) {
    INFO(name);
    CHECK(fs::exists(dir / "viz" / name));
  }
  CHECK(read_ppm(dir / "viz" / "flow_l2_color.ppm").width == 64);

  RunResult one = run_cli("viz --checkpoint " + ckpt + " --image " + stem + " --level fuse3 --out-dir " +
                              (dir / "viz1").string(),
                          dir);
  REQUIRE(one.code == 0);
  CHECK(fs::exists(dir / "viz1" / "flow_fuse3_arrows.ppm"));
  CHECK_FALSE(fs::exists(dir / "viz1" / "flow_l2_color.ppm"));
  CHECK(run_cli("viz --checkpoint " + ckpt + " --image " + stem + " --level l9 --out-dir " +
                    (dir / "viz2").string(),
                dir)
            .code == 2);
}

TEST_CASE("ablate emits one row per run with seed, mIoU and GFLOPs") {
  const auto dir = scratch_dir("cli_ablate");
  const auto data = small_dataset(dir);
  RunResult r = run_cli("ablate --data " + data.string() + " --out " + (dir / "abl").string() +
                            " --iters 2 --seeds 1,2 --k-grid 1,3 --k-seeds 1",
                        dir);
  REQUIRE(r.code == 0);
  const json res = json::parse(slurp(dir / "abl" / "results.json"));
  CHECK(res["rows"].size() == 4 * 2 + 2);
  for (const auto& row : res["rows"]) {
    CHECK(row.contains("seed"));
    CHECK(row.contains("miou"));
    CHECK(row["gflops"].get<double>() > 0.0);
  }
  CHECK(r.out.find("| baseline | FPN+FAM+PPM | 3 | 2 |") != std::string::npos);
  CHECK(r.out.find("| kernel | FPN+FAM+PPM | 1 | 1 |") != std::string::npos);
  CHECK(fs::exists(dir / "abl" / "runs" / "fam_ppm_k3_s1" / "last.sfal"));
}
