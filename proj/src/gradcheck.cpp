#include "sfnet/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sfnet/fam.hpp"
#include "sfnet/kink_monitor.hpp"
#include "sfnet/layers.hpp"
#include "sfnet/model.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/rng.hpp"
#include "sfnet/train.hpp"
#include "sfnet/warp.hpp"

namespace sfnet {

namespace {

std::pair<double, std::uint64_t> evaluate(const std::function<Tensor()>& loss) {
  NoGradGuard no_grad;
  KinkMonitor monitor;
  const double value = loss().item();
  return {value, monitor.fingerprint()};
}

std::vector<std::size_t> pick_indices(std::size_t n, int samples, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (samples <= 0 || static_cast<std::size_t>(samples) >= n) return all;
  for (int i = 0; i < samples; ++i) {
    const auto j = static_cast<std::size_t>(i + rng.below(static_cast<int>(n - i)));
    std::swap(all[i], all[j]);
  }
  all.resize(samples);
  std::sort(all.begin(), all.end());
  return all;
}

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  Tensor t = Tensor::zeros(s, grad);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor projection(const Tensor& out, std::span<const double> weights) { return dot(out, weights); }

std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

std::vector<NamedTensor> param_leaves(ParamStore& params) {
  std::vector<NamedTensor> out;
  for (auto& [name, t] : params) out.emplace_back(name, t);
  return out;
}

void merge_report(GradcheckReport& into, const GradcheckReport& r, const std::string& tag = "") {
  if (r.max_rel_err >= into.max_rel_err) {
    into.max_rel_err = r.max_rel_err;
    into.worst = r.worst + tag;
  }
  into.probes += r.probes;
  into.skipped += r.skipped;
}

// Small random weights in the flow subnets so warping runs off the lattice.
void randomise_flow(ParamStore& params, Rng& rng, double amplitude) {
  for (auto& [name, t] : params) {
    if (name.find(".flow.") == std::string::npos) continue;
    for (double& v : t.mutable_data()) v = rng.uniform(-amplitude, amplitude);
  }
}

GradcheckReport sampler_case(std::uint64_t seed) {
  Rng rng(substream_seed(seed, 1));
  const int h = 5;
  const int w = 6;
  Tensor source = random_tensor({2, 3, h, w}, rng);
  Tensor coords = Tensor::zeros({2, 2, 7, 4}, true);
  std::span<double> c = coords.mutable_data();
  const std::size_t plane = 7 * 4;
  for (int b = 0; b < 2; ++b) {
    for (int axis = 0; axis < 2; ++axis) {
      const int limit = axis == 0 ? h : w;
      for (std::size_t p = 0; p < plane; ++p) {
        // Interior coordinates kept 1e-2 away from the lattice.
        const double cell = rng.below(limit - 1);
        c[(b * 2 + axis) * plane + p] = cell + rng.uniform(0.01, 0.99);
      }
    }
  }
  const std::vector<double> wts = random_weights(2 * 3 * plane, rng);
  GradcheckOptions opt;
  opt.samples_per_tensor = 0;
  opt.seed = seed;
  return gradcheck([&] { return projection(bilinear_sample(source, coords), wts); },
                   {{"source", source}, {"coords", coords}}, opt);
}

GradcheckReport conv_case(std::uint64_t seed) {
  Rng rng(substream_seed(seed, 2));
  GradcheckReport all;
  for (int stride : {1, 2}) {
    Tensor input = random_tensor({2, 8, 16, 16}, rng);
    Tensor weight = random_tensor({6, 8, 3, 3}, rng, -0.3, 0.3);
    Tensor bias = random_tensor({1, 6, 1, 1}, rng);
    const Shape os{2, 6, (16 + 2 - 3) / stride + 1, (16 + 2 - 3) / stride + 1};
    const std::vector<double> wts = random_weights(os.numel(), rng);
    GradcheckOptions opt;
    opt.samples_per_tensor = 40;
    opt.seed = seed;
    merge_report(all,
                 gradcheck([&] { return projection(conv2d(input, weight, bias, stride, 1), wts); },
                           {{"input", input}, {"weight", weight}, {"bias", bias}}, opt),
                 " stride " + std::to_string(stride));
  }
  return all;
}

GradcheckReport group_norm_case(std::uint64_t seed) {
  Rng rng(substream_seed(seed, 3));
  Tensor input = random_tensor({2, 8, 6, 6}, rng, -2.0, 2.0);
  Tensor scale = random_tensor({1, 8, 1, 1}, rng, 0.5, 1.5);
  Tensor shift = random_tensor({1, 8, 1, 1}, rng);
  const std::vector<double> wts = random_weights(input.numel(), rng);
  GradcheckOptions opt;
  opt.samples_per_tensor = 0;
  opt.seed = seed;
  return gradcheck([&] { return projection(group_norm(input, 4, scale, shift), wts); },
                   {{"input", input}, {"scale", scale}, {"shift", shift}}, opt);
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.widths = {8, 8, 16, 16};
  cfg.fpn_channels = 16;
  cfg.num_classes = 3;
  return cfg;
}

GradcheckReport ppm_case(std::uint64_t seed) {
  Rng rng(substream_seed(seed, 4));
  ModelConfig cfg = small_model();
  ParamStore all = build_params(cfg, seed);
  ParamStore params;
  for (auto& [name, t] : all) {
    if (name.rfind("ppm.", 0) == 0) params.add(name, t);
  }
  Tensor top = random_tensor({1, cfg.widths[3], 6, 6}, rng);
  const std::vector<double> wts = random_weights(static_cast<std::size_t>(cfg.fpn_channels) * 36, rng);
  std::vector<NamedTensor> leaves = param_leaves(params);
  leaves.emplace_back("input", top);
  GradcheckOptions opt;
  opt.seed = seed;
  return gradcheck([&] { return projection(ppm_forward(top, params, cfg), wts); }, leaves, opt);
}

GradcheckReport fam_case(std::uint64_t seed) {
  Rng rng(substream_seed(seed, 5));
  GradcheckReport all;
  for (int scale : {2, 4}) {
    FamConfig cfg;
    cfg.fpn_channels = 8;
    ParamStore params;
    add_fam_params(params, "fam", cfg, seed);
    randomise_flow(params, rng, 0.3);
    Tensor coarse = random_tensor({1, 8, 3, 3}, rng);
    Tensor fine = random_tensor({1, 8, 3 * scale, 3 * scale}, rng);
    const std::vector<double> wts = random_weights(fine.numel(), rng);
    std::vector<NamedTensor> leaves = param_leaves(params);
    leaves.emplace_back("coarse", coarse);
    leaves.emplace_back("fine", fine);
    GradcheckOptions opt;
    opt.samples_per_tensor = 20;
    opt.seed = seed;
    merge_report(all,
                 gradcheck([&] {
                   return projection(fam_forward(coarse, fine, params, "fam", cfg, scale).aligned,
                                     wts);
                 }, leaves, opt),
                 " scale " + std::to_string(scale));
  }
  return all;
}

GradcheckReport model_case(std::uint64_t seed) {
  Rng rng(substream_seed(seed, 6));
  ModelConfig cfg;
  cfg.num_classes = 3;
  ParamStore params = build_params(cfg, seed);
  randomise_flow(params, rng, 0.05);
  Tensor image = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0, false);
  LabelMap labels(1, 32, 32);
  for (auto& v : labels.values) v = static_cast<std::uint8_t>(rng.below(3));
  TrainConfig tcfg;
  GradcheckOptions opt;
  opt.seed = seed;
  return gradcheck(
      [&] {
        const ModelOutput out = model_forward(image, params, cfg, Mode::kTrain);
        return total_loss(out.logits, out.aux_logits, labels, tcfg).total;
      },
      param_leaves(params), opt);
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor()>& loss,
                          const std::vector<NamedTensor>& leaves,
                          const GradcheckOptions& options) {
  GradcheckReport report;
  for (const auto& [name, t] : leaves) {
    if (!t.requires_grad()) throw std::invalid_argument("gradcheck: " + name + " is not a grad leaf");
    Tensor(t).zero_grad();
  }
  std::uint64_t base_print = 0;
  {
    KinkMonitor monitor;
    Tensor root = loss();
    base_print = monitor.fingerprint();
    backward(root);
  }
  Rng rng(substream_seed(options.seed, 0x9c));
  for (const auto& [name, leaf] : leaves) {
    Tensor t = leaf;
    const std::vector<double> analytic = t.has_grad()
                                             ? std::vector<double>(t.grad().begin(), t.grad().end())
                                             : std::vector<double>(t.numel(), 0.0);
    std::span<double> data = t.mutable_data();
    for (std::size_t i : pick_indices(t.numel(), options.samples_per_tensor, rng)) {
      const double x0 = data[i];
      data[i] = x0 + options.h;
      const auto [plus, print_plus] = evaluate(loss);
      data[i] = x0 - options.h;
      const auto [minus, print_minus] = evaluate(loss);
      data[i] = x0;
      if (print_plus != base_print || print_minus != base_print) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * options.h);
      const double denom =
          std::max({std::fabs(analytic[i]), std::fabs(numeric), options.denominator_floor});
      const double rel = std::fabs(analytic[i] - numeric) / denom;
      ++report.probes;
      if (rel >= report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

std::vector<std::string> gradcheck_suite_names() {
  return {"sampler", "conv", "group_norm", "ppm", "fam", "model"};
}

SuiteResult run_gradcheck_suite(const std::string& name, int seeds) {
  GradcheckReport (*fn)(std::uint64_t) = nullptr;
  if (name == "sampler") fn = sampler_case;
  if (name == "conv") fn = conv_case;
  if (name == "group_norm") fn = group_norm_case;
  if (name == "ppm") fn = ppm_case;
  if (name == "fam") fn = fam_case;
  if (name == "model") fn = model_case;
  if (!fn) throw std::invalid_argument("unknown gradcheck suite " + name);
  SuiteResult result;
  result.name = name;
  result.seeds = seeds;
  const auto t0 = std::chrono::steady_clock::now();
  for (int s = 0; s < seeds; ++s) merge_report(result.report, fn(static_cast<std::uint64_t>(s)), " seed " + std::to_string(s));
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace sfnet
