#include "sfnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "sfnet/checkpoint.hpp"
#include "sfnet/kink_monitor.hpp"
#include "sfnet/metrics.hpp"
#include "sfnet/pnm.hpp"

namespace sfnet {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (!(base_lr >= 0.0)) bad.push_back("train.base_lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad.push_back("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) bad.push_back("train.weight_decay must be >= 0");
  if (total_iters < 0) bad.push_back("train.total_iters must be >= 0");
  if (batch_size < 1) bad.push_back("train.batch_size must be >= 1");
  if (!(power > 0.0)) bad.push_back("train.power must be > 0");
  if (!(ohem_keep_frac > 0.0 && ohem_keep_frac <= 1.0)) {
    bad.push_back("train.ohem_keep_frac must be in (0, 1]");
  }
  if (!(aux_weight >= 0.0)) bad.push_back("train.aux_weight must be >= 0");
  if (crop_size < 32 || crop_size % 32 != 0) {
    bad.push_back("train.crop_size must be a positive multiple of 32");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max)) {
    bad.push_back("train.scale_range must satisfy 0 < min <= max");
  }
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) bad.push_back("train.flip_prob must be in [0, 1]");
  if (eval_interval < 1) bad.push_back("train.eval_interval must be >= 1");
  if (log_interval < 1) bad.push_back("train.log_interval must be >= 1");
  if (!bad.empty()) {
    std::string msg = bad.front();
    for (std::size_t i = 1; i < bad.size(); ++i) msg += "; " + bad[i];
    throw ConfigError(msg);
  }
}

double poly_lr(double base, int iter, int total, double power) {
  if (total <= 0) throw std::invalid_argument("poly_lr: total must be positive");
  if (iter < 0 || iter > total) {
    throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) +
                                " outside [0, " + std::to_string(total) + "]");
  }
  return base * std::pow(1.0 - static_cast<double>(iter) / total, power);
}

std::vector<std::size_t> ohem_select(std::span<const double> losses,
                                     std::span<const std::uint8_t> labels, double keep_frac,
                                     int ignore_label) {
  if (!(keep_frac > 0.0 && keep_frac <= 1.0)) {
    throw std::invalid_argument("ohem: keep fraction must be in (0, 1]");
  }
  if (losses.size() != labels.size()) throw ShapeError("ohem: loss map and labels differ in size");
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != ignore_label) valid.push_back(i);
  }
  if (valid.empty()) return {};
  const auto k = static_cast<std::size_t>(std::ceil(keep_frac * static_cast<double>(valid.size())));
  const std::size_t keep = std::clamp<std::size_t>(k, 1, valid.size());
  auto harder = [&](std::size_t a, std::size_t b) {
    return losses[a] > losses[b] || (losses[a] == losses[b] && a < b);
  };
  std::partial_sort(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(keep), valid.end(),
                    harder);
  valid.resize(keep);
  return valid;
}

OhemLoss ohem_ce(const Tensor& per_pixel, const LabelMap& labels, double keep_frac,
                 int ignore_label) {
  const Shape s = per_pixel.shape();
  if (s.c != 1 || s.n != labels.n || s.h != labels.h || s.w != labels.w) {
    throw ShapeError("ohem: per-pixel map " + s.str() + " does not match the label map");
  }
  OhemLoss out;
  for (std::uint8_t v : labels.values) out.valid += (v != ignore_label);
  const std::vector<std::size_t> chosen =
      ohem_select(per_pixel.data(), labels.values, keep_frac, ignore_label);
  if (chosen.empty()) {
    out.no_valid = true;
    out.loss = scalar_mul(sum(per_pixel), 0.0);
    return out;
  }
  if (kink_monitor_active()) {
    std::vector<std::size_t> sorted = chosen;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i : sorted) kink_record(0x0e11ULL ^ (static_cast<std::uint64_t>(i) << 8));
  }
  std::vector<double> weights(per_pixel.numel(), 0.0);
  for (std::size_t i : chosen) weights[i] = 1.0 / static_cast<double>(chosen.size());
  out.selected = chosen.size();
  out.loss = dot(per_pixel, weights);
  return out;
}

LossBreakdown total_loss(const Tensor& final_logits, const std::vector<Tensor>& aux_logits,
                         const LabelMap& labels, const TrainConfig& cfg) {
  LossBreakdown out;
  OhemLoss main = ohem_ce(cross_entropy(final_logits, labels), labels, cfg.ohem_keep_frac);
  out.no_valid = main.no_valid;
  out.final_ohem = main.loss.item();
  Tensor total = main.loss;
  for (const Tensor& aux : aux_logits) {
    const Shape s = aux.shape();
    if (s.h < 1 || labels.h % s.h != 0 || labels.w % s.w != 0 || labels.h / s.h != labels.w / s.w) {
      throw ShapeError("aux logits " + s.str() + " do not divide the label map");
    }
    const LabelMap small = downsample_labels(labels, labels.h / s.h);
    Tensor ce = masked_mean(cross_entropy(aux, small), small);
    out.aux.push_back(ce.item());
    if (cfg.aux_weight != 0.0) total = add(total, scalar_mul(ce, cfg.aux_weight));
  }
  out.total = total;
  return out;
}

bool decays(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void sgd_step(ParamStore& params, OptimState& state, double lr, double momentum,
              double weight_decay) {
  for (const auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient in " + name);
    }
  }
  for (auto& [name, p] : params) {
    std::vector<double>& v = state.velocity[name];
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
    std::span<const double> g = p.grad();
    std::span<double> w = p.mutable_data();
    const double wd = decays(name) ? weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = g.empty() ? 0.0 : g[i];
      v[i] = momentum * v[i] + grad + wd * w[i];
      w[i] -= lr * v[i];
    }
  }
  ++state.iteration;
}

AugmentParams draw_augment(int h, int w, const TrainConfig& cfg, Rng& rng) {
  AugmentParams a;
  a.flip = rng.bernoulli(cfg.flip_prob);
  a.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const int sh = std::max(1, static_cast<int>(std::lround(h * a.scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(w * a.scale)));
  a.crop_y = rng.below(std::max(sh, cfg.crop_size) - cfg.crop_size + 1);
  a.crop_x = rng.below(std::max(sw, cfg.crop_size) - cfg.crop_size + 1);
  return a;
}

SegSample apply_augment(const SegSample& sample, const AugmentParams& a, int crop_size) {
  NoGradGuard no_grad;
  const Shape s = sample.image.shape();
  const int h = s.h;
  const int w = s.w;
  const std::size_t plane = s.plane();

  // Flip.
  std::vector<double> img(sample.image.data().begin(), sample.image.data().end());
  std::vector<std::uint8_t> lab = sample.label.values;
  if (a.flip) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < h; ++y) {
        double* row = img.data() + c * plane + static_cast<std::size_t>(y) * w;
        std::reverse(row, row + w);
      }
    }
    for (int y = 0; y < h; ++y) {
      std::reverse(lab.begin() + static_cast<std::ptrdiff_t>(y) * w,
                   lab.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
    }
  }

  // Rescale: bilinear image, nearest label on the same coordinate map.
  const int sh = std::max(1, static_cast<int>(std::lround(h * a.scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(w * a.scale)));
  Tensor scaled = Tensor::from_data(s, std::move(img));
  if (sh != h || sw != w) scaled = resize_bilinear(scaled, sh, sw);
  std::vector<std::uint8_t> slab(static_cast<std::size_t>(sh) * sw);
  for (int y = 0; y < sh; ++y) {
    const int sy = std::min(h - 1, static_cast<int>(std::floor(y * static_cast<double>(h) / sh + 0.5)));
    for (int x = 0; x < sw; ++x) {
      const int sx = std::min(w - 1, static_cast<int>(std::floor(x * static_cast<double>(w) / sw + 0.5)));
      slab[static_cast<std::size_t>(y) * sw + x] = lab[static_cast<std::size_t>(sy) * w + sx];
    }
  }

  // Pad (image 0, label ignore) and crop.
  SegSample out;
  out.image = Tensor::zeros(Shape{1, s.c, crop_size, crop_size});
  out.label = LabelMap(1, crop_size, crop_size, kIgnoreLabel);
  std::span<double> dst = out.image.mutable_data();
  std::span<const double> src = scaled.data();
  const std::size_t splane = static_cast<std::size_t>(sh) * sw;
  const std::size_t cplane = static_cast<std::size_t>(crop_size) * crop_size;
  for (int y = 0; y < crop_size; ++y) {
    const int yy = y + a.crop_y;
    if (yy >= sh) continue;
    for (int x = 0; x < crop_size; ++x) {
      const int xx = x + a.crop_x;
      if (xx >= sw) continue;
      for (int c = 0; c < s.c; ++c) {
        dst[c * cplane + static_cast<std::size_t>(y) * crop_size + x] =
            src[c * splane + static_cast<std::size_t>(yy) * sw + xx];
      }
      out.label.at(0, y, x) = slab[static_cast<std::size_t>(yy) * sw + xx];
    }
  }
  return out;
}

SegSample augment(const SegSample& sample, const TrainConfig& cfg, Rng& rng) {
  const AugmentParams a = draw_augment(sample.label.h, sample.label.w, cfg, rng);
  return apply_augment(sample, a, cfg.crop_size);
}

SegSample make_batch(const std::vector<SegSample>& samples) {
  if (samples.empty()) throw ShapeError("make_batch: no samples");
  const Shape s0 = samples.front().image.shape();
  SegSample out;
  out.image = Tensor::zeros(Shape{static_cast<int>(samples.size()), s0.c, s0.h, s0.w});
  out.label = LabelMap(static_cast<int>(samples.size()), s0.h, s0.w);
  std::span<double> dst = out.image.mutable_data();
  const std::size_t per_image = static_cast<std::size_t>(s0.c) * s0.plane();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Shape s = samples[i].image.shape();
    if (s.n != 1 || s.c != s0.c || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("make_batch: sample " + std::to_string(i) + " has shape " + s.str());
    }
    std::span<const double> src = samples[i].image.data();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per_image));
    std::copy(samples[i].label.values.begin(), samples[i].label.values.end(),
              out.label.values.begin() + static_cast<std::ptrdiff_t>(i * s0.plane()));
  }
  return out;
}

EvalResult evaluate(const ParamStore& params, const ModelConfig& cfg, const Dataset& data,
                    const std::vector<int>& indices, int batch_size) {
  ConfusionMatrix cm(cfg.num_classes);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    std::vector<SegSample> group;
    for (std::size_t i = start; i < std::min(indices.size(), start + batch_size); ++i) {
      group.push_back(data.sample(indices[i]));
    }
    const SegSample batch = make_batch(group);
    const ModelOutput out = model_forward(batch.image, params, cfg, Mode::kEval);
    cm.update(argmax_labels(out.logits), batch.label);
  }
  const MiouResult m = miou(cm);
  return {m.mean, pixel_accuracy(cm), m.per_class, m.present};
}

namespace {

class JsonLog {
 public:
  explicit JsonLog(const fs::path& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw IoError(path.string() + ": cannot open log for writing");
  }
  void write(const json& row) {
    out_ << row.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError(path_.string() + ": write failed");
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

json eval_row(int iter, const EvalResult& e) {
  json per_class = json::array();
  for (std::size_t c = 0; c < e.per_class.size(); ++c) {
    per_class.push_back(e.present[c] ? json(e.per_class[c]) : json(nullptr));
  }
  return {{"event", "eval"}, {"iter", iter}, {"val_miou", e.miou},
          {"val_pixel_acc", e.pixel_accuracy}, {"val_iou", per_class}};
}

}  // namespace

TrainResult train_loop(const Dataset& data, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, const TrainOptions& options) {
  model_cfg.validate();
  cfg.validate();
  const DatasetManifest& m = data.manifest();
  if (m.train.empty()) throw ConfigError("train: the dataset has no training samples");
  if (m.num_classes != model_cfg.num_classes) {
    throw ConfigError("train: dataset has " + std::to_string(m.num_classes) +
                      " classes but model.num_classes is " +
                      std::to_string(model_cfg.num_classes));
  }
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw IoError(options.out_dir.string() + ": " + ec.message());
  data.preload();

  ParamStore params = build_params(model_cfg, cfg.seed);
  OptimState state;
  JsonLog log(options.out_dir / "log.jsonl");
  log.write({{"event", "start"}, {"rng", std::string(Rng::kAlgorithm)}, {"seed", cfg.seed},
             {"total_iters", cfg.total_iters}, {"batch_size", cfg.batch_size},
             {"train_samples", m.train.size()}, {"val_samples", m.val.size()},
             {"parameters", params.total_elements()}});

  const std::vector<int>& val = m.val.empty() ? m.train : m.val;
  TrainResult result;
  auto run_eval = [&](int iter) {
    EvalResult e = evaluate(params, model_cfg, data, val);
    log.write(eval_row(iter, e));
    if (e.miou > result.best_miou) {
      result.best_miou = e.miou;
      result.best_iter = iter;
      save_checkpoint(params, options.out_dir / "best.sfal");
    }
    result.final_miou = e.miou;
    result.final_eval = e;
    if (options.verbose) {
      std::cerr << "iter " << iter << " val mIoU " << e.miou << "\n";
    }
  };

  if (cfg.total_iters == 0) {
    run_eval(0);
    save_checkpoint(params, options.out_dir / "last.sfal");
    return result;
  }

  std::vector<int> order = m.train;
  std::size_t cursor = order.size();
  int epoch = -1;
  const auto t0 = std::chrono::steady_clock::now();
  for (int iter = 0; iter < cfg.total_iters; ++iter) {
    std::vector<SegSample> group;
    for (int j = 0; j < cfg.batch_size; ++j) {
      if (cursor == order.size()) {
        ++epoch;
        order = m.train;
        Rng shuffle(substream_seed(cfg.seed ^ 0x5ca77e12ULL, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size() - 1; i > 0; --i) {
          std::swap(order[i], order[shuffle.below(static_cast<int>(i + 1))]);
        }
        cursor = 0;
      }
      Rng aug(substream_seed(cfg.seed ^ 0xa06e47ULL,
                             static_cast<std::uint64_t>(iter) * cfg.batch_size + j));
      group.push_back(augment(data.sample(order[cursor++]), cfg, aug));
    }
    const SegSample batch = make_batch(group);
    const double lr = poly_lr(cfg.base_lr, iter, cfg.total_iters, cfg.power);

    params.zero_grad();
    double loss_value = 0.0;
    LossBreakdown loss;
    try {
      const ModelOutput out = model_forward(batch.image, params, model_cfg, Mode::kTrain);
      loss = total_loss(out.logits, out.aux_logits, batch.label, cfg);
      loss_value = loss.total.item();
      backward(loss.total);
      sgd_step(params, state, lr, cfg.momentum, cfg.weight_decay);
    } catch (const NumericError& e) {
      const fs::path dump = options.out_dir / "nan_dump.sfal";
      save_checkpoint(params, dump);
      log.write({{"event", "numeric_failure"}, {"iter", iter}, {"error", e.what()},
                 {"dump", dump.filename().string()}});
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iter) +
                         " (parameters dumped to " + dump.string() + ")");
    }
    result.losses.push_back(loss_value);
    json row = {{"iter", iter}, {"lr", lr}, {"loss", loss_value}, {"ohem", loss.final_ohem},
                {"aux", loss.aux}};
    if (loss.no_valid) row["warning"] = "no valid pixels in batch";
    log.write(row);
    if (options.verbose && (iter % cfg.log_interval == 0 || iter + 1 == cfg.total_iters)) {
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "iter " << iter << " lr " << lr << " loss " << loss_value << " (" << sec
                << " s)\n";
    }
    if ((iter + 1) % cfg.eval_interval == 0 || iter + 1 == cfg.total_iters) run_eval(iter + 1);
  }
  save_checkpoint(params, options.out_dir / "last.sfal");
  return result;
}

}  // namespace sfnet
