#include "sfnet/config.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sfnet/pnm.hpp"

namespace sfnet {

using nlohmann::json;

namespace {

class Problems {
 public:
  void add(const std::string& key, const std::string& what) { items_.push_back(key + ": " + what); }
  void raise_if_any() const {
    if (items_.empty()) return;
    std::string msg = "invalid config (" + std::to_string(items_.size()) + " problem" +
                      (items_.size() == 1 ? "" : "s") + "): ";
    for (std::size_t i = 0; i < items_.size(); ++i) msg += (i ? "; " : "") + items_[i];
    throw ConfigError(msg);
  }

 private:
  std::vector<std::string> items_;
};

// Reads known keys from an object and flags everything else.
class Section {
 public:
  Section(const json& j, std::string path, Problems& problems)
      : j_(j), path_(std::move(path)), problems_(problems) {
    if (!j_.is_object()) {
      problems_.add(path_.empty() ? "<root>" : path_, "expected an object");
      ok_ = false;
    }
  }

  template <class T>
  void read(const char* key, T& target) {
    known_.push_back(key);
    if (!ok_ || !j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception&) {
      problems_.add(name(key), "wrong type (" + std::string(j_.at(key).type_name()) + ")");
    }
  }

  const json* child(const char* key) {
    known_.push_back(key);
    if (!ok_ || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() {
    if (!ok_) return;
    for (const auto& [key, _] : j_.items()) {
      if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
        problems_.add(name(key), "unknown key");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  Problems& problems_;
  std::vector<std::string> known_;
  bool ok_ = true;
};

void read_model(const json& j, const std::string& path, ModelConfig& m, Problems& problems) {
  Section s(j, path, problems);
  std::vector<int> widths(m.widths.begin(), m.widths.end());
  s.read("widths", widths);
  if (widths.size() == 4) {
    std::copy(widths.begin(), widths.end(), m.widths.begin());
  } else {
    problems.add(s.name("widths"), "expected 4 stage widths");
  }
  s.read("fpn_channels", m.fpn_channels);
  s.read("ppm_bins", m.ppm_bins);
  s.read("num_classes", m.num_classes);
  s.read("norm_groups", m.norm_groups);
  s.read("use_fam", m.use_fam);
  s.read("use_ppm", m.use_ppm);
  if (const json* fam = s.child("fam")) {
    Section f(*fam, s.name("fam"), problems);
    f.read("kernel_size", m.fam.kernel_size);
    f.read("n_layers", m.fam.n_layers);
    std::string mode = to_string(m.fam.upsample_mode);
    f.read("upsample_mode", mode);
    try {
      m.fam.upsample_mode = parse_upsample_mode(mode);
    } catch (const std::exception& e) {
      problems.add(f.name("upsample_mode"), e.what());
    }
    f.finish();
  }
  s.finish();
}

void read_train(const json& j, TrainConfig& t, Problems& problems) {
  Section s(j, "train", problems);
  s.read("base_lr", t.base_lr);
  s.read("momentum", t.momentum);
  s.read("weight_decay", t.weight_decay);
  s.read("total_iters", t.total_iters);
  s.read("batch_size", t.batch_size);
  s.read("power", t.power);
  s.read("ohem_keep_frac", t.ohem_keep_frac);
  s.read("aux_weight", t.aux_weight);
  s.read("crop_size", t.crop_size);
  std::vector<double> range{t.scale_min, t.scale_max};
  s.read("scale_range", range);
  if (range.size() == 2) {
    t.scale_min = range[0];
    t.scale_max = range[1];
  } else {
    problems.add("train.scale_range", "expected [min, max]");
  }
  s.read("flip_prob", t.flip_prob);
  s.read("seed", t.seed);
  s.read("eval_interval", t.eval_interval);
  s.read("log_interval", t.log_interval);
  s.finish();
}

}  // namespace

void RunConfig::validate() const {
  std::vector<std::string> bad;
  try {
    model.validate();
  } catch (const ConfigError& e) {
    bad.push_back(e.what());
  }
  try {
    train.validate();
  } catch (const ConfigError& e) {
    bad.push_back(e.what());
  }
  if (bad.size() == 1) throw ConfigError(bad.front());
  if (bad.size() == 2) throw ConfigError(bad[0] + "; " + bad[1]);
}

json to_json(const ModelConfig& m) {
  return {{"widths", std::vector<int>(m.widths.begin(), m.widths.end())},
          {"fpn_channels", m.fpn_channels},
          {"ppm_bins", m.ppm_bins},
          {"num_classes", m.num_classes},
          {"norm_groups", m.norm_groups},
          {"use_fam", m.use_fam},
          {"use_ppm", m.use_ppm},
          {"fam",
           {{"kernel_size", m.fam.kernel_size},
            {"n_layers", m.fam.n_layers},
            {"upsample_mode", to_string(m.fam.upsample_mode)}}}};
}

json to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  return {{"model", to_json(cfg.model)},
          {"train",
           {{"base_lr", t.base_lr},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"total_iters", t.total_iters},
            {"batch_size", t.batch_size},
            {"power", t.power},
            {"ohem_keep_frac", t.ohem_keep_frac},
            {"aux_weight", t.aux_weight},
            {"crop_size", t.crop_size},
            {"scale_range", {t.scale_min, t.scale_max}},
            {"flip_prob", t.flip_prob},
            {"seed", t.seed},
            {"eval_interval", t.eval_interval},
            {"log_interval", t.log_interval}}},
          {"data", cfg.data},
          {"out", cfg.out}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig base) {
  Problems problems;
  read_model(j, "model", base, problems);
  problems.raise_if_any();
  return base;
}

RunConfig run_config_from_json(const json& j, RunConfig base) {
  Problems problems;
  Section root(j, "", problems);
  if (const json* m = root.child("model")) read_model(*m, "model", base.model, problems);
  if (const json* t = root.child("train")) read_train(*t, base.train, problems);
  root.read("data", base.data);
  root.read("out", base.out);
  root.finish();
  problems.raise_if_any();
  base.validate();
  return base;
}

RunConfig load_run_config(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace sfnet
