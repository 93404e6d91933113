#include "sfnet/layers.hpp"

#include <cmath>
#include <numeric>

#include "sfnet/ops.hpp"
#include "sfnet/rng.hpp"

namespace sfnet {

void add_conv(ParamStore& params, const std::string& name, int out_c, int in_c, int k,
              std::uint64_t seed, bool with_bias, bool zero_init) {
  if (k < 1 || k % 2 == 0) throw ShapeError(name + ": kernel size must be odd");
  const std::string wname = name + ".weight";
  Tensor w = Tensor::zeros(Shape{out_c, in_c, k, k}, true);
  if (!zero_init) {
    Rng rng(substream_seed(seed, hash_name(wname)));
    const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * k * k));
    for (double& v : w.mutable_data()) v = rng.uniform(-bound, bound);
  }
  params.add(wname, w);
  if (with_bias) params.add(name + ".bias", Tensor::zeros(Shape{1, out_c, 1, 1}, true));
}

void add_norm(ParamStore& params, const std::string& name, int channels) {
  params.add(name + ".scale", Tensor::full(Shape{1, channels, 1, 1}, 1.0, true));
  params.add(name + ".shift", Tensor::zeros(Shape{1, channels, 1, 1}, true));
}

Tensor apply_conv(const ParamStore& params, const std::string& name, const Tensor& input,
                  int stride) {
  const Tensor& w = params.get(name + ".weight");
  const std::string bname = name + ".bias";
  Tensor b = params.contains(bname) ? params.get(bname) : Tensor();
  return conv2d(input, w, b, stride, w.shape().h / 2);
}

int norm_groups(int channels, int max_groups) {
  return std::gcd(channels, std::max(1, max_groups));
}

Tensor apply_norm(const ParamStore& params, const std::string& name, const Tensor& input,
                  int max_groups) {
  return group_norm(input, norm_groups(input.shape().c, max_groups),
                    params.get(name + ".scale"), params.get(name + ".shift"));
}

Tensor conv_norm_relu(const ParamStore& params, const std::string& name, const Tensor& input,
                      int stride, int max_groups) {
  return relu(apply_norm(params, name + ".norm",
                         apply_conv(params, name + ".conv", input, stride), max_groups));
}

}  // namespace sfnet
