#pragma once

#include <cstdint>
#include <string>

#include "sfnet/tensor.hpp"

namespace sfnet {

// Parameter naming: "<name>.weight", "<name>.bias" for convs and
// "<name>.scale", "<name>.shift" for group norms. Each tensor draws from its
// own stream seeded by (seed, full name), so adding or removing unrelated
// layers never changes the initial values of shared ones.

// Fan-in scaled uniform, range +-sqrt(6 / (c_in * k * k)); zero bias.
// zero_init fills the weight with zeros instead.
void add_conv(ParamStore& params, const std::string& name, int out_c, int in_c, int k,
              std::uint64_t seed, bool with_bias = true, bool zero_init = false);

// scale = 1, shift = 0.
void add_norm(ParamStore& params, const std::string& name, int channels);

Tensor apply_conv(const ParamStore& params, const std::string& name, const Tensor& input,
                  int stride = 1);

// Group count is min(max_groups, channels) reduced to a divisor of channels.
int norm_groups(int channels, int max_groups);
Tensor apply_norm(const ParamStore& params, const std::string& name, const Tensor& input,
                  int max_groups);

// conv -> group norm -> relu
Tensor conv_norm_relu(const ParamStore& params, const std::string& name, const Tensor& input,
                      int stride, int max_groups);

}  // namespace sfnet
