#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "irf/rng.hpp"
#include "irf/tensor.hpp"

namespace irf {

struct DenoiserConfig {
  int base_channels = 16;
  std::vector<int> depth_multipliers = {1, 2, 4};
  int res_blocks_per_depth = 2;
  int groups = 8;
  double dropout_rate = 0.1;
  int gamma_embed_dim = 64;
  int condition_channels = 1;  // 0 => unconditional model
  int out_channels = 1;        // target image channels

  int depths() const { return int(depth_multipliers.size()); }
  int channels_at(int depth) const { return base_channels * depth_multipliers[depth]; }
  int input_channels() const { return condition_channels + out_channels; }
  // Spatial extents must divide by this for the encoder/decoder to round-trip.
  int spatial_divisor() const { return 1 << (depths() - 1); }
  void validate() const;
};

// Named parameters in construction order; order is part of the checkpoint
// and optimizer-state contract.
template <typename T>
struct DenoiserModel {
  DenoiserConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;
  std::unordered_map<std::string, int> index;

  void add(const std::string& name, Tensor<T> t);
  const Tensor<T>& p(const std::string& name) const;
  int64_t param_count() const;
  void set_requires_grad(bool on);

  template <typename U>
  DenoiserModel<U> cast() const {
    DenoiserModel<U> out;
    out.config = config;
    for (size_t i = 0; i < values.size(); ++i) {
      std::vector<U> v(values[i].data->begin(), values[i].data->end());
      out.add(names[i], Tensor<U>::from_vector(values[i].shape, std::move(v)));
    }
    return out;
  }
};

// Sinusoidal features of s = 1000*gamma with frequencies log-spaced over
// [1, 1e4]: [sin(s/w_j)..., cos(s/w_j)...], shape [1, dim].
template <typename T>
Tensor<T> gamma_embedding(double gamma, int dim);

// Upsamples the conditioning image to y_t's spatial size (bicubic) when
// needed and concatenates along channels. Returns y_t unchanged when
// x_lowres has zero channels.
template <typename T>
Tensor<T> condition_input(const Tensor<T>& x_lowres, const Tensor<T>& y_t);

// Kaiming fan-in conv kernels, zero biases, identity norm affines, and a
// zero-initialized output conv (the model emits 0 at init).
template <typename T>
DenoiserModel<T> init_model(const DenoiserConfig& config, Rng& rng);

// f(x, y_t, gamma) -> noise estimate, same shape as y_t. Dropout is active
// only in train_mode (rng required then). The output is finite-checked.
template <typename T>
Tensor<T> predict_eps(const DenoiserModel<T>& model, const Tensor<T>& x, const Tensor<T>& y_t,
                      double gamma, bool train_mode, Rng* rng);

}  // namespace irf
