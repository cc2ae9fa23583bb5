#include "irf/denoiser.hpp"

#include <cmath>

#include "irf/common.hpp"
#include "irf/image.hpp"

namespace irf {

void DenoiserConfig::validate() const {
  if (base_channels < 1) throw DataError("DenoiserConfig: base_channels must be >= 1");
  if (depth_multipliers.empty()) throw DataError("DenoiserConfig: depth_multipliers empty");
  for (int m : depth_multipliers)
    if (m < 1) throw DataError("DenoiserConfig: depth multipliers must be positive");
  if (res_blocks_per_depth < 1) throw DataError("DenoiserConfig: res_blocks_per_depth must be >= 1");
  if (groups < 1 || base_channels % groups != 0)
    throw DataError("DenoiserConfig: groups must divide base_channels");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw DataError("DenoiserConfig: dropout_rate must be in [0,1)");
  if (gamma_embed_dim < 2 || gamma_embed_dim % 2 != 0)
    throw DataError("DenoiserConfig: gamma_embed_dim must be even and >= 2");
  if (condition_channels < 0) throw DataError("DenoiserConfig: condition_channels must be >= 0");
  if (out_channels < 1) throw DataError("DenoiserConfig: out_channels must be >= 1");
}

template <typename T>
void DenoiserModel<T>::add(const std::string& name, Tensor<T> t) {
  index.emplace(name, int(values.size()));
  names.push_back(name);
  values.push_back(std::move(t));
}

template <typename T>
const Tensor<T>& DenoiserModel<T>::p(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw std::logic_error("DenoiserModel: unknown parameter " + name);
  return values[it->second];
}

template <typename T>
int64_t DenoiserModel<T>::param_count() const {
  int64_t n = 0;
  for (const auto& v : values) n += v.numel();
  return n;
}

template <typename T>
void DenoiserModel<T>::set_requires_grad(bool on) {
  for (auto& v : values) v.requires_grad = on;
}

template <typename T>
Tensor<T> gamma_embedding(double gamma, int dim) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("gamma_embedding: gamma must be in (0,1]");
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("gamma_embedding: dim must be even");
  int half = dim / 2;
  double s = 1000.0 * gamma;
  std::vector<T> v(dim);
  for (int j = 0; j < half; ++j) {
    double omega = half == 1 ? 1.0 : std::pow(10.0, 4.0 * double(j) / double(half - 1));
    v[j] = T(std::sin(s / omega));
    v[half + j] = T(std::cos(s / omega));
  }
  return Tensor<T>::from_vector({1, dim}, std::move(v));
}

template <typename T>
Tensor<T> condition_input(const Tensor<T>& x_lowres, const Tensor<T>& y_t) {
  if (y_t.shape.size() != 3)
    throw std::invalid_argument("condition_input: y_t must be [C,H,W], got " + shape_str(y_t.shape));
  if (x_lowres.shape.empty() || x_lowres.shape[0] == 0) return y_t;
  if (x_lowres.shape.size() != 3)
    throw std::invalid_argument("condition_input: x must be [C,H,W], got " + shape_str(x_lowres.shape));
  Tensor<T> x_up = x_lowres;
  if (x_lowres.shape[1] != y_t.shape[1] || x_lowres.shape[2] != y_t.shape[2]) {
    Image img = Image::from_tensor(x_lowres);
    Image up = bicubic_resize(img, y_t.shape[1], y_t.shape[2], true);
    x_up = up.to_tensor<T>();
  }
  return concat_channels(x_up, y_t);
}

namespace {

template <typename T>
struct Builder {
  DenoiserModel<T>* model;
  Rng* rng;

  Tensor<T> randn_scaled(std::vector<int> shape, double std) {
    Tensor<T> t = Tensor<T>::zeros(shape);
    for (auto& v : *t.data) v = T(rng->normal() * std);
    return t;
  }
  void conv(const std::string& name, int cout, int cin, int k, bool zero = false) {
    double std = zero ? 0.0 : std::sqrt(2.0 / (double(cin) * k * k));
    model->add(name + ".w", zero ? Tensor<T>::zeros({cout, cin, k, k})
                                 : randn_scaled({cout, cin, k, k}, std));
    model->add(name + ".b", Tensor<T>::zeros({cout}));
  }
  void norm(const std::string& name, int c) {
    model->add(name + ".s", Tensor<T>::full({c}, T(1)));
    model->add(name + ".b", Tensor<T>::zeros({c}));
  }
  void linear(const std::string& name, int in, int out) {
    model->add(name + ".w", randn_scaled({in, out}, std::sqrt(1.0 / double(in))));
    model->add(name + ".b", Tensor<T>::zeros({1, out}));
  }
  // Residual block parameters; resampling adds none.
  void res_block(const std::string& name, int cin, int cout, int embed_dim) {
    norm(name + ".gn1", cin);
    conv(name + ".conv1", cout, cin, 3);
    linear(name + ".emb", embed_dim, cout);
    norm(name + ".gn2", cout);
    conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) conv(name + ".skip", cout, cin, 1);
  }
};

enum class BlockResample { none, up, down };

template <typename T>
Tensor<T> run_res_block(const DenoiserModel<T>& m, const std::string& name, const Tensor<T>& x,
                        const Tensor<T>& emb, BlockResample resample, bool train_mode, Rng* rng) {
  const auto& cfg = m.config;
  int cin = x.shape[0];
  Tensor<T> h = group_norm(x, cfg.groups, 1e-5);
  h = scale_channel(h, m.p(name + ".gn1.s"));
  h = bias_add_channel(h, m.p(name + ".gn1.b"));
  h = silu(h);
  if (resample == BlockResample::up) h = resample2x(h, Resample::up);
  if (resample == BlockResample::down) h = resample2x(h, Resample::down);
  h = conv2d(h, m.p(name + ".conv1.w"), Pad::same);
  h = bias_add_channel(h, m.p(name + ".conv1.b"));
  Tensor<T> proj = add(matmul(emb, m.p(name + ".emb.w")), m.p(name + ".emb.b"));
  h = bias_add_channel(h, proj);
  h = group_norm(h, cfg.groups, 1e-5);
  h = scale_channel(h, m.p(name + ".gn2.s"));
  h = bias_add_channel(h, m.p(name + ".gn2.b"));
  h = silu(h);
  if (train_mode && cfg.dropout_rate > 0.0) {
    if (!rng) throw std::invalid_argument("predict_eps: train_mode with dropout needs an rng");
    h = dropout(h, cfg.dropout_rate, *rng);
  }
  h = conv2d(h, m.p(name + ".conv2.w"), Pad::same);
  h = bias_add_channel(h, m.p(name + ".conv2.b"));

  Tensor<T> s = x;
  if (resample == BlockResample::up) s = resample2x(s, Resample::up);
  if (resample == BlockResample::down) s = resample2x(s, Resample::down);
  if (cin != h.shape[0]) {
    s = conv2d(s, m.p(name + ".skip.w"), Pad::same);
    s = bias_add_channel(s, m.p(name + ".skip.b"));
  }
  return mul(add(h, s), T(1.0 / std::sqrt(2.0)));  // rescaled skip connection
}

}  // namespace

template <typename T>
DenoiserModel<T> init_model(const DenoiserConfig& config, Rng& rng) {
  config.validate();
  DenoiserModel<T> model;
  model.config = config;
  Builder<T> b{&model, &rng};
  int depths = config.depths();
  int embed = config.gamma_embed_dim;

  b.conv("stem", config.channels_at(0), config.input_channels(), 3);
  for (int d = 0; d < depths; ++d) {
    if (d > 0) b.res_block("down" + std::to_string(d), config.channels_at(d - 1), config.channels_at(d), embed);
    for (int r = 0; r < config.res_blocks_per_depth; ++r)
      b.res_block("enc" + std::to_string(d) + ".block" + std::to_string(r), config.channels_at(d),
                  config.channels_at(d), embed);
  }
  int bottom = config.channels_at(depths - 1);
  b.res_block("mid0", bottom, bottom, embed);
  b.res_block("mid1", bottom, bottom, embed);
  for (int d = depths - 2; d >= 0; --d) {
    b.res_block("up" + std::to_string(d), config.channels_at(d + 1), config.channels_at(d), embed);
    for (int r = 0; r < config.res_blocks_per_depth; ++r) {
      int cin = r == 0 ? 2 * config.channels_at(d) : config.channels_at(d);
      b.res_block("dec" + std::to_string(d) + ".block" + std::to_string(r), cin, config.channels_at(d),
                  embed);
    }
  }
  b.norm("out.gn", config.channels_at(0));
  b.conv("out", config.out_channels, config.channels_at(0), 3, /*zero=*/true);
  return model;
}

template <typename T>
Tensor<T> predict_eps(const DenoiserModel<T>& model, const Tensor<T>& x, const Tensor<T>& y_t,
                      double gamma, bool train_mode, Rng* rng) {
  const auto& cfg = model.config;
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("predict_eps: gamma must be in (0,1]");
  if (y_t.shape.size() != 3 || y_t.shape[0] != cfg.out_channels)
    throw std::invalid_argument("predict_eps: y_t shape " + shape_str(y_t.shape) +
                                " does not match config out_channels=" + std::to_string(cfg.out_channels));
  if (y_t.shape[1] % cfg.spatial_divisor() != 0 || y_t.shape[2] % cfg.spatial_divisor() != 0)
    throw std::invalid_argument("predict_eps: spatial extent " + shape_str(y_t.shape) +
                                " not divisible by " + std::to_string(cfg.spatial_divisor()));
  Tensor<T> input;
  if (cfg.condition_channels == 0) {
    input = y_t;  // unconditional: x is never touched
  } else {
    if (x.shape.size() != 3 || x.shape[0] != cfg.condition_channels)
      throw std::invalid_argument("predict_eps: condition shape " + shape_str(x.shape) +
                                  " does not match condition_channels=" +
                                  std::to_string(cfg.condition_channels));
    input = condition_input(x, y_t);
  }

  Tensor<T> emb = gamma_embedding<T>(gamma, cfg.gamma_embed_dim);
  int depths = cfg.depths();

  Tensor<T> h = conv2d(input, model.p("stem.w"), Pad::same);
  h = bias_add_channel(h, model.p("stem.b"));
  std::vector<Tensor<T>> skips(depths);
  for (int d = 0; d < depths; ++d) {
    if (d > 0)
      h = run_res_block(model, "down" + std::to_string(d), h, emb, BlockResample::down, train_mode, rng);
    for (int r = 0; r < cfg.res_blocks_per_depth; ++r)
      h = run_res_block(model, "enc" + std::to_string(d) + ".block" + std::to_string(r), h, emb,
                        BlockResample::none, train_mode, rng);
    skips[d] = h;
  }
  h = run_res_block(model, "mid0", h, emb, BlockResample::none, train_mode, rng);
  h = run_res_block(model, "mid1", h, emb, BlockResample::none, train_mode, rng);
  for (int d = depths - 2; d >= 0; --d) {
    h = run_res_block(model, "up" + std::to_string(d), h, emb, BlockResample::up, train_mode, rng);
    h = concat_channels(h, skips[d]);
    for (int r = 0; r < cfg.res_blocks_per_depth; ++r)
      h = run_res_block(model, "dec" + std::to_string(d) + ".block" + std::to_string(r), h, emb,
                        BlockResample::none, train_mode, rng);
  }
  h = group_norm(h, cfg.groups, 1e-5);
  h = scale_channel(h, model.p("out.gn.s"));
  h = bias_add_channel(h, model.p("out.gn.b"));
  h = silu(h);
  h = conv2d(h, model.p("out.w"), Pad::same);
  h = bias_add_channel(h, model.p("out.b"));
  check_finite(h, "predict_eps output");
  return h;
}

#define IRF_INSTANTIATE_DENOISER(T)                                                              \
  template struct DenoiserModel<T>;                                                              \
  template Tensor<T> gamma_embedding<T>(double, int);                                            \
  template Tensor<T> condition_input(const Tensor<T>&, const Tensor<T>&);                        \
  template DenoiserModel<T> init_model(const DenoiserConfig&, Rng&);                             \
  template Tensor<T> predict_eps(const DenoiserModel<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                 double, bool, Rng*);

IRF_INSTANTIATE_DENOISER(float)
IRF_INSTANTIATE_DENOISER(double)

#undef IRF_INSTANTIATE_DENOISER

}  // namespace irf
