#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "irf/common.hpp"
#include "irf/rng.hpp"
#include "irf/schedule.hpp"
#include "irf/tensor.hpp"

namespace irf {

enum class VarianceMode { forward_default, posterior };

inline VarianceMode variance_mode_from_string(const std::string& s) {
  if (s == "forward_default" || s == "forward") return VarianceMode::forward_default;
  if (s == "posterior") return VarianceMode::posterior;
  throw DataError("unknown variance mode: " + s);
}
inline std::string to_string(VarianceMode m) {
  return m == VarianceMode::forward_default ? "forward_default" : "posterior";
}

struct DiffusionConfig {
  int p_norm = 2;  // objective norm, 1 or 2
  VarianceMode variance_mode = VarianceMode::forward_default;
  // The regression target is always the injected noise; predicting the clean
  // image directly is out of scope.
};

// Conditional noise predictor: (condition, noisy target, gamma) -> estimate.
template <typename T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&, double)>;

template <typename T>
struct PosteriorParams {
  Tensor<T> mu;
  double sigma2 = 0;
};

// One forward step: sqrt(alpha_t) * y_prev + sqrt(1 - alpha_t) * eps.
template <typename T>
Tensor<T> forward_step_sample(const Tensor<T>& y_prev, double alpha_t, const Tensor<T>& eps) {
  if (!(alpha_t > 0.0 && alpha_t < 1.0))
    throw std::invalid_argument("forward_step_sample: alpha_t must be in (0,1)");
  if (y_prev.shape != eps.shape)
    throw std::invalid_argument("forward_step_sample: shape mismatch " + shape_str(y_prev.shape) +
                                " vs " + shape_str(eps.shape));
  return add(mul(y_prev, T(std::sqrt(alpha_t))), mul(eps, T(std::sqrt(1.0 - alpha_t))));
}

// Marginal of the chain: sqrt(gamma) * y0 + sqrt(1 - gamma) * eps.
template <typename T>
Tensor<T> forward_marginal_sample(const Tensor<T>& y0, double gamma, const Tensor<T>& eps) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("forward_marginal_sample: gamma must be in (0,1]");
  if (y0.shape != eps.shape)
    throw std::invalid_argument("forward_marginal_sample: shape mismatch " + shape_str(y0.shape) +
                                " vs " + shape_str(eps.shape));
  return add(mul(y0, T(std::sqrt(gamma))), mul(eps, T(std::sqrt(1.0 - gamma))));
}

// Gaussian posterior q(y_{t-1} | y_0, y_t) of the forward chain.
template <typename T>
PosteriorParams<T> posterior_params(const Tensor<T>& y0, const Tensor<T>& y_t,
                                    const NoiseSchedule& schedule, int t) {
  if (t < 1 || t > schedule.T)
    throw std::invalid_argument("posterior_params: t=" + std::to_string(t) + " outside [1,T]");
  double a = schedule.alpha_t(t);
  double g_prev = schedule.gamma[t - 1];  // gamma_0 = 1 makes t=1 well-defined
  double g = schedule.gamma[t];
  double denom = 1.0 - g;
  double c0 = std::sqrt(g_prev) * (1.0 - a) / denom;
  double ct = std::sqrt(a) * (1.0 - g_prev) / denom;
  PosteriorParams<T> p;
  p.mu = add(mul(y0, T(c0)), mul(y_t, T(ct)));
  p.sigma2 = (1.0 - g_prev) * (1.0 - a) / denom;
  return p;
}

// Plug-in clean-image estimate: (y_t - sqrt(1-gamma_t) * eps_hat) / sqrt(gamma_t).
template <typename T>
Tensor<T> estimate_y0(const Tensor<T>& y_t, const Tensor<T>& eps_hat, double gamma_t) {
  if (!(gamma_t > 0.0 && gamma_t < 1.0))
    throw std::invalid_argument("estimate_y0: gamma_t must be in (0,1)");
  return mul(sub(y_t, mul(eps_hat, T(std::sqrt(1.0 - gamma_t)))), T(1.0 / std::sqrt(gamma_t)));
}

inline double reverse_sigma2(double gamma_t, double alpha_t, VarianceMode mode) {
  if (mode == VarianceMode::forward_default) return 1.0 - alpha_t;
  double g_prev = gamma_t / alpha_t;  // parent gamma on the sampling chain
  return (1.0 - g_prev) * (1.0 - alpha_t) / (1.0 - gamma_t);
}

// One ancestral refinement step. z must be a standard-normal draw, or zero at
// the final step.
template <typename T>
Tensor<T> reverse_step(const DenoiseFn<T>& f, const Tensor<T>& x, const Tensor<T>& y_t,
                       double gamma_t, double alpha_t, const Tensor<T>& z, VarianceMode mode) {
  Tensor<T> eps_hat = f(x, y_t, gamma_t);
  check_finite(eps_hat, "denoiser output");
  double coeff = (1.0 - alpha_t) / std::sqrt(1.0 - gamma_t);
  Tensor<T> mean = mul(sub(y_t, mul(eps_hat, T(coeff))), T(1.0 / std::sqrt(alpha_t)));
  double sigma = std::sqrt(reverse_sigma2(gamma_t, alpha_t, mode));
  if (sigma == 0.0) return mean;
  return add(mean, mul(z, T(sigma)));
}

// Full sampling loop: y_K ~ N(0, I), then reverse_step for k = K..1 with
// z = 0 at k = 1. Deterministic given the rng state.
template <typename T>
Tensor<T> sample(const DenoiseFn<T>& f, const Tensor<T>& x, const std::vector<int>& target_shape,
                 const InferenceSchedule& schedule, Rng& rng, VarianceMode mode) {
  Tensor<T> y = Tensor<T>::randn(target_shape, rng);
  for (int k = schedule.K; k >= 1; --k) {
    Tensor<T> z =
        k > 1 ? Tensor<T>::randn(target_shape, rng) : Tensor<T>::zeros(target_shape);
    y = reverse_step(f, x, y, schedule.gamma_k(k), schedule.alpha_k(k), z, mode);
    check_finite(y, "sample chain at k=" + std::to_string(k));
  }
  return y;
}

// Training objective over one batch: per item draw (gamma, t), corrupt the
// target, and accumulate the p-norm residual of the noise estimate, averaged
// over batch and elements. The result participates in the active tape.
template <typename T>
Tensor<T> training_loss(const DenoiseFn<T>& f,
                        const std::vector<std::pair<Tensor<T>, Tensor<T>>>& batch,
                        const NoiseSchedule& schedule, int p_norm, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
  if (p_norm != 1 && p_norm != 2) throw std::invalid_argument("training_loss: p_norm must be 1 or 2");
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (const auto& [x, y0] : batch) {
    GammaDraw draw = sample_gamma(schedule, rng);
    Tensor<T> eps = Tensor<T>::randn(y0.shape, rng);
    Tensor<T> y_noisy = forward_marginal_sample(y0, draw.gamma, eps);
    Tensor<T> residual = sub(f(x, y_noisy, draw.gamma), eps);
    Tensor<T> per_item =
        p_norm == 2 ? mean_all(mul(residual, residual)) : mean_all(abs_all(residual));
    total = add(total, per_item);
  }
  Tensor<T> loss = elementwise(EwOp::div, total, T(batch.size()));
  if (!all_finite(loss)) throw NumericError("training_loss: non-finite loss");
  return loss;
}

// Gaussian test task: targets are N(m(x), s2 I). Admits a closed-form
// Bayes-optimal noise predictor, used as the sampling oracle in tests.
struct AnalyticGaussianTask {
  std::function<Tensor<double>(const Tensor<double>&)> mean_fn;
  double s2 = 1.0;
  int d = 1;
};

// E[eps | y_noisy, x, gamma] = sqrt(1-g) (y_noisy - sqrt(g) m) / (g s2 + 1 - g).
inline DenoiseFn<double> analytic_oracle_denoiser(const AnalyticGaussianTask& task) {
  if (!(task.s2 >= 0)) throw std::invalid_argument("analytic_oracle_denoiser: s2 must be >= 0");
  auto mean_fn = task.mean_fn;
  double s2 = task.s2;
  return [mean_fn, s2](const Tensor<double>& x, const Tensor<double>& y_noisy, double gamma) {
    Tensor<double> m = mean_fn(x);
    double denom = gamma * s2 + 1.0 - gamma;
    double scale = std::sqrt(1.0 - gamma) / denom;
    return mul(sub(y_noisy, mul(m, std::sqrt(gamma))), scale);
  };
}

// Score of the corruption marginal: -eps_hat / sqrt(1 - gamma).
template <typename T>
Tensor<T> score_from_eps(const Tensor<T>& eps_hat, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("score_from_eps: gamma must be in (0,1)");
  return mul(eps_hat, T(-1.0 / std::sqrt(1.0 - gamma)));
}

// Per-step latent term of the variational bound: closed-form KL between the
// chain posterior and the model's reverse Gaussian. At t = 1 the bound has a
// reconstruction term instead; this returns the squared-error surrogate
// ||mu_model - y0||^2 there.
template <typename T>
double kl_term(const NoiseSchedule& schedule, int t, const Tensor<T>& y0, const Tensor<T>& y_t,
               const DenoiseFn<T>& f, const Tensor<T>& x, VarianceMode mode) {
  if (t < 1 || t > schedule.T)
    throw std::invalid_argument("kl_term: t=" + std::to_string(t) + " outside [1,T]");
  double a = schedule.alpha_t(t);
  double g = schedule.gamma[t];
  Tensor<T> eps_hat = f(x, y_t, g);
  double coeff = (1.0 - a) / std::sqrt(1.0 - g);
  Tensor<T> mu_model = mul(sub(y_t, mul(eps_hat, T(coeff))), T(1.0 / std::sqrt(a)));
  if (t == 1) {
    Tensor<T> diff = sub(mu_model, y0);
    return sum_all(mul(diff, diff)).scalar_value();
  }
  PosteriorParams<T> q = posterior_params(y0, y_t, schedule, t);
  double var_q = q.sigma2;
  double var_p = mode == VarianceMode::forward_default
                     ? 1.0 - a
                     : (1.0 - schedule.gamma[t - 1]) * (1.0 - a) / (1.0 - g);
  if (var_p == 0.0 && var_q > 0.0)
    throw NumericError("kl_term: model variance is zero while posterior variance is not");
  Tensor<T> diff = sub(q.mu, mu_model);
  double sq = sum_all(mul(diff, diff)).scalar_value();
  double n = double(y0.numel());
  double kl = n * (0.5 * std::log(var_p / var_q) + var_q / (2.0 * var_p) - 0.5) + sq / (2.0 * var_p);
  return std::max(kl, 0.0);
}

}  // namespace irf
