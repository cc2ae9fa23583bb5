#include "irf/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "irf/common.hpp"

namespace irf {

void NoiseSchedule::validate() const {
  if (T < 1) throw DataError("NoiseSchedule: T must be >= 1");
  if (int(alpha.size()) != T || int(gamma.size()) != T + 1)
    throw DataError("NoiseSchedule: array sizes do not match T=" + std::to_string(T));
  if (gamma[0] != 1.0) throw DataError("NoiseSchedule: gamma_0 must be 1");
  for (int t = 1; t <= T; ++t) {
    double a = alpha[t - 1];
    if (!(a > 0.0 && a < 1.0))
      throw DataError("NoiseSchedule: alpha_" + std::to_string(t) + " = " + std::to_string(a) +
                      " outside (0,1)");
    if (!(gamma[t] < gamma[t - 1]))
      throw DataError("NoiseSchedule: gamma not strictly decreasing at t=" + std::to_string(t));
    double err = std::abs(gamma[t] - a * gamma[t - 1]);
    if (err > 1e-15 * gamma[t - 1])
      throw DataError("NoiseSchedule: gamma_t != alpha_t * gamma_{t-1} at t=" + std::to_string(t));
  }
}

void InferenceSchedule::validate(double parent_gamma_T) const {
  if (K < 1) throw DataError("InferenceSchedule: K must be >= 1");
  if (int(gamma_prime.size()) != K + 1 || int(alpha_prime.size()) != K)
    throw DataError("InferenceSchedule: array sizes do not match K=" + std::to_string(K));
  if (gamma_prime[0] != 1.0) throw DataError("InferenceSchedule: gamma'_0 must be 1");
  if (gamma_prime[K] > parent_gamma_T)
    throw DataError("InferenceSchedule: gamma'_K exceeds parent gamma_T");
  for (int k = 1; k <= K; ++k) {
    if (!(gamma_prime[k] < gamma_prime[k - 1]))
      throw DataError("InferenceSchedule: gamma' not strictly decreasing at k=" + std::to_string(k));
    if (!(alpha_prime[k - 1] > 0.0 && alpha_prime[k - 1] < 1.0))
      throw DataError("InferenceSchedule: alpha'_" + std::to_string(k) + " outside (0,1)");
  }
}

std::string to_string(ScheduleFamily f) {
  switch (f) {
    case ScheduleFamily::linear_beta: return "linear_beta";
    case ScheduleFamily::cosine: return "cosine";
    case ScheduleFamily::geometric_gamma: return "geometric_gamma";
  }
  return "?";
}

std::string to_string(InferenceStrategy s) {
  return s == InferenceStrategy::subsample_index ? "subsample_index" : "geometric_gamma";
}

ScheduleFamily schedule_family_from_string(const std::string& s) {
  if (s == "linear_beta") return ScheduleFamily::linear_beta;
  if (s == "cosine") return ScheduleFamily::cosine;
  if (s == "geometric_gamma") return ScheduleFamily::geometric_gamma;
  throw DataError("unknown schedule family: " + s);
}

InferenceStrategy inference_strategy_from_string(const std::string& s) {
  if (s == "subsample_index" || s == "subsample") return InferenceStrategy::subsample_index;
  if (s == "geometric_gamma" || s == "geometric") return InferenceStrategy::geometric_gamma;
  throw DataError("unknown inference strategy: " + s);
}

NoiseSchedule build_schedule(ScheduleFamily family, const ScheduleParams& params, int T) {
  if (T < 1) throw DataError("build_schedule: T must be >= 1");
  NoiseSchedule s;
  s.T = T;
  s.alpha.resize(T);
  switch (family) {
    case ScheduleFamily::linear_beta: {
      if (!(params.beta_start > 0 && params.beta_start <= params.beta_end && params.beta_end < 1))
        throw DataError("build_schedule: linear_beta requires 0 < beta_start <= beta_end < 1");
      for (int t = 1; t <= T; ++t) {
        double frac = T == 1 ? 0.0 : double(t - 1) / double(T - 1);
        double beta = params.beta_start + (params.beta_end - params.beta_start) * frac;
        s.alpha[t - 1] = 1.0 - beta;
      }
      break;
    }
    case ScheduleFamily::cosine: {
      double off = params.cosine_offset;
      if (!(off > 0)) throw DataError("build_schedule: cosine offset must be > 0");
      auto f = [&](double t) {
        double c = std::cos((t / T + off) / (1.0 + off) * M_PI / 2.0);
        return c * c;
      };
      double f0 = f(0.0);
      double prev = 1.0;
      for (int t = 1; t <= T; ++t) {
        double g = f(double(t)) / f0;
        double a = g / prev;
        a = std::min(0.9999, std::max(1e-4, a));
        s.alpha[t - 1] = a;
        prev = prev * a;
      }
      break;
    }
    case ScheduleFamily::geometric_gamma: {
      if (!(params.gamma_end > 0 && params.gamma_end < 1))
        throw DataError("build_schedule: geometric_gamma requires gamma_end in (0,1)");
      double a = std::exp(std::log(params.gamma_end) / T);
      for (int t = 1; t <= T; ++t) s.alpha[t - 1] = a;
      break;
    }
  }
  s.gamma.resize(T + 1);
  s.gamma[0] = 1.0;
  for (int t = 1; t <= T; ++t) s.gamma[t] = s.alpha[t - 1] * s.gamma[t - 1];
  s.validate();
  return s;
}

NoiseSchedule default_schedule(int T) {
  ScheduleParams p;
  double rescale = 1000.0 / double(T);
  p.beta_start = 1e-4 * rescale;
  p.beta_end = 2e-2 * rescale;
  return build_schedule(ScheduleFamily::linear_beta, p, T);
}

GammaDraw sample_gamma(const NoiseSchedule& schedule, Rng& rng) {
  int t = int(rng.uniform_int(1, schedule.T));
  double hi = schedule.gamma[t - 1];
  double lo = schedule.gamma[t];
  double u;
  do {
    u = rng.uniform();
  } while (u == 0.0);  // keep the interval open at gamma_t
  return GammaDraw{lo + (hi - lo) * u, t};
}

InferenceSchedule make_inference_schedule(const NoiseSchedule& train, int K, InferenceStrategy strategy) {
  if (K < 1 || K > train.T)
    throw DataError("make_inference_schedule: K=" + std::to_string(K) + " outside [1, T=" +
                    std::to_string(train.T) + "]");
  InferenceSchedule s;
  s.K = K;
  s.gamma_prime.resize(K + 1);
  s.gamma_prime[0] = 1.0;
  double gT = train.gamma[train.T];
  if (strategy == InferenceStrategy::subsample_index) {
    for (int k = 1; k <= K; ++k) {
      int idx = int((int64_t(k) * train.T) / K);  // floor; strictly increasing, ends at T
      s.gamma_prime[k] = train.gamma[idx];
    }
  } else {
    double lg = std::log(gT);
    for (int k = 1; k < K; ++k) s.gamma_prime[k] = std::exp(lg * double(k) / double(K));
    s.gamma_prime[K] = gT;  // endpoint exact
  }
  s.alpha_prime.resize(K);
  for (int k = 1; k <= K; ++k) s.alpha_prime[k - 1] = s.gamma_prime[k] / s.gamma_prime[k - 1];
  s.validate(gT);
  return s;
}

ScheduleSearchResult search_inference_schedule(
    const NoiseSchedule& train, const std::vector<ScheduleCandidate>& candidates,
    const std::function<double(const InferenceSchedule&, const ScheduleCandidate&)>& sample_and_score) {
  if (candidates.empty()) throw DataError("search_inference_schedule: empty candidate list");
  ScheduleSearchResult result;
  result.scores.resize(candidates.size());
  const double inf = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < candidates.size(); ++i) {
    double score;
    try {
      InferenceSchedule inf_sched = make_inference_schedule(train, candidates[i].K, candidates[i].strategy);
      score = sample_and_score(inf_sched, candidates[i]);
      if (std::isnan(score)) score = inf;
    } catch (const std::exception&) {
      score = inf;  // failed candidates lose, they do not crash the search
    }
    result.scores[i] = score;
    if (result.best_index < 0) {
      result.best_index = int(i);
      continue;
    }
    double best = result.scores[result.best_index];
    int best_k = candidates[result.best_index].K;
    if (score < best || (score == best && candidates[i].K < best_k)) result.best_index = int(i);
  }
  return result;
}

std::string schedule_to_text(const NoiseSchedule& s, ScheduleFamily family) {
  std::ostringstream os;
  os.precision(17);
  os << "T=" << s.T << " family=" << to_string(family) << "\n";
  for (int t = 1; t <= s.T; ++t) os << t << " " << s.alpha[t - 1] << " " << s.gamma[t] << "\n";
  return os.str();
}

NoiseSchedule schedule_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header)) throw DataError("schedule_from_text: empty input");
  NoiseSchedule s;
  if (sscanf(header.c_str(), "T=%d", &s.T) != 1 || s.T < 1)
    throw DataError("schedule_from_text: bad header line: " + header);
  s.alpha.resize(s.T);
  s.gamma.assign(s.T + 1, 1.0);
  for (int t = 1; t <= s.T; ++t) {
    int tt;
    double a, g;
    if (!(is >> tt >> a >> g) || tt != t)
      throw DataError("schedule_from_text: bad row at t=" + std::to_string(t));
    s.alpha[t - 1] = a;
    s.gamma[t] = g;
  }
  s.validate();
  return s;
}

}  // namespace irf
