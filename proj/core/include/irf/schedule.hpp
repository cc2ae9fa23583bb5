#pragma once

#include <functional>
#include <string>
#include <vector>

#include "irf/rng.hpp"

namespace irf {

// Training noise schedule. alpha[t-1] holds the per-step signal retention
// for step t in 1..T; gamma[t] is the running product with gamma[0] = 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;  // size T, 0 < alpha_t < 1
  std::vector<double> gamma;  // size T+1, gamma[0] = 1, strictly decreasing

  double alpha_t(int t) const { return alpha[t - 1]; }
  double gamma_t(int t) const { return gamma[t]; }
  void validate() const;  // throws DataError on any invariant violation
};

// Shorter schedule used at sampling time; gamma_prime[K] matches the parent
// training schedule's gamma_T, alpha_prime derived by ratio.
struct InferenceSchedule {
  int K = 0;
  std::vector<double> gamma_prime;  // size K+1, [0] = 1, decreasing
  std::vector<double> alpha_prime;  // size K, in (0,1)

  double alpha_k(int k) const { return alpha_prime[k - 1]; }
  double gamma_k(int k) const { return gamma_prime[k]; }
  void validate(double parent_gamma_T) const;
};

enum class ScheduleFamily { linear_beta, cosine, geometric_gamma };
enum class InferenceStrategy { subsample_index, geometric_gamma };

std::string to_string(ScheduleFamily f);
std::string to_string(InferenceStrategy s);
ScheduleFamily schedule_family_from_string(const std::string& s);
InferenceStrategy inference_strategy_from_string(const std::string& s);

struct ScheduleParams {
  double beta_start = 1e-4;   // linear_beta
  double beta_end = 2e-2;     // linear_beta
  double cosine_offset = 0.008;
  double gamma_end = 1e-3;    // geometric_gamma
};

NoiseSchedule build_schedule(ScheduleFamily family, const ScheduleParams& params, int T);

// linear_beta with the 1e-4..2e-2 endpoints defined at T=1000, rescaled by
// 1000/T so gamma_T stays T-independent.
NoiseSchedule default_schedule(int T);

// Draws t uniform on {1..T}, then gamma uniform on the open segment
// (gamma_t, gamma_{t-1}).
struct GammaDraw {
  double gamma;
  int t;
};
GammaDraw sample_gamma(const NoiseSchedule& schedule, Rng& rng);

InferenceSchedule make_inference_schedule(const NoiseSchedule& train, int K, InferenceStrategy strategy);

struct ScheduleCandidate {
  int K;
  InferenceStrategy strategy;
};

struct ScheduleSearchResult {
  int best_index = -1;
  std::vector<double> scores;  // aligned with the candidate list
};

// Evaluates every candidate with sample_and_score (built from the model and
// evaluation set by the caller) and returns the argmin. A throwing candidate
// scores +inf. Ties break toward fewer steps K, then first-listed.
ScheduleSearchResult search_inference_schedule(
    const NoiseSchedule& train, const std::vector<ScheduleCandidate>& candidates,
    const std::function<double(const InferenceSchedule&, const ScheduleCandidate&)>& sample_and_score);

// Text dump: header line "T=<n> family=<f>", then "t alpha gamma" rows with
// 17 significant digits.
std::string schedule_to_text(const NoiseSchedule& s, ScheduleFamily family);
NoiseSchedule schedule_from_text(const std::string& text);

}  // namespace irf
