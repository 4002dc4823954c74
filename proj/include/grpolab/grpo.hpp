#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grpolab/model.hpp"

namespace grpolab::grpo {

struct GrpoConfig {
  int group_size = 8;      // G
  double clip_eps = 0.2;   // surrogate clip range
  double kl_beta = 0.04;   // weight of the KL penalty against the reference policy
  double std_eps = 1e-4;   // offset added to the reward std to avoid division by zero
  void validate() const;
};

// One sampled completion: the generated suffix only (never the hint prefix),
// its per-token log-probs under the old policy, and the 0/1 accuracy reward.
struct RolloutOutput {
  std::vector<int> tokens;
  std::vector<double> per_token_logprob_old;
  int reward = 0;
};

// G completions for one sample at one hint ratio, sharing a context.
struct RolloutGroup {
  int64_t sample_id = 0;
  double hint_ratio = 0.0;
  model::Context context;
  std::vector<RolloutOutput> outputs;
  std::vector<double> advantages;

  std::vector<double> rewards() const;
  bool has_correct() const;
};

// 1 iff the span strictly between the first ANSWER_OPEN and the first
// ANSWER_CLOSE after it parses as a number equal to gold_answer (numeric
// comparison, so leading zeros are accepted). Malformed output scores 0.
int compute_reward(std::span<const int> output_tokens, int gold_answer);

// out[i] = (r_i - mean(r)) / (population_std(r) + std_eps)
std::vector<double> normalize_advantages(std::span<const double> rewards, double std_eps);

// Nonnegative per-token KL estimator: exp(d) - d - 1 with d = ref - new.
double kl_estimate(double logprob_new, double logprob_ref);

// Negative clipped surrogate with KL penalty:
//   -(1/G) sum_i (1/|o_i|) sum_t [ min(rho*A, clip(rho,1-eps,1+eps)*A)
//                                  - beta * kl_estimate ]
// where rho = exp(lp_new - lp_old). Token sums range over the generated
// suffix only (the hint prefix is not part of the outputs by construction).
double grpo_loss(const RolloutGroup& group,
                 const std::vector<std::vector<double>>& logprob_new,
                 const std::vector<std::vector<double>>& logprob_ref,
                 const GrpoConfig& cfg);

// d grpo_loss / d logprob_new, same shapes as logprob_new. The new policy's
// log-probs are the only input the parameters reach the loss through.
std::vector<std::vector<double>> grpo_loss_dlogprob_new(
    const RolloutGroup& group, const std::vector<std::vector<double>>& logprob_new,
    const std::vector<std::vector<double>>& logprob_ref, const GrpoConfig& cfg);

// true iff the rewards are not all equal (nonzero std), i.e. the sample can
// produce a nonzero policy gradient.
bool is_valid_sample(std::span<const double> rewards);

// Fraction of reward vectors with nonzero std.
double data_utilization_rate(const std::vector<std::vector<double>>& batch);

struct InvalidBreakdown {
  double frac_all_zero = 0.0;
  double frac_all_one = 0.0;
};

// Fractions of all-zero and all-one reward vectors; together with the data
// utilization rate they partition the batch.
InvalidBreakdown invalid_breakdown(const std::vector<std::vector<double>>& batch);

}  // namespace grpolab::grpo
