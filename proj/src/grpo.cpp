#include "grpolab/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "grpolab/util.hpp"
#include "grpolab/vocab.hpp"

namespace grpolab::grpo {

void GrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo: group_size must be >= 2");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("grpo: clip_eps must be in (0, 1)");
  if (!(kl_beta >= 0.0)) throw ConfigError("grpo: kl_beta must be >= 0");
  if (!(std_eps > 0.0)) throw ConfigError("grpo: std_eps must be > 0");
}

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> r;
  r.reserve(outputs.size());
  for (const auto& o : outputs) r.push_back(static_cast<double>(o.reward));
  return r;
}

bool RolloutGroup::has_correct() const {
  return std::any_of(outputs.begin(), outputs.end(), [](const RolloutOutput& o) { return o.reward == 1; });
}

int compute_reward(std::span<const int> output_tokens, int gold_answer) {
  size_t open = output_tokens.size();
  for (size_t i = 0; i < output_tokens.size(); ++i) {
    if (output_tokens[i] == Vocab::answer_open) {
      open = i;
      break;
    }
  }
  if (open == output_tokens.size()) return 0;
  size_t close = output_tokens.size();
  for (size_t i = open + 1; i < output_tokens.size(); ++i) {
    if (output_tokens[i] == Vocab::answer_close) {
      close = i;
      break;
    }
  }
  if (close == output_tokens.size()) return 0;
  const auto parsed = parse_number(output_tokens.subspan(open + 1, close - open - 1));
  return (parsed && *parsed == gold_answer) ? 1 : 0;
}

std::vector<double> normalize_advantages(std::span<const double> rewards, double std_eps) {
  if (rewards.size() < 2) throw ContractError("normalize_advantages: need at least 2 rewards");
  const auto n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;  // population variance
  const double denom = std::sqrt(var) + std_eps;
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / denom);
  return out;
}

double kl_estimate(double logprob_new, double logprob_ref) {
  const double d = logprob_ref - logprob_new;
  return std::exp(d) - d - 1.0;
}

namespace {

void check_shapes(const RolloutGroup& group,
                  const std::vector<std::vector<double>>& logprob_new,
                  const std::vector<std::vector<double>>& logprob_ref) {
  const size_t g = group.outputs.size();
  if (group.advantages.size() != g)
    throw ContractError("grpo_loss: advantages/outputs size mismatch");
  if (logprob_new.size() != g || logprob_ref.size() != g)
    throw ContractError("grpo_loss: logprob sequence count mismatch");
  for (size_t i = 0; i < g; ++i) {
    const size_t len = group.outputs[i].tokens.size();
    if (len == 0) throw ContractError("grpo_loss: empty output");
    if (group.outputs[i].per_token_logprob_old.size() != len ||
        logprob_new[i].size() != len || logprob_ref[i].size() != len)
      throw ContractError("grpo_loss: per-token logprob shape mismatch");
  }
}

}  // namespace

double grpo_loss(const RolloutGroup& group,
                 const std::vector<std::vector<double>>& logprob_new,
                 const std::vector<std::vector<double>>& logprob_ref,
                 const GrpoConfig& cfg) {
  cfg.validate();
  check_shapes(group, logprob_new, logprob_ref);
  const size_t g = group.outputs.size();
  double objective = 0.0;
  for (size_t i = 0; i < g; ++i) {
    const auto& out = group.outputs[i];
    const double adv = group.advantages[i];
    double per_output = 0.0;
    for (size_t t = 0; t < out.tokens.size(); ++t) {
      const double rho = std::exp(logprob_new[i][t] - out.per_token_logprob_old[t]);
      const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      const double surrogate = std::min(rho * adv, clipped * adv);
      const double kl = kl_estimate(logprob_new[i][t], logprob_ref[i][t]);
      per_output += surrogate - cfg.kl_beta * kl;
    }
    objective += per_output / static_cast<double>(out.tokens.size());
  }
  return -objective / static_cast<double>(g);
}

std::vector<std::vector<double>> grpo_loss_dlogprob_new(
    const RolloutGroup& group, const std::vector<std::vector<double>>& logprob_new,
    const std::vector<std::vector<double>>& logprob_ref, const GrpoConfig& cfg) {
  cfg.validate();
  check_shapes(group, logprob_new, logprob_ref);
  const size_t g = group.outputs.size();
  std::vector<std::vector<double>> grad(g);
  for (size_t i = 0; i < g; ++i) {
    const auto& out = group.outputs[i];
    const double adv = group.advantages[i];
    const double scale = -1.0 / (static_cast<double>(g) * static_cast<double>(out.tokens.size()));
    grad[i].resize(out.tokens.size());
    for (size_t t = 0; t < out.tokens.size(); ++t) {
      const double rho = std::exp(logprob_new[i][t] - out.per_token_logprob_old[t]);
      const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      // min(rho*A, clipped*A): gradient flows only when the unclipped branch
      // is the (weak) minimum; d(rho)/d(lp_new) = rho.
      const double dsurrogate = (rho * adv <= clipped * adv) ? rho * adv : 0.0;
      const double dkl = 1.0 - std::exp(logprob_ref[i][t] - logprob_new[i][t]);
      grad[i][t] = scale * (dsurrogate - cfg.kl_beta * dkl);
    }
  }
  return grad;
}

bool is_valid_sample(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ContractError("is_valid_sample: need at least 2 rewards");
  for (size_t i = 1; i < rewards.size(); ++i)
    if (rewards[i] != rewards[0]) return true;
  return false;
}

double data_utilization_rate(const std::vector<std::vector<double>>& batch) {
  if (batch.empty()) throw ContractError("data_utilization_rate: empty batch");
  int valid = 0;
  for (const auto& r : batch)
    if (is_valid_sample(r)) ++valid;
  return static_cast<double>(valid) / static_cast<double>(batch.size());
}

InvalidBreakdown invalid_breakdown(const std::vector<std::vector<double>>& batch) {
  if (batch.empty()) throw ContractError("invalid_breakdown: empty batch");
  int zeros = 0, ones = 0;
  for (const auto& r : batch) {
    if (std::all_of(r.begin(), r.end(), [](double x) { return x == 0.0; })) ++zeros;
    else if (std::all_of(r.begin(), r.end(), [](double x) { return x == 1.0; })) ++ones;
  }
  const auto n = static_cast<double>(batch.size());
  return {static_cast<double>(zeros) / n, static_cast<double>(ones) / n};
}

}  // namespace grpolab::grpo
