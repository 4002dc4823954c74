#include "grpolab/hint.hpp"

#include <cmath>

#include "grpolab/rng.hpp"
#include "grpolab/util.hpp"
#include "grpolab/vocab.hpp"

namespace grpolab::hint {

HintStrategy HintStrategy::fixed(double alpha) {
  HintStrategy s;
  s.kind = Kind::Fixed;
  s.alpha = alpha;
  s.validate();
  return s;
}

HintStrategy HintStrategy::random() {
  HintStrategy s;
  s.kind = Kind::Random;
  return s;
}

HintStrategy HintStrategy::adaptive(int m) {
  HintStrategy s;
  s.kind = Kind::Adaptive;
  s.m = m;
  s.validate();
  return s;
}

void HintStrategy::validate() const {
  if (kind == Kind::Fixed && !(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("hint: fixed alpha must be in [0, 1]");
  if (kind == Kind::Adaptive && m < 1) throw ConfigError("hint: adaptive M must be >= 1");
}

std::vector<int> extract_hint(const tasks::ReasoningTrace& trace, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("extract_hint: alpha out of [0, 1]");
  const auto total = static_cast<double>(trace.steps.size());
  const int k = static_cast<int>(std::floor(total * alpha + 1e-9));
  return trace.concat(k);
}

model::Context inject_query(const tasks::TaskInstance& sample, std::span<const int> hint) {
  model::Context ctx;
  ctx.image_tokens = sample.scene.serialize();
  ctx.query_tokens = sample.query_tokens;
  if (!hint.empty()) {
    ctx.query_tokens.push_back(Vocab::hint_preamble);
    ctx.query_tokens.insert(ctx.query_tokens.end(), hint.begin(), hint.end());
  }
  return ctx;
}

model::Context inject_answer(const tasks::TaskInstance& sample, std::span<const int> hint) {
  model::Context ctx;
  ctx.image_tokens = sample.scene.serialize();
  ctx.query_tokens = sample.query_tokens;
  ctx.prefix_tokens.reserve(hint.size() + 1);
  ctx.prefix_tokens.push_back(Vocab::think_open);
  ctx.prefix_tokens.insert(ctx.prefix_tokens.end(), hint.begin(), hint.end());
  return ctx;
}

model::Context baseline_context(const tasks::TaskInstance& sample) {
  return inject_answer(sample, {});
}

std::optional<grpo::RolloutGroup> rollout_group(const model::Policy& old_policy,
                                                const tasks::TaskInstance& sample, double alpha,
                                                const grpo::GrpoConfig& cfg, Injection injection,
                                                uint64_t seed, double temperature,
                                                int max_new_tokens) {
  cfg.validate();
  const auto hint_tokens = extract_hint(sample.gold_trace, alpha);
  model::Context ctx = injection == Injection::Query ? inject_query(sample, hint_tokens)
                                                     : inject_answer(sample, hint_tokens);
  // Room for at least the closing markers plus one answer digit.
  if (ctx.flat_size() + 4 > old_policy.cfg.context_window) return std::nullopt;

  grpo::RolloutGroup group;
  group.sample_id = sample.id;
  group.hint_ratio = alpha;
  group.context = ctx;
  group.outputs.resize(static_cast<size_t>(cfg.group_size));
  for (int g = 0; g < cfg.group_size; ++g) {
    const uint64_t rollout_seed = derive_seed(seed, {static_cast<uint64_t>(g)});
    auto sampled = model::sample_sequence_scored(old_policy, ctx, max_new_tokens, temperature,
                                                 rollout_seed);
    // Rewards parse hint + completion so answers are judged in hint context.
    std::vector<int> full = ctx.prefix_tokens;
    full.insert(full.end(), sampled.tokens.begin(), sampled.tokens.end());
    auto& out = group.outputs[static_cast<size_t>(g)];
    out.reward = grpo::compute_reward(full, sample.gold_answer);
    out.tokens = std::move(sampled.tokens);
    out.per_token_logprob_old = std::move(sampled.per_token_logprob);
  }
  group.advantages = grpo::normalize_advantages(group.rewards(), cfg.std_eps);
  return group;
}

const grpo::RolloutGroup* adaptive_select(std::span<const grpo::RolloutGroup> groups,
                                          bool require_mixed) {
  for (const auto& group : groups) {
    if (!group.has_correct()) continue;
    if (require_mixed && !grpo::is_valid_sample(group.rewards())) continue;
    return &group;
  }
  return nullptr;
}

std::vector<double> ratio_schedule(const HintStrategy& strategy, uint64_t seed) {
  strategy.validate();
  switch (strategy.kind) {
    case HintStrategy::Kind::Fixed:
      return {strategy.alpha};
    case HintStrategy::Kind::Random: {
      Rng rng(seed);
      return {rng.uniform()};
    }
    case HintStrategy::Kind::Adaptive: {
      std::vector<double> ratios;
      ratios.reserve(static_cast<size_t>(strategy.m));
      for (int i = 1; i <= strategy.m; ++i)
        ratios.push_back(static_cast<double>(i - 1) / static_cast<double>(strategy.m));
      return ratios;
    }
  }
  throw ContractError("ratio_schedule: unreachable");
}

}  // namespace grpolab::hint
