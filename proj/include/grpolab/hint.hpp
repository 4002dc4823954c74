#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "grpolab/grpo.hpp"
#include "grpolab/model.hpp"
#include "grpolab/tasks.hpp"

namespace grpolab::hint {

// Hint-level scheduling policy: fixed(alpha) | random | adaptive(M).
struct HintStrategy {
  enum class Kind { Fixed, Random, Adaptive };
  Kind kind = Kind::Fixed;
  double alpha = 0.0;  // Fixed
  int m = 3;           // Adaptive

  static HintStrategy fixed(double alpha);
  static HintStrategy random();
  static HintStrategy adaptive(int m);
  void validate() const;
};

enum class Injection { Query, Answer };

// First floor(L*alpha) gold steps, separators included. The floor is
// evaluated with a 1e-9 tie tolerance so schedule ratios like 1/3 stored as
// binary doubles land on the intended step counts.
std::vector<int> extract_hint(const tasks::ReasoningTrace& trace, double alpha);

// I_query: hint appended to the query behind a fixed preamble token;
// generation starts from an empty prefix. An empty hint elides the preamble.
model::Context inject_query(const tasks::TaskInstance& sample, std::span<const int> hint);

// I_answer: query untouched; the hint becomes the forced beginning of the
// output (prefix = THINK_OPEN + hint).
model::Context inject_answer(const tasks::TaskInstance& sample, std::span<const int> hint);

// The no-hint rollout/eval context: inject_answer with an empty hint.
model::Context baseline_context(const tasks::TaskInstance& sample);

// G completions from the old policy under the hinted context. Rewards are
// parsed over prefix + completion; old log-probs cover the generated suffix
// only; advantages normalized within the group. nullopt when the hinted
// context cannot fit the window (sample skipped, not fatal).
std::optional<grpo::RolloutGroup> rollout_group(const model::Policy& old_policy,
                                                const tasks::TaskInstance& sample, double alpha,
                                                const grpo::GrpoConfig& cfg, Injection injection,
                                                uint64_t seed, double temperature = 1.0,
                                                int max_new_tokens = 64);

// First group (ascending hint ratio) whose rewards contain a correct answer;
// nullptr when every group is all-zero. With require_mixed the group must
// also have nonzero reward std.
const grpo::RolloutGroup* adaptive_select(std::span<const grpo::RolloutGroup> groups,
                                          bool require_mixed = false);

// The hint ratios one sample sees this step: fixed -> {alpha},
// random -> one seeded Uniform[0,1) draw, adaptive(M) -> {(i-1)/M}.
std::vector<double> ratio_schedule(const HintStrategy& strategy, uint64_t seed);

}  // namespace grpolab::hint
