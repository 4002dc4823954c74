#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "grpolab/hint.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/util.hpp"
#include "grpolab/vocab.hpp"

using namespace grpolab;
using hint::HintStrategy;
using hint::Injection;

namespace {

tasks::ReasoningTrace trace_of(int n_steps) {
  tasks::ReasoningTrace trace;
  for (int i = 0; i < n_steps; ++i)
    trace.steps.push_back({Vocab::digit(i % 10), Vocab::plus, Vocab::digit(1), Vocab::equals,
                           Vocab::digit((i + 1) % 10), Vocab::step_sep});
  return trace;
}

tasks::TaskInstance sample_instance(uint64_t seed = 3) {
  tasks::DatasetSpec spec;
  spec.n_train = 8;
  spec.n_test = 2;
  spec.tier_mix = {0.0, 0.0, 0.5, 0.5};
  spec.seed = seed;
  return tasks::gen_dataset(spec).train.front();
}

model::Policy tiny_policy(uint64_t seed = 5) {
  model::ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_head = 2;
  cfg.n_layer = 1;
  return model::Policy::random_init(cfg, seed);
}

grpo::RolloutGroup group_with_rewards(double alpha, const std::vector<int>& rewards) {
  grpo::RolloutGroup g;
  g.hint_ratio = alpha;
  for (int r : rewards) {
    grpo::RolloutOutput out;
    out.tokens = {Vocab::digit(0)};
    out.per_token_logprob_old = {-1.0};
    out.reward = r;
    g.outputs.push_back(std::move(out));
  }
  g.advantages = grpo::normalize_advantages(g.rewards(), 1e-4);
  return g;
}

}  // namespace

TEST_CASE("extract_hint takes floor(L*alpha) steps") {
  SUBCASE("L=6, alpha=1/3 -> first 2 steps") {
    const auto trace = trace_of(6);
    const auto hint_toks = hint::extract_hint(trace, 1.0 / 3.0);
    CHECK(hint_toks == trace.concat(2));
  }
  SUBCASE("alpha=0 -> empty") {
    CHECK(hint::extract_hint(trace_of(4), 0.0).empty());
  }
  SUBCASE("L=5, alpha=2/3 -> floor(10/3)=3 steps") {
    const auto trace = trace_of(5);
    CHECK(hint::extract_hint(trace, 2.0 / 3.0) == trace.concat(3));
  }
  SUBCASE("alpha=1 -> all steps") {
    const auto trace = trace_of(4);
    CHECK(hint::extract_hint(trace, 1.0) == trace.concat(4));
  }
  SUBCASE("binary-double schedule ratios floor to the intended counts") {
    // 6 * (2/3 as a double) = 3.999..., the tolerant floor must yield 4
    const auto trace = trace_of(6);
    CHECK(hint::extract_hint(trace, 2.0 / 3.0) == trace.concat(4));
  }
  SUBCASE("alpha out of range") {
    CHECK_THROWS_AS(hint::extract_hint(trace_of(3), 1.5), ContractError);
    CHECK_THROWS_AS(hint::extract_hint(trace_of(3), -0.1), ContractError);
  }
}

TEST_CASE("hint monotonicity: lower alpha gives a prefix of higher alpha") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto trace = trace_of(1 + rng.uniform_int(6));
    const double a1 = rng.uniform(), a2 = rng.uniform();
    const double lo = std::min(a1, a2), hi = std::max(a1, a2);
    const auto h_lo = hint::extract_hint(trace, lo);
    const auto h_hi = hint::extract_hint(trace, hi);
    REQUIRE(h_lo.size() <= h_hi.size());
    CHECK(std::equal(h_lo.begin(), h_lo.end(), h_hi.begin()));
  }
}

TEST_CASE("inject_query") {
  const auto inst = sample_instance();
  const model::Context no_hint{inst.scene.serialize(), inst.query_tokens, {}};

  SUBCASE("empty hint elides the preamble and equals the no-hint context") {
    CHECK(hint::inject_query(inst, {}) == no_hint);
  }
  SUBCASE("nonempty hint extends only the query") {
    const auto hint_toks = hint::extract_hint(inst.gold_trace, 0.5);
    REQUIRE(!hint_toks.empty());
    const auto ctx = hint::inject_query(inst, hint_toks);
    CHECK(ctx.image_tokens == no_hint.image_tokens);
    CHECK(ctx.prefix_tokens.empty());
    CHECK(ctx.query_tokens.size() == no_hint.query_tokens.size() + 1 + hint_toks.size());
    CHECK(std::equal(no_hint.query_tokens.begin(), no_hint.query_tokens.end(),
                     ctx.query_tokens.begin()));
    CHECK(ctx.query_tokens[no_hint.query_tokens.size()] == Vocab::hint_preamble);
  }
  SUBCASE("two hints differ only in the appended region") {
    const auto a = hint::inject_query(inst, hint::extract_hint(inst.gold_trace, 0.4));
    const auto b = hint::inject_query(inst, hint::extract_hint(inst.gold_trace, 1.0));
    CHECK(a.image_tokens == b.image_tokens);
    const size_t base = inst.query_tokens.size() + 1;  // query + preamble
    CHECK(std::equal(a.query_tokens.begin(), a.query_tokens.begin() + static_cast<long>(base),
                     b.query_tokens.begin()));
  }
}

TEST_CASE("inject_answer") {
  const auto inst = sample_instance();

  SUBCASE("empty hint forces just THINK_OPEN") {
    const auto ctx = hint::inject_answer(inst, {});
    CHECK(ctx.prefix_tokens == std::vector<int>{Vocab::think_open});
    CHECK(ctx == hint::baseline_context(inst));
  }
  SUBCASE("query identical to baseline for any hint") {
    const auto hint_toks = hint::extract_hint(inst.gold_trace, 0.75);
    const auto ctx = hint::inject_answer(inst, hint_toks);
    CHECK(ctx.query_tokens == inst.query_tokens);
    CHECK(ctx.image_tokens == inst.scene.serialize());
    CHECK(ctx.prefix_tokens.size() == hint_toks.size() + 1);
  }
  SUBCASE("baseline reduction: alpha 0 context is the no-hint context plus THINK_OPEN") {
    const auto ctx = hint::inject_answer(inst, hint::extract_hint(inst.gold_trace, 0.0));
    model::Context expected{inst.scene.serialize(), inst.query_tokens, {Vocab::think_open}};
    CHECK(ctx == expected);
  }
}

TEST_CASE("rollout_group") {
  const auto policy = tiny_policy();
  const auto inst = sample_instance();
  grpo::GrpoConfig cfg;
  cfg.group_size = 4;

  SUBCASE("same seed reproduces the group bitwise") {
    const auto a = hint::rollout_group(policy, inst, 0.5, cfg, Injection::Answer, 42, 1.0, 24);
    const auto b = hint::rollout_group(policy, inst, 0.5, cfg, Injection::Answer, 42, 1.0, 24);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(a->hint_ratio == b->hint_ratio);
    CHECK(a->advantages == b->advantages);
    REQUIRE(a->outputs.size() == b->outputs.size());
    for (size_t i = 0; i < a->outputs.size(); ++i) {
      CHECK(a->outputs[i].tokens == b->outputs[i].tokens);
      CHECK(a->outputs[i].per_token_logprob_old == b->outputs[i].per_token_logprob_old);
      CHECK(a->outputs[i].reward == b->outputs[i].reward);
    }
  }

  SUBCASE("alpha 0 with answer injection reduces to the baseline context") {
    const auto g = hint::rollout_group(policy, inst, 0.0, cfg, Injection::Answer, 7, 1.0, 24);
    REQUIRE(g.has_value());
    CHECK(g->context == hint::baseline_context(inst));
  }

  SUBCASE("contract: shapes, advantages, old logprobs") {
    const auto g = hint::rollout_group(policy, inst, 1.0 / 3.0, cfg, Injection::Answer, 9, 1.0, 24);
    REQUIRE(g.has_value());
    CHECK(g->outputs.size() == 4);
    CHECK(g->advantages == grpo::normalize_advantages(g->rewards(), cfg.std_eps));
    for (const auto& out : g->outputs) {
      CHECK(!out.tokens.empty());
      CHECK(out.per_token_logprob_old.size() == out.tokens.size());
      const auto recomputed = model::sequence_logprob(policy, g->context, out.tokens);
      CHECK(out.per_token_logprob_old == recomputed.per_token);
    }
  }

  SUBCASE("context overflow skips the sample") {
    model::ModelConfig cramped;
    cramped.d_model = 8;
    cramped.n_head = 2;
    cramped.n_layer = 1;
    cramped.context_window = 16;  // BOS + 11 image tokens + query will not fit
    const auto small = model::Policy::random_init(cramped, 1);
    CHECK_FALSE(hint::rollout_group(small, inst, 0.0, cfg, Injection::Answer, 1, 1.0, 8).has_value());
  }

  SUBCASE("full-hint rollouts judge answers from the completion") {
    // the gold rendering itself must verify; a corrupted answer must not
    CHECK(grpo::compute_reward(tasks::gold_full_output(inst), inst.gold_answer) == 1);
    auto corrupted = inst;
    corrupted.gold_answer = inst.gold_answer + 1;
    CHECK(grpo::compute_reward(tasks::gold_full_output(corrupted), inst.gold_answer) == 0);
  }
}

TEST_CASE("adaptive_select picks the first group containing a correct answer") {
  SUBCASE("paper ordering example") {
    std::vector<grpo::RolloutGroup> groups;
    groups.push_back(group_with_rewards(0.0, {0, 0, 0, 0}));
    groups.push_back(group_with_rewards(1.0 / 3.0, {0, 0, 1, 0}));
    groups.push_back(group_with_rewards(2.0 / 3.0, {1, 1, 1, 1}));
    const auto* chosen = hint::adaptive_select(groups);
    REQUIRE(chosen != nullptr);
    CHECK(chosen->hint_ratio == 1.0 / 3.0);
  }
  SUBCASE("first group hit") {
    std::vector<grpo::RolloutGroup> groups;
    groups.push_back(group_with_rewards(0.0, {1, 0, 0, 0}));
    groups.push_back(group_with_rewards(0.5, {1, 1, 1, 1}));
    const auto* chosen = hint::adaptive_select(groups);
    REQUIRE(chosen != nullptr);
    CHECK(chosen->hint_ratio == 0.0);
  }
  SUBCASE("all groups all-zero") {
    std::vector<grpo::RolloutGroup> groups;
    groups.push_back(group_with_rewards(0.0, {0, 0}));
    groups.push_back(group_with_rewards(0.5, {0, 0}));
    CHECK(hint::adaptive_select(groups) == nullptr);
  }
  SUBCASE("literal rule keeps an all-correct group") {
    std::vector<grpo::RolloutGroup> groups;
    groups.push_back(group_with_rewards(0.0, {0, 0}));
    groups.push_back(group_with_rewards(0.5, {1, 1}));
    const auto* chosen = hint::adaptive_select(groups);
    REQUIRE(chosen != nullptr);
    CHECK(chosen->hint_ratio == 0.5);
    // the opt-in mixedness flag rejects it
    CHECK(hint::adaptive_select(groups, /*require_mixed=*/true) == nullptr);
  }
}

TEST_CASE("adaptive minimality against a brute-force scan") {
  Rng rng(47);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + rng.uniform_int(4);
    std::vector<grpo::RolloutGroup> groups;
    for (int i = 0; i < m; ++i) {
      std::vector<int> rewards;
      for (int g = 0; g < 4; ++g) rewards.push_back(rng.uniform_int(2));
      groups.push_back(group_with_rewards(static_cast<double>(i) / m, rewards));
    }
    const auto* chosen = hint::adaptive_select(groups);
    double best = 2.0;
    for (const auto& g : groups)
      if (g.has_correct()) best = std::min(best, g.hint_ratio);
    if (best > 1.0) {
      CHECK(chosen == nullptr);
    } else {
      REQUIRE(chosen != nullptr);
      CHECK(chosen->hint_ratio == best);
    }
  }
}

TEST_CASE("ratio_schedule") {
  SUBCASE("fixed 0.25 always") {
    const auto s = HintStrategy::fixed(0.25);
    for (uint64_t seed = 0; seed < 5; ++seed)
      CHECK(hint::ratio_schedule(s, seed) == std::vector<double>{0.25});
  }
  SUBCASE("adaptive M=3 yields (0, 1/3, 2/3)") {
    const auto sched = hint::ratio_schedule(HintStrategy::adaptive(3), 0);
    REQUIRE(sched.size() == 3);
    CHECK(sched[0] == 0.0);
    CHECK(sched[1] == 1.0 / 3.0);
    CHECK(sched[2] == 2.0 / 3.0);
  }
  SUBCASE("adaptive never includes alpha = 1") {
    for (int m = 1; m <= 6; ++m) {
      const auto sched = hint::ratio_schedule(HintStrategy::adaptive(m), 0);
      CHECK(sched.back() < 1.0);
    }
  }
  SUBCASE("random: seeded, repeatable, in [0,1)") {
    const auto s = HintStrategy::random();
    const auto a = hint::ratio_schedule(s, 99);
    const auto b = hint::ratio_schedule(s, 99);
    REQUIRE(a.size() == 1);
    CHECK(a == b);
    CHECK(a[0] >= 0.0);
    CHECK(a[0] < 1.0);
    CHECK(hint::ratio_schedule(s, 100) != a);
  }
  SUBCASE("invalid strategies rejected") {
    CHECK_THROWS_AS(HintStrategy::fixed(1.5), ConfigError);
    CHECK_THROWS_AS(HintStrategy::adaptive(0), ConfigError);
  }
}
