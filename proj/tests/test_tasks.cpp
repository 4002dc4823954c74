#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "grpolab/grpo.hpp"
#include "grpolab/hint.hpp"
#include "grpolab/tasks.hpp"
#include "grpolab/util.hpp"
#include "grpolab/vocab.hpp"

using namespace grpolab;
using tasks::DatasetSpec;
using tasks::Scene;
using tasks::TaskInstance;

namespace {

// independent trace evaluator: parse each step "a op b = c", check the
// arithmetic, check the chain, return the final value
int reevaluate_trace(const tasks::ReasoningTrace& trace) {
  REQUIRE(!trace.steps.empty());
  auto parse_num = [](std::span<const int> toks, size_t& i) {
    int v = 0;
    REQUIRE(Vocab::is_digit(toks[i]));
    while (i < toks.size() && Vocab::is_digit(toks[i])) v = v * 10 + Vocab::digit_value(toks[i++]);
    return v;
  };
  int carry = -1;
  for (size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& step = trace.steps[s];
    REQUIRE(step.back() == Vocab::step_sep);
    std::span<const int> toks(step.data(), step.size() - 1);
    size_t i = 0;
    const int lhs = parse_num(toks, i);
    if (i == toks.size()) {  // tier-1 lookup step: a bare value
      carry = lhs;
      continue;
    }
    const int op = toks[i++];
    const int rhs = parse_num(toks, i);
    REQUIRE(toks[i++] == Vocab::equals);
    const int result = parse_num(toks, i);
    REQUIRE(i == toks.size());
    REQUIRE((op == Vocab::plus || op == Vocab::times));
    CHECK(result == (op == Vocab::plus ? lhs + rhs : lhs * rhs));
    if (s > 0) CHECK(lhs == carry);  // each step continues from the last
    carry = result;
  }
  return carry;
}

DatasetSpec small_spec() {
  DatasetSpec spec;
  spec.n_train = 40;
  spec.n_test = 20;
  spec.seed = 11;
  return spec;
}

}  // namespace

TEST_CASE("scene serialization round-trips in 11 tokens") {
  Scene scene;
  int v = 0;
  for (auto& row : scene.grid)
    for (auto& cell : row) cell = (v += 3) % 10;
  const auto ser = scene.serialize();
  CHECK(ser.size() == 11);
  CHECK(Scene::deserialize(ser) == scene);
  CHECK_THROWS_AS(Scene::deserialize(std::span<const int>(ser.data(), 10)), ContractError);
}

TEST_CASE("gen_dataset is deterministic") {
  const auto a = tasks::gen_dataset(small_spec());
  const auto b = tasks::gen_dataset(small_spec());
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
}

TEST_CASE("gen_dataset respects the shortcut fraction at the extremes") {
  SUBCASE("fraction 0: no scene digit tokens in any query") {
    auto spec = small_spec();
    spec.shortcut_fraction = 0.0;
    const auto ds = tasks::gen_dataset(spec);
    for (const auto& inst : ds.train) {
      CHECK_FALSE(inst.shortcut);
      for (int tok : inst.query_tokens) CHECK_FALSE(Vocab::is_digit(tok));
    }
  }
  SUBCASE("fraction 1: every query restates the needed digits") {
    auto spec = small_spec();
    spec.shortcut_fraction = 1.0;
    const auto ds = tasks::gen_dataset(spec);
    for (const auto& inst : ds.train) {
      CHECK(inst.shortcut);
      CHECK(std::count(inst.query_tokens.begin(), inst.query_tokens.end(), Vocab::q_vals) == 1);
    }
  }
}

TEST_CASE("tier counts under a uniform mix stay within multinomial bounds") {
  DatasetSpec spec;
  spec.n_train = 100;
  spec.n_test = 10;
  spec.seed = 7;
  const auto ds = tasks::gen_dataset(spec);
  std::array<int, 4> counts{};
  for (const auto& inst : ds.train) ++counts[static_cast<size_t>(inst.tier - 1)];
  for (int t = 0; t < 4; ++t) {
    INFO("tier ", t + 1, " count ", counts[static_cast<size_t>(t)]);
    CHECK(counts[static_cast<size_t>(t)] >= 15);
    CHECK(counts[static_cast<size_t>(t)] <= 35);
  }
}

TEST_CASE("oracle_solve on pinned examples") {
  SUBCASE("sum of row 0 over [2,3,4]") {
    TaskInstance inst;
    inst.scene.grid = {{{2, 3, 4}, {5, 6, 7}, {8, 9, 1}}};
    inst.query_tokens = {Vocab::q_sum, Vocab::line_token(0, 0)};
    const auto result = tasks::oracle_solve(inst);
    CHECK(result.answer == 9);
    REQUIRE(result.steps.steps.size() == 2);
    CHECK(render_tokens(result.steps.steps[0]) == "2 + 3 = 5 ;");
    CHECK(render_tokens(result.steps.steps[1]) == "5 + 4 = 9 ;");
  }
  SUBCASE("tier-1 lookup of the center cell") {
    TaskInstance inst;
    inst.scene.grid = {{{0, 1, 2}, {3, 7, 5}, {6, 8, 9}}};
    inst.query_tokens = {Vocab::q_cell, Vocab::cell_token(1, 1)};
    const auto result = tasks::oracle_solve(inst);
    CHECK(result.answer == 7);
    CHECK(result.steps.steps.size() == 1);
  }
  SUBCASE("malformed query") {
    TaskInstance inst;
    inst.query_tokens = {Vocab::q_sum, Vocab::q_cell};
    CHECK_THROWS_AS(tasks::oracle_solve(inst), ContractError);
  }
}

TEST_CASE("oracle soundness over 10000 generated instances") {
  DatasetSpec spec;
  spec.n_train = 9000;
  spec.n_test = 1000;
  spec.shortcut_fraction = 0.5;
  spec.seed = 1234;
  const auto ds = tasks::gen_dataset(spec);
  auto check_split = [](const std::vector<TaskInstance>& split) {
    for (const auto& inst : split) {
      CHECK(reevaluate_trace(inst.gold_trace) == inst.gold_answer);
      CHECK(static_cast<int>(inst.gold_trace.steps.size()) == inst.tier);
      CHECK(inst.gold_answer >= 0);
      CHECK(inst.gold_answer <= 9999);
      const auto oracle = tasks::oracle_solve(inst);
      CHECK(oracle.answer == inst.gold_answer);
      CHECK(oracle.steps == inst.gold_trace);
    }
  };
  check_split(ds.train);
  check_split(ds.test);
}

TEST_CASE("extract_hint never contains the answer marker") {
  auto spec = small_spec();
  spec.shortcut_fraction = 0.3;
  const auto ds = tasks::gen_dataset(spec);
  for (const auto& inst : ds.train) {
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto hint = hint::extract_hint(inst.gold_trace, alpha);
      CHECK(std::count(hint.begin(), hint.end(), Vocab::answer_open) == 0);
    }
  }
}

TEST_CASE("shortcut property: the query alone determines the answer iff shortcut") {
  auto spec = small_spec();
  spec.shortcut_fraction = 0.5;
  spec.n_train = 80;
  const auto ds = tasks::gen_dataset(spec);
  int shortcuts = 0;
  for (const auto& inst : ds.train) {
    const auto& q = inst.query_tokens;
    const auto vals_it = std::find(q.begin(), q.end(), Vocab::q_vals);
    if (!inst.shortcut) {
      CHECK(vals_it == q.end());
      for (int tok : q) CHECK_FALSE(Vocab::is_digit(tok));
      continue;
    }
    ++shortcuts;
    REQUIRE(vals_it != q.end());
    std::vector<int> vals;
    for (auto it = vals_it + 1; it != q.end(); ++it) {
      REQUIRE(Vocab::is_digit(*it));
      vals.push_back(Vocab::digit_value(*it));
    }
    // reconstruct the answer from the query values alone
    int answer;
    if (inst.tier == 1) {
      REQUIRE(vals.size() == 1);
      answer = vals[0];
    } else {
      REQUIRE(vals.size() == static_cast<size_t>(inst.tier == 2 ? 3 : inst.tier == 3 ? 4 : 5));
      answer = vals[0] + vals[1] + vals[2];
      if (inst.tier >= 3) answer *= vals[3];
      if (inst.tier >= 4) answer += vals[4];
    }
    CHECK(answer == inst.gold_answer);
  }
  CHECK(shortcuts > 10);
}

TEST_CASE("verify_answer") {
  auto spec = small_spec();
  const auto ds = tasks::gen_dataset(spec);
  const auto& inst = ds.train.front();

  SUBCASE("gold rendering verifies") {
    CHECK(tasks::verify_answer(tasks::gold_full_output(inst), inst));
  }
  SUBCASE("correct think-span with wrong answer digits fails") {
    auto wrong = inst;
    wrong.gold_answer += 1;
    CHECK_FALSE(tasks::verify_answer(tasks::gold_full_output(wrong), inst));
  }
  SUBCASE("leading-zero rendering still verifies") {
    std::vector<int> out{Vocab::think_open, Vocab::think_close, Vocab::answer_open, Vocab::digit(0)};
    append_number_tokens(out, inst.gold_answer);
    out.push_back(Vocab::answer_close);
    CHECK(tasks::verify_answer(out, inst));
  }
}

TEST_CASE("train/test disjointness") {
  auto spec = small_spec();
  spec.n_train = 200;
  spec.n_test = 100;
  const auto ds = tasks::gen_dataset(spec);
  std::set<std::string> test_scenes, pairs;
  for (const auto& inst : ds.test) {
    test_scenes.insert(render_tokens(inst.scene.serialize()));
    pairs.insert(render_tokens(inst.scene.serialize()) + "|" + render_tokens(inst.query_tokens));
  }
  for (const auto& inst : ds.train) {
    CHECK(test_scenes.count(render_tokens(inst.scene.serialize())) == 0);
    CHECK(pairs
              .insert(render_tokens(inst.scene.serialize()) + "|" +
                      render_tokens(inst.query_tokens))
              .second);
  }
}

TEST_CASE("jsonl round trip is lossless") {
  auto spec = small_spec();
  spec.shortcut_fraction = 0.4;
  const auto ds = tasks::gen_dataset(spec);
  const std::string path = "test_tasks_roundtrip.jsonl";
  tasks::write_jsonl(path, ds.train);
  const auto loaded = tasks::read_jsonl(path);
  REQUIRE(loaded.size() == ds.train.size());
  for (size_t i = 0; i < loaded.size(); ++i) CHECK(loaded[i] == ds.train[i]);
  std::remove(path.c_str());
}

TEST_CASE("gen_dataset twice writes byte-identical files") {
  const auto a = tasks::gen_dataset(small_spec());
  const auto b = tasks::gen_dataset(small_spec());
  tasks::write_jsonl("test_tasks_a.jsonl", a.train);
  tasks::write_jsonl("test_tasks_b.jsonl", b.train);
  std::ifstream fa("test_tasks_a.jsonl"), fb("test_tasks_b.jsonl");
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());
  std::remove("test_tasks_a.jsonl");
  std::remove("test_tasks_b.jsonl");
}

TEST_CASE("invalid dataset specs are rejected") {
  DatasetSpec spec;
  spec.tier_mix = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(tasks::gen_dataset(spec), ConfigError);
  DatasetSpec spec2;
  spec2.n_train = 0;
  CHECK_THROWS_AS(tasks::gen_dataset(spec2), ConfigError);
}
