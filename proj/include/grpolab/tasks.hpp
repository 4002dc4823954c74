#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "grpolab/model.hpp"

namespace grpolab::tasks {

// Gold reasoning steps; each step carries its terminating STEP_SEP token.
struct ReasoningTrace {
  std::vector<std::vector<int>> steps;

  int total_tokens() const;
  std::vector<int> concat(int first_steps) const;  // first k steps, separators included
  bool operator==(const ReasoningTrace&) const = default;
};

// The symbolic stand-in for an image: a 3x3 grid of digits. Serializes to a
// fixed 11-token sequence (row-major digits with row separators).
struct Scene {
  std::array<std::array<int, 3>, 3> grid{};

  std::vector<int> serialize() const;
  static Scene deserialize(std::span<const int> tokens);
  bool operator==(const Scene&) const = default;
};

struct TaskInstance {
  int64_t id = 0;
  Scene scene;
  std::vector<int> query_tokens;
  ReasoningTrace gold_trace;
  int gold_answer = 0;
  int tier = 1;          // number of arithmetic steps, 1..4
  bool shortcut = false; // query restates every needed digit

  bool operator==(const TaskInstance&) const = default;
};

struct DatasetSpec {
  int n_train = 100;
  int n_test = 50;
  std::array<double, 4> tier_mix = {0.25, 0.25, 0.25, 0.25};
  double shortcut_fraction = 0.0;
  uint64_t seed = 0;
  void validate() const;
};

struct Dataset {
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> test;
};

// Deterministic given the spec. Every instance is validated against
// oracle_solve; train/test scenes are disjoint and (scene, query) pairs are
// unique across the whole dataset.
Dataset gen_dataset(const DatasetSpec& spec);

struct OracleResult {
  ReasoningTrace steps;
  int answer = 0;
};

// Parses the query program from the instance's tokens and evaluates it over
// the grid, one step per arithmetic operation. Throws ContractError on a
// malformed query.
OracleResult oracle_solve(const TaskInstance& instance);

// compute_reward(output, gold_answer) == 1
bool verify_answer(std::span<const int> output_tokens, const TaskInstance& instance);

// Gold completion relative to the forced THINK_OPEN prefix:
//   steps </think> <answer> digits </answer>
std::vector<int> gold_completion(const TaskInstance& instance);
// THINK_OPEN + gold_completion (the full output as a reward parser sees it).
std::vector<int> gold_full_output(const TaskInstance& instance);

// ---- JSONL dataset format (schema field "schema": 1) ----------------------
// One object per line: {"schema","id","tier","shortcut","scene","query",
// "steps","answer"}; query and steps hold canonical token text.
void write_jsonl(const std::string& path, std::span<const TaskInstance> instances);
std::vector<TaskInstance> read_jsonl(const std::string& path);

}  // namespace grpolab::tasks
