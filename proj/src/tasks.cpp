#include "grpolab/tasks.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <tuple>
#include <sstream>

#include <json.hpp>

#include "grpolab/grpo.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/util.hpp"
#include "grpolab/vocab.hpp"

namespace grpolab::tasks {

namespace {

using json = nlohmann::json;

// Query program family. Tier = number of arithmetic steps:
//   1: cell lookup            cell #r #c
//   2: line sum               sum row|col #i
//   3: line sum times cell    sum row|col #i * cell #r #c
//   4: tier 3 plus cell       ... + cell #r #c
struct Program {
  int tier = 1;
  int axis = 0;  // 0 = row, 1 = col (tiers 2-4)
  int line = 0;
  int r1 = 0, c1 = 0;  // tier 1 lookup, or tier 3/4 multiplier cell
  int r2 = 0, c2 = 0;  // tier 4 addend cell
};

std::array<int, 3> line_values(const Scene& scene, int axis, int line) {
  std::array<int, 3> vals{};
  for (int i = 0; i < 3; ++i)
    vals[static_cast<size_t>(i)] = axis == 0 ? scene.grid[static_cast<size_t>(line)][static_cast<size_t>(i)]
                                             : scene.grid[static_cast<size_t>(i)][static_cast<size_t>(line)];
  return vals;
}

std::vector<int> needed_values(const Program& p, const Scene& scene) {
  std::vector<int> vals;
  if (p.tier == 1) {
    vals.push_back(scene.grid[static_cast<size_t>(p.r1)][static_cast<size_t>(p.c1)]);
    return vals;
  }
  const auto line = line_values(scene, p.axis, p.line);
  vals.assign(line.begin(), line.end());
  if (p.tier >= 3) vals.push_back(scene.grid[static_cast<size_t>(p.r1)][static_cast<size_t>(p.c1)]);
  if (p.tier >= 4) vals.push_back(scene.grid[static_cast<size_t>(p.r2)][static_cast<size_t>(p.c2)]);
  return vals;
}

std::vector<int> query_tokens_for(const Program& p, const Scene& scene, bool shortcut) {
  std::vector<int> q;
  if (p.tier == 1) {
    q = {Vocab::q_cell, Vocab::cell_token(p.r1, p.c1)};
  } else {
    q = {Vocab::q_sum, Vocab::line_token(p.axis, p.line)};
    if (p.tier >= 3) {
      q.push_back(Vocab::times);
      q.push_back(Vocab::q_cell);
      q.push_back(Vocab::cell_token(p.r1, p.c1));
    }
    if (p.tier >= 4) {
      q.push_back(Vocab::plus);
      q.push_back(Vocab::q_cell);
      q.push_back(Vocab::cell_token(p.r2, p.c2));
    }
  }
  if (shortcut) {
    q.push_back(Vocab::q_vals);
    for (int v : needed_values(p, scene)) q.push_back(Vocab::digit(v));
  }
  return q;
}

std::vector<int> binary_step(int lhs, int op, int rhs, int result) {
  std::vector<int> step;
  append_number_tokens(step, lhs);
  step.push_back(op);
  append_number_tokens(step, rhs);
  step.push_back(Vocab::equals);
  append_number_tokens(step, result);
  step.push_back(Vocab::step_sep);
  return step;
}

// Parses the program back out of query tokens; the inverse of
// query_tokens_for up to the ignored shortcut value suffix.
Program parse_query(std::span<const int> q) {
  auto fail = []() -> Program { throw ContractError("oracle_solve: malformed query program"); };
  size_t i = 0;
  auto need = [&](size_t k) {
    if (i + k > q.size()) throw ContractError("oracle_solve: truncated query program");
  };
  auto cell_at = [&](size_t j) {
    if (!Vocab::is_cell(q[j])) throw ContractError("oracle_solve: expected cell address token");
    return std::pair{Vocab::cell_row(q[j]), Vocab::cell_col(q[j])};
  };
  Program p;
  if (q.empty() || (q[0] != Vocab::q_cell && q[0] != Vocab::q_sum)) return fail();
  if (q[0] == Vocab::q_cell) {
    need(2);
    p.tier = 1;
    std::tie(p.r1, p.c1) = cell_at(1);
    i = 2;
  } else {
    need(2);
    if (!Vocab::is_line(q[1])) return fail();
    p.tier = 2;
    p.axis = Vocab::line_axis(q[1]);
    p.line = Vocab::line_index(q[1]);
    i = 2;
    if (i < q.size() && q[i] == Vocab::times) {
      need(3);
      if (q[i + 1] != Vocab::q_cell) return fail();
      p.tier = 3;
      std::tie(p.r1, p.c1) = cell_at(i + 2);
      i += 3;
    }
    if (i < q.size() && q[i] == Vocab::plus) {
      if (p.tier != 3) return fail();
      need(3);
      if (q[i + 1] != Vocab::q_cell) return fail();
      p.tier = 4;
      std::tie(p.r2, p.c2) = cell_at(i + 2);
      i += 3;
    }
  }
  if (i < q.size()) {
    if (q[i] != Vocab::q_vals) return fail();
    for (size_t j = i + 1; j < q.size(); ++j)
      if (!Vocab::is_digit(q[j])) return fail();
  }
  return p;
}

OracleResult solve_program(const Program& p, const Scene& scene) {
  OracleResult result;
  if (p.tier == 1) {
    const int v = scene.grid[static_cast<size_t>(p.r1)][static_cast<size_t>(p.c1)];
    std::vector<int> step = number_tokens(v);
    step.push_back(Vocab::step_sep);
    result.steps.steps.push_back(std::move(step));
    result.answer = v;
    return result;
  }
  const auto vals = line_values(scene, p.axis, p.line);
  int acc = vals[0] + vals[1];
  result.steps.steps.push_back(binary_step(vals[0], Vocab::plus, vals[1], acc));
  const int sum = acc + vals[2];
  result.steps.steps.push_back(binary_step(acc, Vocab::plus, vals[2], sum));
  acc = sum;
  if (p.tier >= 3) {
    const int mul = scene.grid[static_cast<size_t>(p.r1)][static_cast<size_t>(p.c1)];
    const int prod = acc * mul;
    result.steps.steps.push_back(binary_step(acc, Vocab::times, mul, prod));
    acc = prod;
  }
  if (p.tier >= 4) {
    const int add = scene.grid[static_cast<size_t>(p.r2)][static_cast<size_t>(p.c2)];
    const int total = acc + add;
    result.steps.steps.push_back(binary_step(acc, Vocab::plus, add, total));
    acc = total;
  }
  result.answer = acc;
  return result;
}

std::string pair_key(const Scene& scene, std::span<const int> query) {
  std::string key = render_tokens(scene.serialize());
  key += '|';
  key += render_tokens(query);
  return key;
}

TaskInstance draw_instance(const DatasetSpec& spec, uint64_t split_tag, int index, int attempt) {
  Rng rng(derive_seed(spec.seed, {split_tag, static_cast<uint64_t>(index),
                                  static_cast<uint64_t>(attempt)}));
  Program p;
  const double u = rng.uniform();
  double cum = 0.0;
  p.tier = 4;
  for (int t = 0; t < 4; ++t) {
    cum += spec.tier_mix[static_cast<size_t>(t)];
    if (u < cum) {
      p.tier = t + 1;
      break;
    }
  }
  TaskInstance inst;
  for (auto& row : inst.scene.grid)
    for (auto& cell : row) cell = rng.uniform_int(10);
  p.axis = rng.uniform_int(2);
  p.line = rng.uniform_int(3);
  p.r1 = rng.uniform_int(3);
  p.c1 = rng.uniform_int(3);
  p.r2 = rng.uniform_int(3);
  p.c2 = rng.uniform_int(3);
  inst.shortcut = rng.uniform() < spec.shortcut_fraction;
  inst.tier = p.tier;
  inst.query_tokens = query_tokens_for(p, inst.scene, inst.shortcut);
  auto solved = solve_program(p, inst.scene);
  inst.gold_trace = std::move(solved.steps);
  inst.gold_answer = solved.answer;
  return inst;
}

json instance_to_json(const TaskInstance& inst) {
  json scene = json::array();
  for (const auto& row : inst.scene.grid) scene.push_back(row);
  json steps = json::array();
  for (const auto& s : inst.gold_trace.steps) {
    // strip the trailing separator for readability; re-appended on load
    std::span<const int> body(s.data(), s.size() - 1);
    steps.push_back(render_tokens(body));
  }
  return json{{"schema", 1},
              {"id", inst.id},
              {"tier", inst.tier},
              {"shortcut", inst.shortcut},
              {"scene", scene},
              {"query", render_tokens(inst.query_tokens)},
              {"steps", steps},
              {"answer", inst.gold_answer}};
}

TaskInstance instance_from_json(const json& j) {
  if (!j.contains("schema") || j["schema"].get<int>() != 1)
    throw ConfigError("dataset: unsupported schema version");
  TaskInstance inst;
  inst.id = j.at("id").get<int64_t>();
  inst.tier = j.at("tier").get<int>();
  inst.shortcut = j.at("shortcut").get<bool>();
  const auto& scene = j.at("scene");
  for (size_t r = 0; r < 3; ++r)
    for (size_t c = 0; c < 3; ++c) inst.scene.grid[r][c] = scene.at(r).at(c).get<int>();
  inst.query_tokens = parse_tokens(j.at("query").get<std::string>());
  for (const auto& s : j.at("steps")) {
    auto step = parse_tokens(s.get<std::string>());
    step.push_back(Vocab::step_sep);
    inst.gold_trace.steps.push_back(std::move(step));
  }
  inst.gold_answer = j.at("answer").get<int>();
  return inst;
}

}  // namespace

int ReasoningTrace::total_tokens() const {
  int n = 0;
  for (const auto& s : steps) n += static_cast<int>(s.size());
  return n;
}

std::vector<int> ReasoningTrace::concat(int first_steps) const {
  std::vector<int> out;
  const int k = std::min<int>(first_steps, static_cast<int>(steps.size()));
  for (int i = 0; i < k; ++i)
    out.insert(out.end(), steps[static_cast<size_t>(i)].begin(), steps[static_cast<size_t>(i)].end());
  return out;
}

std::vector<int> Scene::serialize() const {
  std::vector<int> out;
  out.reserve(11);
  for (size_t r = 0; r < 3; ++r) {
    if (r) out.push_back(Vocab::row_sep);
    for (size_t c = 0; c < 3; ++c) out.push_back(Vocab::digit(grid[r][c]));
  }
  return out;
}

Scene Scene::deserialize(std::span<const int> tokens) {
  if (tokens.size() != 11) throw ContractError("Scene: serialization must be 11 tokens");
  Scene scene;
  size_t i = 0;
  for (size_t r = 0; r < 3; ++r) {
    if (r) {
      if (tokens[i] != Vocab::row_sep) throw ContractError("Scene: missing row separator");
      ++i;
    }
    for (size_t c = 0; c < 3; ++c) {
      if (!Vocab::is_digit(tokens[i])) throw ContractError("Scene: expected digit token");
      scene.grid[r][c] = Vocab::digit_value(tokens[i]);
      ++i;
    }
  }
  return scene;
}

void DatasetSpec::validate() const {
  if (n_train < 1 || n_test < 1) throw ConfigError("dataset: split sizes must be positive");
  double sum = 0.0;
  for (double w : tier_mix) {
    if (w < 0.0) throw ConfigError("dataset: tier_mix weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset: tier_mix must sum to 1");
  if (shortcut_fraction < 0.0 || shortcut_fraction > 1.0)
    throw ConfigError("dataset: shortcut_fraction must be in [0, 1]");
}

Dataset gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  std::set<std::string> test_scenes;
  std::set<std::string> used_pairs;

  for (int i = 0; i < spec.n_test; ++i) {
    for (int attempt = 0;; ++attempt) {
      auto inst = draw_instance(spec, /*split_tag=*/2, i, attempt);
      const auto key = pair_key(inst.scene, inst.query_tokens);
      if (used_pairs.count(key)) continue;
      used_pairs.insert(key);
      test_scenes.insert(render_tokens(inst.scene.serialize()));
      inst.id = spec.n_train + i;
      ds.test.push_back(std::move(inst));
      break;
    }
  }
  for (int i = 0; i < spec.n_train; ++i) {
    for (int attempt = 0;; ++attempt) {
      auto inst = draw_instance(spec, /*split_tag=*/1, i, attempt);
      if (test_scenes.count(render_tokens(inst.scene.serialize()))) continue;
      const auto key = pair_key(inst.scene, inst.query_tokens);
      if (used_pairs.count(key)) continue;
      used_pairs.insert(key);
      inst.id = i;
      ds.train.push_back(std::move(inst));
      break;
    }
  }
  return ds;
}

OracleResult oracle_solve(const TaskInstance& instance) {
  const Program p = parse_query(instance.query_tokens);
  return solve_program(p, instance.scene);
}

bool verify_answer(std::span<const int> output_tokens, const TaskInstance& instance) {
  return grpo::compute_reward(output_tokens, instance.gold_answer) == 1;
}

std::vector<int> gold_completion(const TaskInstance& instance) {
  std::vector<int> out = instance.gold_trace.concat(static_cast<int>(instance.gold_trace.steps.size()));
  out.push_back(Vocab::think_close);
  out.push_back(Vocab::answer_open);
  append_number_tokens(out, instance.gold_answer);
  out.push_back(Vocab::answer_close);
  return out;
}

std::vector<int> gold_full_output(const TaskInstance& instance) {
  std::vector<int> out{Vocab::think_open};
  const auto rest = gold_completion(instance);
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void write_jsonl(const std::string& path, std::span<const TaskInstance> instances) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("dataset: cannot open '" + path + "' for writing");
  for (const auto& inst : instances) out << instance_to_json(inst).dump() << '\n';
  if (!out) throw ConfigError("dataset: write to '" + path + "' failed");
}

std::vector<TaskInstance> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("dataset: cannot open '" + path + "'");
  std::vector<TaskInstance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(instance_from_json(json::parse(line)));
  }
  return out;
}

}  // namespace grpolab::tasks
