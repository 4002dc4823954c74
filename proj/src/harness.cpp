#include "grpolab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "grpolab/rng.hpp"
#include "grpolab/util.hpp"

namespace grpolab::harness {

namespace {

using json = nlohmann::json;

// seed-derivation stream tags
constexpr uint64_t kTagBatch = 0xb47c;
constexpr uint64_t kTagRatio = 0xa700;
constexpr uint64_t kTagRollout = 0x5011;
constexpr uint64_t kTagEvalDecode = 0xe7a1;
constexpr uint64_t kTagImageDrop = 0xd809;

// AdamW: adaptive moments with decoupled weight decay.
class Adam {
 public:
  Adam(size_t n, double weight_decay) : wd_(weight_decay), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr * ((m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + kEps) + wd_ * params[i]);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double wd_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

std::vector<int> draw_batch(Rng& rng, int n, int b) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(b));
  if (b >= n) {
    for (int i = 0; i < b; ++i) idx.push_back(rng.uniform_int(n));
    return idx;
  }
  std::set<int> used;
  while (static_cast<int>(idx.size()) < b) {
    const int i = rng.uniform_int(n);
    if (used.insert(i).second) idx.push_back(i);
  }
  return idx;
}

// Batch GRPO objective over the selected groups: mean of per-group losses.
// Reference/old log-probs and advantages are constants; only the new
// policy's log-probs carry parameter dependence.
class GrpoBatchLoss : public model::SequenceLoss {
 public:
  GrpoBatchLoss(std::vector<const grpo::RolloutGroup*> groups,
                std::vector<std::vector<std::vector<double>>> logprob_ref, grpo::GrpoConfig cfg)
      : groups_(std::move(groups)), lp_ref_(std::move(logprob_ref)), cfg_(cfg) {
    for (const auto* group : groups_)
      for (const auto& out : group->outputs) terms_.push_back({group->context, out.tokens});
  }

  const std::vector<model::LossTerm>& terms() const override { return terms_; }

  double value(const std::vector<std::vector<double>>& logprobs) const override {
    double total = 0.0;
    size_t k = 0;
    for (size_t gi = 0; gi < groups_.size(); ++gi) {
      std::vector<std::vector<double>> lp_new(logprobs.begin() + static_cast<long>(k),
                                              logprobs.begin() +
                                                  static_cast<long>(k + groups_[gi]->outputs.size()));
      k += groups_[gi]->outputs.size();
      total += grpo::grpo_loss(*groups_[gi], lp_new, lp_ref_[gi], cfg_);
    }
    return total / static_cast<double>(groups_.size());
  }

  std::vector<std::vector<double>> logprob_grad(
      const std::vector<std::vector<double>>& logprobs) const override {
    std::vector<std::vector<double>> grad;
    grad.reserve(logprobs.size());
    const double scale = 1.0 / static_cast<double>(groups_.size());
    size_t k = 0;
    for (size_t gi = 0; gi < groups_.size(); ++gi) {
      std::vector<std::vector<double>> lp_new(logprobs.begin() + static_cast<long>(k),
                                              logprobs.begin() +
                                                  static_cast<long>(k + groups_[gi]->outputs.size()));
      k += groups_[gi]->outputs.size();
      auto g = grpo::grpo_loss_dlogprob_new(*groups_[gi], lp_new, lp_ref_[gi], cfg_);
      for (auto& row : g) {
        for (double& x : row) x *= scale;
        grad.push_back(std::move(row));
      }
    }
    return grad;
  }

 private:
  std::vector<const grpo::RolloutGroup*> groups_;
  std::vector<std::vector<std::vector<double>>> lp_ref_;
  grpo::GrpoConfig cfg_;
  std::vector<model::LossTerm> terms_;
};

// Mean negative per-token log-likelihood of the gold completions.
class SftBatchLoss : public model::SequenceLoss {
 public:
  SftBatchLoss(std::span<const tasks::TaskInstance* const> batch, std::span<const char> drop_image) {
    for (size_t i = 0; i < batch.size(); ++i) {
      auto ctx = hint::baseline_context(*batch[i]);
      if (drop_image[i]) ctx = ctx.without_image();
      terms_.push_back({std::move(ctx), tasks::gold_completion(*batch[i])});
    }
  }

  const std::vector<model::LossTerm>& terms() const override { return terms_; }

  double value(const std::vector<std::vector<double>>& logprobs) const override {
    double total = 0.0;
    for (const auto& row : logprobs) {
      double s = 0.0;
      for (double lp : row) s += lp;
      total += s / static_cast<double>(row.size());
    }
    return -total / static_cast<double>(logprobs.size());
  }

  std::vector<std::vector<double>> logprob_grad(
      const std::vector<std::vector<double>>& logprobs) const override {
    std::vector<std::vector<double>> grad(logprobs.size());
    for (size_t i = 0; i < logprobs.size(); ++i) {
      const double w = -1.0 / (static_cast<double>(logprobs.size()) *
                               static_cast<double>(logprobs[i].size()));
      grad[i].assign(logprobs[i].size(), w);
    }
    return grad;
  }

 private:
  std::vector<model::LossTerm> terms_;
};

struct SampleOutcome {
  std::optional<grpo::RolloutGroup> selected;
  std::vector<double> metric_rewards;
  bool skipped = false;
};

std::vector<RatioCount> build_ratio_hist(const std::vector<SampleOutcome>& outcomes) {
  std::map<double, int> counts;
  for (const auto& o : outcomes)
    if (o.selected) ++counts[o.selected->hint_ratio];
  std::vector<RatioCount> hist;
  hist.reserve(counts.size());
  for (const auto& [ratio, count] : counts) hist.push_back({ratio, count});
  return hist;
}

void append_eval_fields(StepMetrics& row, const model::Policy& params,
                        const tasks::Dataset& dataset, int max_len) {
  row.train_acc =
      evaluate(params, dataset.train, std::nullopt, max_len, /*with_modality=*/false).accuracy;
  if (!dataset.test.empty()) {
    const auto report = evaluate(params, dataset.test, std::nullopt, max_len);
    row.test_acc = report.accuracy;
    row.acc_without_img = report.modality.acc_without_img;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(rollout_temperature > 0.0)) throw ConfigError("train: rollout_temperature must be > 0");
  if (!(sft_image_dropout >= 0.0 && sft_image_dropout <= 1.0))
    throw ConfigError("train: sft_image_dropout must be in [0, 1]");
  if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
  if (max_new_tokens < 1) throw ConfigError("train: max_new_tokens must be >= 1");
  grpo.validate();
  strategy.validate();
}

TrainResult train_grpo(const TrainConfig& config, const tasks::Dataset& dataset,
                       const model::Policy& init, const TrainSinks* sinks) {
  config.validate();
  if (dataset.train.empty()) throw ConfigError("train_grpo: empty train split");
  if (!init.all_finite()) throw ContractError("train_grpo: non-finite init params");

  model::Policy params = init;
  const model::Policy ref = init;  // frozen reference, never updated
  Adam adam(params.values.size(), config.weight_decay);
  RunMetrics metrics;
  model::Policy last_good = params;

  const int n_train = static_cast<int>(dataset.train.size());
  const int b = config.batch_size;

  for (int step = 0; step < config.steps; ++step) {
    const model::Policy old = params;  // rollout snapshot

    Rng batch_rng(derive_seed(config.seed, {kTagBatch, static_cast<uint64_t>(step)}));
    const auto idx = draw_batch(batch_rng, n_train, b);

    std::vector<SampleOutcome> outcomes(static_cast<size_t>(b));
    parallel_for(b, [&](int i) {
      const auto& inst = dataset.train[static_cast<size_t>(idx[static_cast<size_t>(i)])];
      auto& out = outcomes[static_cast<size_t>(i)];
      const auto ratios = hint::ratio_schedule(
          config.strategy, derive_seed(config.seed, {kTagRatio, static_cast<uint64_t>(step),
                                                     static_cast<uint64_t>(inst.id)}));
      std::vector<grpo::RolloutGroup> groups;
      for (size_t gi = 0; gi < ratios.size(); ++gi) {
        auto group = hint::rollout_group(
            old, inst, ratios[gi], config.grpo, config.injection,
            derive_seed(config.seed, {kTagRollout, static_cast<uint64_t>(step),
                                      static_cast<uint64_t>(inst.id), gi}),
            config.rollout_temperature, config.max_new_tokens);
        if (!group) break;  // context overflow: skip the sample, not fatal
        const bool selectable =
            group->has_correct() &&
            (!config.require_mixed_selection || grpo::is_valid_sample(group->rewards()));
        groups.push_back(std::move(*group));
        if (selectable) break;  // later groups can never be selected
      }
      const grpo::RolloutGroup* chosen =
          hint::adaptive_select(groups, config.require_mixed_selection);
      if (chosen) {
        out.selected = *chosen;
        out.metric_rewards = chosen->rewards();
      } else {
        out.skipped = true;
        out.metric_rewards = groups.empty()
                                 ? std::vector<double>(static_cast<size_t>(config.grpo.group_size), 0.0)
                                 : groups.front().rewards();
      }
    });

    std::vector<const grpo::RolloutGroup*> selected;
    for (const auto& o : outcomes)
      if (o.selected) selected.push_back(&*o.selected);

    StepMetrics row;
    row.step = step;
    row.skipped = static_cast<int>(outcomes.size()) - static_cast<int>(selected.size());

    if (!selected.empty()) {
      // reference log-probs, parallel across outputs, slot-ordered
      std::vector<std::vector<std::vector<double>>> lp_ref(selected.size());
      std::vector<std::pair<size_t, size_t>> jobs;
      for (size_t gi = 0; gi < selected.size(); ++gi) {
        lp_ref[gi].resize(selected[gi]->outputs.size());
        for (size_t oi = 0; oi < selected[gi]->outputs.size(); ++oi) jobs.emplace_back(gi, oi);
      }
      parallel_for(static_cast<int>(jobs.size()), [&](int j) {
        const auto [gi, oi] = jobs[static_cast<size_t>(j)];
        lp_ref[gi][oi] = model::sequence_logprob(ref, selected[gi]->context,
                                                 selected[gi]->outputs[oi].tokens)
                             .per_token;
      });

      GrpoBatchLoss loss_fn(selected, std::move(lp_ref), config.grpo);
      std::vector<double> grad;
      double loss;
      try {
        loss = model::loss_value_and_gradient(params, loss_fn, grad);
      } catch (const NumericError& e) {
        if (sinks && sinks->on_checkpoint) sinks->on_checkpoint(last_good, step, false);
        throw NumericError("train_grpo: aborted at step " + std::to_string(step) + ": " + e.what());
      }
      adam.step(params.values, grad, config.learning_rate);
      if (!params.all_finite()) {
        if (sinks && sinks->on_checkpoint) sinks->on_checkpoint(last_good, step, false);
        throw NumericError("train_grpo: non-finite parameters after step " + std::to_string(step));
      }
      row.loss = loss;
    }

    std::vector<std::vector<double>> metric_batch;
    metric_batch.reserve(outcomes.size());
    for (const auto& o : outcomes) metric_batch.push_back(o.metric_rewards);
    row.s_valid = grpo::data_utilization_rate(metric_batch);
    const auto breakdown = grpo::invalid_breakdown(metric_batch);
    row.frac_all_zero = breakdown.frac_all_zero;
    row.frac_all_one = breakdown.frac_all_one;
    double reward_sum = 0.0;
    for (const auto& r : metric_batch) {
      double s = 0.0;
      for (double x : r) s += x;
      reward_sum += s / static_cast<double>(r.size());
    }
    row.mean_reward = reward_sum / static_cast<double>(metric_batch.size());
    row.ratio_hist = build_ratio_hist(outcomes);

    const bool eval_point = (config.eval_every > 0 && (step + 1) % config.eval_every == 0) ||
                            step + 1 == config.steps;
    if (eval_point) {
      append_eval_fields(row, params, dataset, config.max_new_tokens);
      last_good = params;
      if (step + 1 < config.steps && sinks && sinks->on_checkpoint)
        sinks->on_checkpoint(params, step + 1, false);
    }

    if (sinks && sinks->on_step) sinks->on_step(row);
    metrics.steps.push_back(std::move(row));
  }

  if (sinks && sinks->on_checkpoint) sinks->on_checkpoint(params, config.steps, true);
  return {std::move(params), std::move(metrics)};
}

TrainResult train_sft(const TrainConfig& config, const tasks::Dataset& dataset,
                      const model::Policy& init, const TrainSinks* sinks) {
  config.validate();
  if (dataset.train.empty()) throw ConfigError("train_sft: empty train split");
  for (const auto& inst : dataset.train)
    if (inst.gold_trace.steps.empty()) throw ConfigError("train_sft: instance without gold trace");

  model::Policy params = init;
  Adam adam(params.values.size(), config.weight_decay);
  RunMetrics metrics;
  model::Policy last_good = params;
  const int n_train = static_cast<int>(dataset.train.size());

  for (int step = 0; step < config.steps; ++step) {
    Rng batch_rng(derive_seed(config.seed, {kTagBatch, static_cast<uint64_t>(step)}));
    const auto idx = draw_batch(batch_rng, n_train, config.batch_size);
    std::vector<const tasks::TaskInstance*> batch;
    batch.reserve(idx.size());
    for (int i : idx) batch.push_back(&dataset.train[static_cast<size_t>(i)]);
    std::vector<char> drop_image(batch.size(), 0);
    if (config.sft_image_dropout > 0.0) {
      // classifier-free style: drop the condition, keep the target, so the
      // image-less branch learns the query-conditioned marginal
      for (size_t i = 0; i < batch.size(); ++i) {
        Rng drop_rng(derive_seed(config.seed, {kTagImageDrop, static_cast<uint64_t>(step),
                                               static_cast<uint64_t>(batch[i]->id)}));
        drop_image[i] = drop_rng.uniform() < config.sft_image_dropout ? 1 : 0;
      }
    }

    SftBatchLoss loss_fn(batch, drop_image);
    std::vector<double> grad;
    double loss;
    try {
      loss = model::loss_value_and_gradient(params, loss_fn, grad);
    } catch (const NumericError& e) {
      if (sinks && sinks->on_checkpoint) sinks->on_checkpoint(last_good, step, false);
      throw NumericError("train_sft: aborted at step " + std::to_string(step) + ": " + e.what());
    }
    adam.step(params.values, grad, config.learning_rate);
    if (!params.all_finite()) {
      if (sinks && sinks->on_checkpoint) sinks->on_checkpoint(last_good, step, false);
      throw NumericError("train_sft: non-finite parameters after step " + std::to_string(step));
    }

    StepMetrics row;
    row.step = step;
    row.loss = loss;
    const bool eval_point = (config.eval_every > 0 && (step + 1) % config.eval_every == 0) ||
                            step + 1 == config.steps;
    if (eval_point) {
      append_eval_fields(row, params, dataset, config.max_new_tokens);
      last_good = params;
      if (step + 1 < config.steps && sinks && sinks->on_checkpoint)
        sinks->on_checkpoint(params, step + 1, false);
    }
    if (sinks && sinks->on_step) sinks->on_step(row);
    metrics.steps.push_back(std::move(row));
  }

  if (sinks && sinks->on_checkpoint) sinks->on_checkpoint(params, config.steps, true);
  return {std::move(params), std::move(metrics)};
}

EvalReport evaluate(const model::Policy& policy, std::span<const tasks::TaskInstance> split,
                    const std::optional<calib::CalibrationConfig>& calibration, int max_len,
                    bool with_modality) {
  EvalReport report;
  report.n = static_cast<int>(split.size());
  std::array<int, 4> correct_by_tier{};
  int correct = 0, correct_shortcut = 0, correct_imgreq = 0;
  for (const auto& inst : split) {
    std::vector<int> tokens;
    if (calibration) {
      tokens = calib::decode_calibrated(policy, inst, *calibration, max_len,
                                        derive_seed(kTagEvalDecode, {static_cast<uint64_t>(inst.id)}));
    } else {
      tokens = model::sample_sequence(policy, hint::baseline_context(inst), max_len, 0.0, 0);
    }
    const bool ok = tasks::verify_answer(tokens, inst);
    const auto tier_idx = static_cast<size_t>(inst.tier - 1);
    ++report.n_by_tier[tier_idx];
    if (inst.shortcut) ++report.n_shortcut;
    else ++report.n_image_required;
    if (ok) {
      ++correct;
      ++correct_by_tier[tier_idx];
      if (inst.shortcut) ++correct_shortcut;
      else ++correct_imgreq;
    }
  }
  if (report.n > 0) report.accuracy = static_cast<double>(correct) / report.n;
  for (size_t t = 0; t < 4; ++t)
    if (report.n_by_tier[t] > 0)
      report.acc_by_tier[t] = static_cast<double>(correct_by_tier[t]) / report.n_by_tier[t];
  if (report.n_shortcut > 0)
    report.acc_shortcut = static_cast<double>(correct_shortcut) / report.n_shortcut;
  if (report.n_image_required > 0)
    report.acc_image_required = static_cast<double>(correct_imgreq) / report.n_image_required;
  if (with_modality) report.modality = calib::modality_gap(policy, split, max_len);
  return report;
}

std::string EvalReport::to_json_string() const {
  json by_tier = json::array();
  for (size_t t = 0; t < 4; ++t)
    by_tier.push_back(json{{"tier", t + 1}, {"n", n_by_tier[t]}, {"accuracy", acc_by_tier[t]}});
  const json j{{"n", n},
               {"accuracy", accuracy},
               {"by_tier", by_tier},
               {"shortcut", json{{"n", n_shortcut}, {"accuracy", acc_shortcut}}},
               {"image_required", json{{"n", n_image_required}, {"accuracy", acc_image_required}}},
               {"modality", json{{"acc_with_img", modality.acc_with_img},
                                 {"acc_without_img", modality.acc_without_img}}}};
  return j.dump(2);
}

// ---- config file ------------------------------------------------------------

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for '" + key + "': " + value);
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for '" + key + "': " + value);
  }
}

}  // namespace

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "steps") cfg.steps = static_cast<int>(parse_int(key, value));
  else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
  else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
  else if (key == "sft_image_dropout") cfg.sft_image_dropout = parse_double(key, value);
  else if (key == "group_size") cfg.grpo.group_size = static_cast<int>(parse_int(key, value));
  else if (key == "clip_eps") cfg.grpo.clip_eps = parse_double(key, value);
  else if (key == "kl_beta") cfg.grpo.kl_beta = parse_double(key, value);
  else if (key == "std_eps") cfg.grpo.std_eps = parse_double(key, value);
  else if (key == "strategy") {
    if (value == "fixed") cfg.strategy.kind = hint::HintStrategy::Kind::Fixed;
    else if (value == "random") cfg.strategy.kind = hint::HintStrategy::Kind::Random;
    else if (value == "adaptive") cfg.strategy.kind = hint::HintStrategy::Kind::Adaptive;
    else throw ConfigError("config: unknown strategy '" + value + "'");
  } else if (key == "alpha") cfg.strategy.alpha = parse_double(key, value);
  else if (key == "m") cfg.strategy.m = static_cast<int>(parse_int(key, value));
  else if (key == "injection") {
    if (value == "query") cfg.injection = hint::Injection::Query;
    else if (value == "answer") cfg.injection = hint::Injection::Answer;
    else throw ConfigError("config: unknown injection '" + value + "'");
  } else if (key == "rollout_temperature") cfg.rollout_temperature = parse_double(key, value);
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(key, value));
  else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_int(key, value));
  else if (key == "max_new_tokens") cfg.max_new_tokens = static_cast<int>(parse_int(key, value));
  else if (key == "require_mixed_selection") cfg.require_mixed_selection = parse_int(key, value) != 0;
  else throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

}  // namespace grpolab::harness
