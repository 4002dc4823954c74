#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "grpolab/calibration.hpp"
#include "grpolab/grpo.hpp"
#include "grpolab/hint.hpp"
#include "grpolab/metrics.hpp"
#include "grpolab/model.hpp"
#include "grpolab/tasks.hpp"

namespace grpolab::harness {

struct TrainConfig {
  int batch_size = 4;
  int steps = 300;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  grpo::GrpoConfig grpo;
  hint::HintStrategy strategy = hint::HintStrategy::fixed(0.0);
  hint::Injection injection = hint::Injection::Answer;
  double rollout_temperature = 1.0;
  // SFT-only: probability of dropping the image condition of a training
  // sample while keeping the gold target (classifier-free-style conditioning
  // dropout; the image-less branch learns the query-conditioned marginal).
  double sft_image_dropout = 0.0;
  uint64_t seed = 0;
  int eval_every = 50;  // 0 -> evaluate at the final step only
  int max_new_tokens = 64;
  bool require_mixed_selection = false;
  void validate() const;
};

// Flat key=value config file ('#' comments). CLI flags override file values.
TrainConfig load_train_config(const std::string& path);
void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);

// Optional streaming outputs; training itself is pure in-memory.
struct TrainSinks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const model::Policy& params, int step, bool final)> on_checkpoint;
};

struct TrainResult {
  model::Policy params;
  RunMetrics metrics;
};

// GRPO / Hint-GRPO outer loop. Per step: snapshot the old policy, roll out
// groups per the hint strategy, select per sample, take one optimizer step
// against the frozen reference (= init params). Deterministic given
// (config, seed) regardless of rollout parallelism.
TrainResult train_grpo(const TrainConfig& config, const tasks::Dataset& dataset,
                       const model::Policy& init, const TrainSinks* sinks = nullptr);

// SFT baseline: maximizes mean per-token log-likelihood of the gold
// completion given the baseline context.
TrainResult train_sft(const TrainConfig& config, const tasks::Dataset& dataset,
                      const model::Policy& init, const TrainSinks* sinks = nullptr);

struct EvalReport {
  int n = 0;
  double accuracy = 0.0;
  std::array<int, 4> n_by_tier{};
  std::array<double, 4> acc_by_tier{};
  int n_shortcut = 0, n_image_required = 0;
  double acc_shortcut = 0.0, acc_image_required = 0.0;
  calib::ModalityGap modality;

  std::string to_json_string() const;
};

// Greedy decoding per instance (calibrated decoding when a calibration
// config is given); accuracy overall, per tier, per shortcut flag, plus the
// modality gap.
EvalReport evaluate(const model::Policy& policy, std::span<const tasks::TaskInstance> split,
                    const std::optional<calib::CalibrationConfig>& calibration = std::nullopt,
                    int max_len = 64, bool with_modality = true);

}  // namespace grpolab::harness
