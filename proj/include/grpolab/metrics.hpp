#pragma once

#include <optional>
#include <string>
#include <vector>

namespace grpolab::harness {

struct RatioCount {
  double ratio = 0.0;
  int count = 0;
  bool operator==(const RatioCount&) const = default;
};

// One logged training step. The reward-derived fields are present for GRPO
// runs only; the accuracy fields only at eval points.
struct StepMetrics {
  int step = 0;
  double loss = 0.0;
  std::optional<double> s_valid;
  std::optional<double> mean_reward;
  std::optional<double> frac_all_zero;
  std::optional<double> frac_all_one;
  std::vector<RatioCount> ratio_hist;  // selected hint ratios this step
  int skipped = 0;
  std::optional<double> train_acc;
  std::optional<double> test_acc;
  std::optional<double> acc_without_img;
};

struct RunMetrics {
  std::vector<StepMetrics> steps;
};

// ---- metrics JSONL (schema 1) ---------------------------------------------
// First line: {"schema":1,"kind":"header","algo":...,"config":{...}}
// Then one {"kind":"step",...} object per training step.
std::string metrics_step_line(const StepMetrics& m);
StepMetrics metrics_step_from_line(const std::string& line);
RunMetrics read_metrics_jsonl(const std::string& path);

// CSV with header step,s_valid,mean_reward,frac_all_zero,frac_all_one,loss;
// fields a run never produced are left empty.
std::string metrics_csv(const RunMetrics& metrics);

}  // namespace grpolab::harness
