#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grpolab/model.hpp"
#include "grpolab/tasks.hpp"

namespace grpolab::calib {

struct CalibrationConfig {
  double gamma = 0.8;
  enum class Mode { Greedy, Temperature } mode = Mode::Greedy;
  double temperature = 1.0;  // Temperature mode only
  void validate() const;
};

// out = with_img + gamma * (with_img - without_img), elementwise.
std::vector<double> calibrated_logits(std::span<const double> with_img,
                                      std::span<const double> without_img, double gamma);

// Two-context decoding: each step computes logits on the full context and on
// the context with image tokens removed, combines them, and appends the
// chosen token to both running contexts.
std::vector<int> decode_calibrated(const model::Policy& policy, const tasks::TaskInstance& sample,
                                   const CalibrationConfig& cfg, int max_len, uint64_t seed);

struct ModalityGap {
  double acc_with_img = 0.0;
  double acc_without_img = 0.0;
};

// Greedy-decoding accuracy with the full context vs. with image tokens
// removed; the gap is the text-bias diagnostic.
ModalityGap modality_gap(const model::Policy& policy, std::span<const tasks::TaskInstance> dataset,
                         int max_len = 64);

}  // namespace grpolab::calib
