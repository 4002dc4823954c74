#include "grpolab/calibration.hpp"

#include <cmath>

#include "grpolab/hint.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/util.hpp"
#include "grpolab/vocab.hpp"

namespace grpolab::calib {

void CalibrationConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma))
    throw ConfigError("calibration: gamma must be finite and >= 0");
  if (mode == Mode::Temperature && !(temperature > 0.0))
    throw ConfigError("calibration: temperature must be > 0");
}

std::vector<double> calibrated_logits(std::span<const double> with_img,
                                      std::span<const double> without_img, double gamma) {
  if (with_img.size() != without_img.size())
    throw ContractError("calibrated_logits: length mismatch");
  std::vector<double> out(with_img.size());
  for (size_t i = 0; i < with_img.size(); ++i)
    out[i] = with_img[i] + gamma * (with_img[i] - without_img[i]);
  return out;
}

std::vector<int> decode_calibrated(const model::Policy& policy, const tasks::TaskInstance& sample,
                                   const CalibrationConfig& cfg, int max_len, uint64_t seed) {
  cfg.validate();
  if (max_len < 1) throw ContractError("decode_calibrated: max_len must be >= 1");
  const model::Context ctx = hint::baseline_context(sample);
  const model::Context ctx_noimg = ctx.without_image();
  if (ctx.flat_size() > policy.cfg.context_window)
    throw std::length_error("decode_calibrated: context exceeds window");

  model::Runner with_img(policy);
  model::Runner without_img(policy);
  for (int t : ctx.flatten()) with_img.push(t);
  for (int t : ctx_noimg.flatten()) without_img.push(t);

  Rng rng(seed);
  const int vocab = policy.cfg.vocab_size;
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    const auto logits = calibrated_logits(with_img.logits(), without_img.logits(), cfg.gamma);
    int tok = 0;
    if (cfg.mode == CalibrationConfig::Mode::Greedy) {
      for (int v = 1; v < vocab; ++v)
        if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(tok)]) tok = v;
    } else {
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      double sum = 0.0;
      std::vector<double> probs(static_cast<size_t>(vocab));
      for (int v = 0; v < vocab; ++v) {
        probs[static_cast<size_t>(v)] =
            std::exp((logits[static_cast<size_t>(v)] - mx) / cfg.temperature);
        sum += probs[static_cast<size_t>(v)];
      }
      const double target = rng.uniform() * sum;
      double cum = 0.0;
      tok = vocab - 1;
      for (int v = 0; v < vocab; ++v) {
        cum += probs[static_cast<size_t>(v)];
        if (cum > target) {
          tok = v;
          break;
        }
      }
    }
    out.push_back(tok);
    if (tok == Vocab::eos || tok == Vocab::answer_close) break;
    // both contexts advance by the same token; the longer one limits length
    if (with_img.length() >= policy.cfg.context_window) break;
    if (step + 1 < max_len) {
      with_img.push(tok);
      without_img.push(tok);
    }
  }
  return out;
}

ModalityGap modality_gap(const model::Policy& policy, std::span<const tasks::TaskInstance> dataset,
                         int max_len) {
  if (dataset.empty()) return {};
  int with_correct = 0, without_correct = 0;
  for (const auto& inst : dataset) {
    const model::Context ctx = hint::baseline_context(inst);
    const auto with_tokens = model::sample_sequence(policy, ctx, max_len, 0.0, 0);
    if (tasks::verify_answer(with_tokens, inst)) ++with_correct;
    const auto without_tokens =
        model::sample_sequence(policy, ctx.without_image(), max_len, 0.0, 0);
    if (tasks::verify_answer(without_tokens, inst)) ++without_correct;
  }
  const auto n = static_cast<double>(dataset.size());
  return {static_cast<double>(with_correct) / n, static_cast<double>(without_correct) / n};
}

}  // namespace grpolab::calib
