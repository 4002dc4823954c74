#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grpolab/vocab.hpp"

namespace grpolab::model {

// Decoder-only transformer dimensions. Defaults are the training scale;
// tests shrink them for finite-difference checks.
struct ModelConfig {
  int vocab_size = Vocab::size;
  int d_model = 24;
  int n_head = 3;
  int n_layer = 2;
  int context_window = 128;

  int head_dim() const { return d_model / n_head; }
  int d_mlp() const { return 4 * d_model; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// One named row-major matrix inside the flat parameter vector.
struct ParamBlock {
  std::string name;
  size_t offset = 0;
  size_t rows = 0;
  size_t cols = 0;
  size_t count() const { return rows * cols; }
  bool operator==(const ParamBlock&) const = default;
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  size_t total = 0;

  static ParamLayout for_config(const ModelConfig& cfg);
  const ParamBlock& block(std::string_view name) const;
  bool operator==(const ParamLayout&) const = default;
};

// Flat parameter vector plus its layout. Snapshots of this type serve as the
// old policy and the frozen reference policy; the optimizer and the
// checkpoint format only ever see the flat vector.
struct Policy {
  ModelConfig cfg;
  ParamLayout layout;
  std::vector<double> values;

  static Policy zeros(const ModelConfig& cfg);
  static Policy random_init(const ModelConfig& cfg, uint64_t seed, double init_std = 0.08);

  std::span<double> block(std::string_view name);
  std::span<const double> block(std::string_view name) const;
  bool all_finite() const;
};

// Model input: symbolic image tokens, query tokens, and the generated-so-far
// prefix (which may carry an injected hint). Flattened as
// BOS + image + query + prefix before entering the network.
struct Context {
  std::vector<int> image_tokens;
  std::vector<int> query_tokens;
  std::vector<int> prefix_tokens;

  std::vector<int> flatten() const;
  int flat_size() const {
    return 1 + static_cast<int>(image_tokens.size() + query_tokens.size() + prefix_tokens.size());
  }
  Context without_image() const { return Context{{}, query_tokens, prefix_tokens}; }
  bool operator==(const Context&) const = default;
};

// Incremental forward pass over one token sequence (per-layer KV caches).
// In record mode it additionally keeps every activation an exact backward
// needs. Feed tokens one at a time; logits after each push predict the next
// token. Read-only with respect to the policy.
class Runner {
 public:
  explicit Runner(const Policy& policy, bool record = false);
  ~Runner();
  Runner(Runner&&) noexcept;
  Runner& operator=(Runner&&) noexcept;

  int length() const;
  // Throws std::length_error once the context window is full.
  const std::vector<double>& push(int token);
  const std::vector<double>& logits() const;

  // Accumulates into grad the gradient of sum_p dot(dlogits[p], logits_p).
  // Record mode only; dlogits must have one row of vocab_size per pushed
  // position (rows of zeros are skipped cheaply).
  void backward(const std::vector<std::vector<double>>& dlogits, std::span<double> grad) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::vector<double> forward_logits(const Policy& policy, const Context& ctx);

struct SequenceScore {
  double total = 0.0;
  std::vector<double> per_token;
};

// Log-probability of `output` under the policy given `ctx`;
// per_token[t] = log softmax(logits at the t-prefix) evaluated at output[t].
SequenceScore sequence_logprob(const Policy& policy, const Context& ctx,
                               std::span<const int> output);

struct SampledSequence {
  std::vector<int> tokens;
  std::vector<double> per_token_logprob;  // temperature-1 model log-probs
};

// Autoregressive sampling. Stops after emitting EOS or ANSWER_CLOSE, at
// max_len tokens, or when the context window is full (truncation is a valid
// outcome). temperature == 0 is greedy argmax with lowest-id tie break.
SampledSequence sample_sequence_scored(const Policy& policy, const Context& ctx,
                                       int max_len, double temperature, uint64_t seed);
std::vector<int> sample_sequence(const Policy& policy, const Context& ctx,
                                 int max_len, double temperature, uint64_t seed);

// ---- differentiation ----------------------------------------------------

struct LossTerm {
  Context ctx;
  std::vector<int> output;
};

// A scalar loss whose parameter dependence flows entirely through the
// per-token log-probabilities of its terms. value() and logprob_grad() are
// plain math on those numbers, so the exact parameter gradient is
// logprob_grad chained through the network backward.
class SequenceLoss {
 public:
  virtual ~SequenceLoss() = default;
  virtual const std::vector<LossTerm>& terms() const = 0;
  virtual double value(const std::vector<std::vector<double>>& logprobs) const = 0;
  virtual std::vector<std::vector<double>> logprob_grad(
      const std::vector<std::vector<double>>& logprobs) const = 0;
};

double loss_value(const Policy& policy, const SequenceLoss& loss);

// Exact reverse-mode gradient of the loss with respect to the flat parameter
// vector. Throws NumericError if the loss or any log-prob is non-finite.
std::vector<double> loss_gradient(const Policy& policy, const SequenceLoss& loss);
double loss_value_and_gradient(const Policy& policy, const SequenceLoss& loss,
                               std::vector<double>& grad_out);

}  // namespace grpolab::model
