#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "grpolab/checkpoint.hpp"
#include "grpolab/model.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/util.hpp"
#include "grpolab/vocab.hpp"

using namespace grpolab;
using model::Context;
using model::ModelConfig;
using model::Policy;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_head = 2;
  cfg.n_layer = 1;
  cfg.context_window = 32;
  return cfg;
}

Context random_context(Rng& rng, int image_len, int query_len, int prefix_len) {
  Context ctx;
  for (int i = 0; i < image_len; ++i) ctx.image_tokens.push_back(rng.uniform_int(Vocab::size));
  for (int i = 0; i < query_len; ++i) ctx.query_tokens.push_back(rng.uniform_int(Vocab::size));
  for (int i = 0; i < prefix_len; ++i) ctx.prefix_tokens.push_back(rng.uniform_int(Vocab::size));
  return ctx;
}

std::vector<int> random_output(Rng& rng, int len) {
  std::vector<int> out;
  for (int i = 0; i < len; ++i) out.push_back(rng.uniform_int(Vocab::size));
  return out;
}

std::vector<double> softmax_oracle(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> p(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

// test-side loss: sum of w_t * logprob_t over given sequences
class WeightedLogProbLoss : public model::SequenceLoss {
 public:
  WeightedLogProbLoss(std::vector<model::LossTerm> terms,
                      std::vector<std::vector<double>> weights)
      : terms_(std::move(terms)), weights_(std::move(weights)) {}

  const std::vector<model::LossTerm>& terms() const override { return terms_; }

  double value(const std::vector<std::vector<double>>& logprobs) const override {
    double total = 0.0;
    for (size_t i = 0; i < logprobs.size(); ++i)
      for (size_t t = 0; t < logprobs[i].size(); ++t) total += weights_[i][t] * logprobs[i][t];
    return total;
  }

  std::vector<std::vector<double>> logprob_grad(
      const std::vector<std::vector<double>>&) const override {
    return weights_;
  }

 private:
  std::vector<model::LossTerm> terms_;
  std::vector<std::vector<double>> weights_;
};

class ConstantLoss : public model::SequenceLoss {
 public:
  explicit ConstantLoss(std::vector<model::LossTerm> terms) : terms_(std::move(terms)) {}
  const std::vector<model::LossTerm>& terms() const override { return terms_; }
  double value(const std::vector<std::vector<double>>&) const override { return 42.0; }
  std::vector<std::vector<double>> logprob_grad(
      const std::vector<std::vector<double>>& logprobs) const override {
    std::vector<std::vector<double>> zeros(logprobs.size());
    for (size_t i = 0; i < logprobs.size(); ++i) zeros[i].assign(logprobs[i].size(), 0.0);
    return zeros;
  }

 private:
  std::vector<model::LossTerm> terms_;
};

double fd_relative_error(const Policy& policy, const model::SequenceLoss& loss,
                         const std::vector<double>& analytic, double h = 1e-4) {
  Policy probe = policy;
  std::vector<double> fd(analytic.size());
  for (size_t k = 0; k < probe.values.size(); ++k) {
    const double saved = probe.values[k];
    probe.values[k] = saved + h;
    const double up = model::loss_value(probe, loss);
    probe.values[k] = saved - h;
    const double down = model::loss_value(probe, loss);
    probe.values[k] = saved;
    fd[k] = (up - down) / (2.0 * h);
  }
  double num = 0.0, denom_a = 0.0, denom_b = 0.0;
  for (size_t k = 0; k < fd.size(); ++k) {
    num += (analytic[k] - fd[k]) * (analytic[k] - fd[k]);
    denom_a += analytic[k] * analytic[k];
    denom_b += fd[k] * fd[k];
  }
  const double denom = std::max({std::sqrt(denom_a), std::sqrt(denom_b), 1e-12});
  return std::sqrt(num) / denom;
}

}  // namespace

TEST_CASE("param layout covers the flat vector with disjoint blocks") {
  const auto layout = model::ParamLayout::for_config(tiny_config());
  size_t cursor = 0;
  for (const auto& b : layout.blocks) {
    CHECK(b.offset == cursor);
    cursor += b.count();
  }
  CHECK(cursor == layout.total);
  const auto policy = Policy::random_init(tiny_config(), 7);
  CHECK(policy.values.size() == layout.total);
  CHECK(policy.all_finite());
  CHECK(policy.values.size() < 5000);
}

TEST_CASE("forward_logits is deterministic and softmax-normalized") {
  const auto policy = Policy::random_init(tiny_config(), 11);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ctx = random_context(rng, 4, 5, rng.uniform_int(4));
    const auto a = model::forward_logits(policy, ctx);
    const auto b = model::forward_logits(policy, ctx);
    CHECK(a == b);  // bitwise
    const auto p = softmax_oracle(a);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("empty-prefix logits depend only on image and query tokens") {
  const auto policy = Policy::random_init(tiny_config(), 13);
  Rng rng(5);
  const auto ctx = random_context(rng, 4, 5, 0);
  Context rebuilt;
  rebuilt.image_tokens = ctx.image_tokens;
  rebuilt.query_tokens = ctx.query_tokens;
  CHECK(model::forward_logits(policy, ctx) == model::forward_logits(policy, rebuilt));
  Context with_prefix = ctx;
  with_prefix.prefix_tokens = {Vocab::think_open};
  CHECK(model::forward_logits(policy, with_prefix) != model::forward_logits(policy, ctx));
}

TEST_CASE("forward_logits rejects an oversized context") {
  const auto policy = Policy::random_init(tiny_config(), 17);
  Rng rng(9);
  const auto ctx = random_context(rng, 16, 16, 8);  // 41 tokens with BOS > 32
  CHECK_THROWS_AS(model::forward_logits(policy, ctx), std::length_error);
}

TEST_CASE("sequence_logprob basics") {
  const auto policy = Policy::random_init(tiny_config(), 19);
  Rng rng(21);
  const auto ctx = random_context(rng, 3, 4, 1);

  SUBCASE("single token output") {
    const std::vector<int> out{Vocab::digit(3)};
    const auto score = model::sequence_logprob(policy, ctx, out);
    CHECK(score.per_token.size() == 1);
    CHECK(score.total == score.per_token[0]);
  }

  SUBCASE("appending a token never increases the total") {
    auto out = random_output(rng, 6);
    double prev = 0.0;
    for (size_t len = 1; len <= out.size(); ++len) {
      const auto score =
          model::sequence_logprob(policy, ctx, std::span<const int>(out.data(), len));
      CHECK(score.total <= prev + 1e-12);
      prev = score.total;
    }
  }

  SUBCASE("empty output rejected") {
    CHECK_THROWS_AS(model::sequence_logprob(policy, ctx, {}), ContractError);
  }
}

TEST_CASE("sequence_logprob matches the stepwise softmax oracle") {
  const auto policy = Policy::random_init(tiny_config(), 23);
  Rng rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ctx = random_context(rng, 3, 4, rng.uniform_int(3));
    const auto out = random_output(rng, 3);
    const auto score = model::sequence_logprob(policy, ctx, out);

    // independent route: grow the prefix, query forward_logits, take softmax
    double brute_total = 0.0;
    Context grow = ctx;
    for (size_t t = 0; t < out.size(); ++t) {
      const auto logits = model::forward_logits(policy, grow);
      const auto probs = softmax_oracle(logits);
      const double lp = std::log(probs[static_cast<size_t>(out[t])]);
      CHECK(std::abs(score.per_token[t] - lp) <= 1e-9);  // prefix consistency
      brute_total += lp;
      grow.prefix_tokens.push_back(out[t]);
    }
    CHECK(std::abs(score.total - brute_total) <= 1e-9);
  }
}

TEST_CASE("sampling: greedy, determinism, max_len") {
  const auto policy = Policy::random_init(tiny_config(), 27);
  Rng rng(29);
  const auto ctx = random_context(rng, 3, 4, 1);

  SUBCASE("temperature 0 emits the argmax at every step") {
    const auto tokens = model::sample_sequence(policy, ctx, 8, 0.0, 123);
    Context grow = ctx;
    for (int tok : tokens) {
      const auto logits = model::forward_logits(policy, grow);
      int argmax = 0;
      for (int v = 1; v < Vocab::size; ++v)
        if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(argmax)]) argmax = v;
      CHECK(tok == argmax);
      grow.prefix_tokens.push_back(tok);
    }
  }

  SUBCASE("same seed, same sequence") {
    const auto a = model::sample_sequence(policy, ctx, 16, 1.0, 777);
    const auto b = model::sample_sequence(policy, ctx, 16, 1.0, 777);
    CHECK(a == b);
  }

  SUBCASE("max_len 1 emits exactly one token") {
    CHECK(model::sample_sequence(policy, ctx, 1, 1.0, 5).size() == 1);
  }

  SUBCASE("scored sampling agrees with sequence_logprob") {
    const auto sampled = model::sample_sequence_scored(policy, ctx, 16, 1.0, 99);
    const auto recomputed = model::sequence_logprob(policy, ctx, sampled.tokens);
    REQUIRE(sampled.per_token_logprob.size() == recomputed.per_token.size());
    for (size_t t = 0; t < sampled.per_token_logprob.size(); ++t)
      CHECK(sampled.per_token_logprob[t] == recomputed.per_token[t]);  // bitwise
  }
}

TEST_CASE("loss_gradient: constant loss yields the zero vector") {
  const auto policy = Policy::random_init(tiny_config(), 31);
  Rng rng(33);
  const auto ctx = random_context(rng, 3, 3, 0);
  ConstantLoss loss({{ctx, random_output(rng, 4)}});
  const auto grad = model::loss_gradient(policy, loss);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("loss_gradient matches central finite differences over 20 seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto policy = Policy::random_init(tiny_config(), 100 + seed);
    Rng rng(200 + seed);
    const auto ctx = random_context(rng, 2, 3, rng.uniform_int(2));
    const auto out = random_output(rng, 4);
    WeightedLogProbLoss loss({{ctx, out}}, {std::vector<double>(out.size(), 1.0)});
    const auto grad = model::loss_gradient(policy, loss);
    const double err = fd_relative_error(policy, loss, grad);
    INFO("seed ", seed, " fd relative error ", err);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("loss_gradient is linear in the loss") {
  const auto policy = Policy::random_init(tiny_config(), 41);
  Rng rng(43);
  const auto ctx_a = random_context(rng, 2, 3, 0);
  const auto ctx_b = random_context(rng, 3, 2, 1);
  const auto out_a = random_output(rng, 3);
  const auto out_b = random_output(rng, 5);

  WeightedLogProbLoss loss_a({{ctx_a, out_a}}, {std::vector<double>(out_a.size(), 1.0)});
  WeightedLogProbLoss loss_b({{ctx_b, out_b}}, {std::vector<double>(out_b.size(), 0.5)});
  WeightedLogProbLoss loss_sum({{ctx_a, out_a}, {ctx_b, out_b}},
                               {std::vector<double>(out_a.size(), 1.0),
                                std::vector<double>(out_b.size(), 0.5)});

  const auto ga = model::loss_gradient(policy, loss_a);
  const auto gb = model::loss_gradient(policy, loss_b);
  const auto gs = model::loss_gradient(policy, loss_sum);
  for (size_t k = 0; k < gs.size(); ++k) CHECK(std::abs(gs[k] - (ga[k] + gb[k])) <= 1e-10);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  const auto policy = Policy::random_init(tiny_config(), 47);
  const std::string path = "test_model_ckpt.bin";
  model::save_checkpoint(path, policy, 0xDEADBEEFULL);
  const auto loaded = model::load_checkpoint(path);
  CHECK(loaded.rng_seed == 0xDEADBEEFULL);
  CHECK(loaded.policy.cfg == policy.cfg);
  CHECK(loaded.policy.layout == policy.layout);
  CHECK(loaded.policy.values == policy.values);
  std::remove(path.c_str());
}
