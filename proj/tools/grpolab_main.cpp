#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "grpolab/calibration.hpp"
#include "grpolab/checkpoint.hpp"
#include "grpolab/harness.hpp"
#include "grpolab/hint.hpp"
#include "grpolab/metrics.hpp"
#include "grpolab/model.hpp"
#include "grpolab/tasks.hpp"
#include "grpolab/util.hpp"

namespace {

using namespace grpolab;
using json = nlohmann::json;

std::array<double, 4> parse_tier_mix(const std::string& text) {
  std::array<double, 4> mix{};
  std::stringstream ss(text);
  std::string item;
  size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 4) throw ConfigError("tier-mix: expected 4 comma-separated weights");
    mix[i++] = std::stod(item);
  }
  if (i != 4) throw ConfigError("tier-mix: expected 4 comma-separated weights");
  return mix;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

json config_json(const harness::TrainConfig& cfg, const model::ModelConfig& mc,
                 const std::string& algo) {
  const char* strategy = cfg.strategy.kind == hint::HintStrategy::Kind::Fixed      ? "fixed"
                         : cfg.strategy.kind == hint::HintStrategy::Kind::Random   ? "random"
                                                                                   : "adaptive";
  return json{{"algo", algo},
              {"batch_size", cfg.batch_size},
              {"steps", cfg.steps},
              {"learning_rate", cfg.learning_rate},
              {"weight_decay", cfg.weight_decay},
              {"sft_image_dropout", cfg.sft_image_dropout},
              {"group_size", cfg.grpo.group_size},
              {"clip_eps", cfg.grpo.clip_eps},
              {"kl_beta", cfg.grpo.kl_beta},
              {"std_eps", cfg.grpo.std_eps},
              {"strategy", strategy},
              {"alpha", cfg.strategy.alpha},
              {"m", cfg.strategy.m},
              {"injection", cfg.injection == hint::Injection::Query ? "query" : "answer"},
              {"rollout_temperature", cfg.rollout_temperature},
              {"seed", cfg.seed},
              {"eval_every", cfg.eval_every},
              {"max_new_tokens", cfg.max_new_tokens},
              {"require_mixed_selection", cfg.require_mixed_selection},
              {"model", json{{"vocab_size", mc.vocab_size},
                             {"d_model", mc.d_model},
                             {"n_head", mc.n_head},
                             {"n_layer", mc.n_layer},
                             {"context_window", mc.context_window}}}};
}

struct TrainCliArgs {
  std::string train_path, test_path, out_prefix = "run";
  std::string algo = "grpo";
  std::string config_path, init_ckpt;
  std::string strategy, injection;
  std::optional<int> steps, batch_size, group_size, m, eval_every, max_new_tokens;
  std::optional<double> lr, weight_decay, clip_eps, kl_beta, std_eps, alpha, temperature, sft_image_dropout;
  std::optional<uint64_t> seed;
  bool require_mixed = false;
  int d_model = 24, n_head = 3, n_layer = 2, window = 128;
  uint64_t init_seed = 1;
  double init_std = 0.08;
};

int run_train(const TrainCliArgs& args) {
  harness::TrainConfig cfg;
  if (!args.config_path.empty()) cfg = harness::load_train_config(args.config_path);
  if (args.steps) cfg.steps = *args.steps;
  if (args.batch_size) cfg.batch_size = *args.batch_size;
  if (args.lr) cfg.learning_rate = *args.lr;
  if (args.weight_decay) cfg.weight_decay = *args.weight_decay;
  if (args.sft_image_dropout) cfg.sft_image_dropout = *args.sft_image_dropout;
  if (args.group_size) cfg.grpo.group_size = *args.group_size;
  if (args.clip_eps) cfg.grpo.clip_eps = *args.clip_eps;
  if (args.kl_beta) cfg.grpo.kl_beta = *args.kl_beta;
  if (args.std_eps) cfg.grpo.std_eps = *args.std_eps;
  if (!args.strategy.empty()) harness::apply_config_entry(cfg, "strategy", args.strategy);
  if (args.alpha) cfg.strategy.alpha = *args.alpha;
  if (args.m) cfg.strategy.m = *args.m;
  if (!args.injection.empty()) harness::apply_config_entry(cfg, "injection", args.injection);
  if (args.temperature) cfg.rollout_temperature = *args.temperature;
  if (args.seed) cfg.seed = *args.seed;
  if (args.eval_every) cfg.eval_every = *args.eval_every;
  if (args.max_new_tokens) cfg.max_new_tokens = *args.max_new_tokens;
  if (args.require_mixed) cfg.require_mixed_selection = true;
  cfg.validate();

  tasks::Dataset dataset;
  dataset.train = tasks::read_jsonl(args.train_path);
  if (!args.test_path.empty()) dataset.test = tasks::read_jsonl(args.test_path);

  model::Policy init = [&] {
    if (!args.init_ckpt.empty()) return model::load_checkpoint(args.init_ckpt).policy;
    model::ModelConfig mc;
    mc.d_model = args.d_model;
    mc.n_head = args.n_head;
    mc.n_layer = args.n_layer;
    mc.context_window = args.window;
    return model::Policy::random_init(mc, args.init_seed, args.init_std);
  }();

  std::ofstream metrics_out(args.out_prefix + ".metrics.jsonl", std::ios::trunc);
  if (!metrics_out)
    throw ConfigError("train: cannot open '" + args.out_prefix + ".metrics.jsonl'");
  metrics_out << json{{"schema", 1},
                      {"kind", "header"},
                      {"config", config_json(cfg, init.cfg, args.algo)}}
                     .dump()
              << '\n';

  harness::TrainSinks sinks;
  sinks.on_step = [&](const harness::StepMetrics& m) {
    metrics_out << harness::metrics_step_line(m) << '\n';
  };
  sinks.on_checkpoint = [&](const model::Policy& p, int step, bool final) {
    const std::string path = final ? args.out_prefix + ".final.ckpt"
                                   : args.out_prefix + ".step" + std::to_string(step) + ".ckpt";
    model::save_checkpoint(path, p, cfg.seed);
  };

  const auto result = args.algo == "sft" ? harness::train_sft(cfg, dataset, init, &sinks)
                                         : harness::train_grpo(cfg, dataset, init, &sinks);
  const auto& last = result.metrics.steps.back();
  std::cout << "trained " << cfg.steps << " steps, final loss " << last.loss;
  if (last.test_acc) std::cout << ", test accuracy " << *last.test_acc;
  std::cout << "\ncheckpoint: " << args.out_prefix << ".final.ckpt" << std::endl;
  return 0;
}

void write_text(const std::string& path, const std::string& text, const char* what) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw ConfigError(std::string(what) + ": write to '" + path + "' failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grpolab: GRPO with adaptive reasoning hints and text-bias calibration on a "
               "synthetic grid-arithmetic benchmark"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a dataset (JSONL train/test splits)");
  std::string out_train = "train.jsonl", out_test = "test.jsonl", tier_mix = "0.25,0.25,0.25,0.25";
  int n_train = 100, n_test = 50;
  double shortcut_fraction = 0.0;
  uint64_t gen_seed = 0;
  gen->add_option("--out-train", out_train, "train split path");
  gen->add_option("--out-test", out_test, "test split path");
  gen->add_option("--n-train", n_train, "train instances");
  gen->add_option("--n-test", n_test, "test instances");
  gen->add_option("--tier-mix", tier_mix, "tier weights t1,t2,t3,t4");
  gen->add_option("--shortcut-fraction", shortcut_fraction, "fraction of shortcut queries");
  gen->add_option("--seed", gen_seed, "generator seed");

  // ---- train ----
  TrainCliArgs t;
  auto* train = app.add_subcommand("train", "train a policy (grpo or sft)");
  train->add_option("--train", t.train_path, "train JSONL")->required();
  train->add_option("--test", t.test_path, "test JSONL");
  train->add_option("--algo", t.algo, "grpo | sft")->check(CLI::IsMember({"grpo", "sft"}));
  train->add_option("--config", t.config_path, "flat key=value config file");
  train->add_option("--out", t.out_prefix, "output prefix for metrics and checkpoints");
  train->add_option("--init-ckpt", t.init_ckpt, "warm-start checkpoint");
  train->add_option("--steps", t.steps, "training steps");
  train->add_option("--batch-size", t.batch_size, "samples per step");
  train->add_option("--lr", t.lr, "learning rate");
  train->add_option("--weight-decay", t.weight_decay, "AdamW decoupled weight decay");
  train->add_option("--sft-image-dropout", t.sft_image_dropout,
                    "SFT: image-condition dropout for text-sufficient samples");
  train->add_option("--group-size", t.group_size, "rollouts per group (G)");
  train->add_option("--clip-eps", t.clip_eps, "surrogate clip range");
  train->add_option("--kl-beta", t.kl_beta, "KL penalty weight");
  train->add_option("--std-eps", t.std_eps, "advantage std offset");
  train->add_option("--strategy", t.strategy, "fixed | random | adaptive")
      ->check(CLI::IsMember({"fixed", "random", "adaptive"}));
  train->add_option("--alpha", t.alpha, "fixed hint ratio");
  train->add_option("--m", t.m, "adaptive group count (M)");
  train->add_option("--injection", t.injection, "query | answer")
      ->check(CLI::IsMember({"query", "answer"}));
  train->add_option("--temperature", t.temperature, "rollout temperature");
  train->add_option("--seed", t.seed, "run seed");
  train->add_option("--eval-every", t.eval_every, "eval cadence (0 = final only)");
  train->add_option("--max-new-tokens", t.max_new_tokens, "rollout length cap");
  train->add_flag("--require-mixed", t.require_mixed, "adaptive selection requires a mixed group");
  train->add_option("--d-model", t.d_model, "model width (fresh init only)");
  train->add_option("--n-head", t.n_head, "attention heads (fresh init only)");
  train->add_option("--n-layer", t.n_layer, "layers (fresh init only)");
  train->add_option("--window", t.window, "context window (fresh init only)");
  train->add_option("--init-seed", t.init_seed, "init seed (fresh init only)");
  train->add_option("--init-std", t.init_std, "init scale (fresh init only)");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_out;
  std::optional<double> ev_gamma;
  int ev_max_len = 64;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset JSONL")->required();
  ev->add_option("--gamma", ev_gamma, "enable text-bias calibration with this gamma");
  ev->add_option("--max-len", ev_max_len, "decode length cap");
  ev->add_option("--out", ev_out, "write the report JSON here (default stdout)");

  // ---- sweep-gamma ----
  auto* sg = app.add_subcommand("sweep-gamma", "accuracy across calibration gammas");
  std::string sg_ckpt, sg_data, sg_out, sg_gammas = "0,0.4,0.8,1.2,1.6", sg_subset = "all";
  int sg_max_len = 64;
  sg->add_option("--ckpt", sg_ckpt, "checkpoint path")->required();
  sg->add_option("--data", sg_data, "dataset JSONL")->required();
  sg->add_option("--gammas", sg_gammas, "comma-separated gamma grid");
  sg->add_option("--subset", sg_subset, "all | image-required | shortcut")
      ->check(CLI::IsMember({"all", "image-required", "shortcut"}));
  sg->add_option("--max-len", sg_max_len, "decode length cap");
  sg->add_option("--out", sg_out, "write CSV here (default stdout)");

  // ---- sweep-m ----
  auto* sm = app.add_subcommand("sweep-m", "adaptive hint training across M values");
  std::string sm_train, sm_test, sm_out, sm_values = "1,2,3,4", sm_init;
  int sm_steps = 200, sm_batch = 4;
  double sm_lr = 1e-3;
  uint64_t sm_seed = 0;
  sm->add_option("--train", sm_train, "train JSONL")->required();
  sm->add_option("--test", sm_test, "test JSONL")->required();
  sm->add_option("--m-values", sm_values, "comma-separated M grid");
  sm->add_option("--init-ckpt", sm_init, "warm-start checkpoint");
  sm->add_option("--steps", sm_steps, "steps per run");
  sm->add_option("--batch-size", sm_batch, "samples per step");
  sm->add_option("--lr", sm_lr, "learning rate");
  sm->add_option("--seed", sm_seed, "run seed");
  sm->add_option("--out", sm_out, "write CSV here (default stdout)");

  // ---- plot ----
  auto* plot = app.add_subcommand("plot", "emit CSV series from a metrics JSONL");
  std::string plot_metrics, plot_out;
  plot->add_option("--metrics", plot_metrics, "metrics JSONL path")->required();
  plot->add_option("--out", plot_out, "write CSV here (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      tasks::DatasetSpec spec;
      spec.n_train = n_train;
      spec.n_test = n_test;
      spec.tier_mix = parse_tier_mix(tier_mix);
      spec.shortcut_fraction = shortcut_fraction;
      spec.seed = gen_seed;
      const auto ds = tasks::gen_dataset(spec);
      tasks::write_jsonl(out_train, ds.train);
      tasks::write_jsonl(out_test, ds.test);
      std::cout << "wrote " << ds.train.size() << " train -> " << out_train << ", "
                << ds.test.size() << " test -> " << out_test << std::endl;
      return 0;
    }
    if (train->parsed()) return run_train(t);
    if (ev->parsed()) {
      const auto ckpt = model::load_checkpoint(ev_ckpt);
      const auto data = tasks::read_jsonl(ev_data);
      std::optional<calib::CalibrationConfig> cal;
      if (ev_gamma) {
        cal.emplace();
        cal->gamma = *ev_gamma;
        cal->validate();
      }
      const auto report = harness::evaluate(ckpt.policy, data, cal, ev_max_len);
      write_text(ev_out, report.to_json_string() + "\n", "eval");
      return 0;
    }
    if (sg->parsed()) {
      const auto ckpt = model::load_checkpoint(sg_ckpt);
      auto data = tasks::read_jsonl(sg_data);
      if (sg_subset != "all") {
        const bool want_shortcut = sg_subset == "shortcut";
        std::erase_if(data,
                      [&](const tasks::TaskInstance& i) { return i.shortcut != want_shortcut; });
      }
      std::string csv = "gamma,accuracy,n\n";
      for (double gamma : parse_double_list(sg_gammas)) {
        calib::CalibrationConfig cal;
        cal.gamma = gamma;
        cal.validate();
        const auto report =
            harness::evaluate(ckpt.policy, data, cal, sg_max_len, /*with_modality=*/false);
        csv += std::to_string(gamma) + "," + std::to_string(report.accuracy) + "," +
               std::to_string(report.n) + "\n";
      }
      write_text(sg_out, csv, "sweep-gamma");
      return 0;
    }
    if (sm->parsed()) {
      tasks::Dataset dataset;
      dataset.train = tasks::read_jsonl(sm_train);
      dataset.test = tasks::read_jsonl(sm_test);
      model::Policy init = sm_init.empty() ? model::Policy::random_init(model::ModelConfig{}, 1)
                                           : model::load_checkpoint(sm_init).policy;
      std::string csv = "m,test_accuracy\n";
      for (int m : parse_int_list(sm_values)) {
        harness::TrainConfig cfg;
        cfg.strategy = hint::HintStrategy::adaptive(m);
        cfg.steps = sm_steps;
        cfg.batch_size = sm_batch;
        cfg.learning_rate = sm_lr;
        cfg.seed = sm_seed;
        cfg.eval_every = 0;
        const auto result = harness::train_grpo(cfg, dataset, init);
        const auto acc = result.metrics.steps.back().test_acc;
        csv += std::to_string(m) + "," + std::to_string(acc.value_or(0.0)) + "\n";
        std::cerr << "M=" << m << " done" << std::endl;
      }
      write_text(sm_out, csv, "sweep-m");
      return 0;
    }
    if (plot->parsed()) {
      const auto metrics = harness::read_metrics_jsonl(plot_metrics);
      write_text(plot_out, harness::metrics_csv(metrics), "plot");
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
