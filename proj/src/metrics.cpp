#include "grpolab/metrics.hpp"

#include <charconv>
#include <fstream>

#include <json.hpp>

#include "grpolab/util.hpp"

namespace grpolab::harness {

namespace {

using json = nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string metrics_step_line(const StepMetrics& m) {
  json j{{"kind", "step"}, {"step", m.step}, {"loss", m.loss}};
  if (m.s_valid) j["s_valid"] = *m.s_valid;
  if (m.mean_reward) j["mean_reward"] = *m.mean_reward;
  if (m.frac_all_zero) j["frac_all_zero"] = *m.frac_all_zero;
  if (m.frac_all_one) j["frac_all_one"] = *m.frac_all_one;
  if (!m.ratio_hist.empty()) {
    json hist = json::array();
    for (const auto& rc : m.ratio_hist) hist.push_back(json::array({rc.ratio, rc.count}));
    j["ratio_hist"] = hist;
  }
  j["skipped"] = m.skipped;
  if (m.train_acc) j["train_acc"] = *m.train_acc;
  if (m.test_acc) j["test_acc"] = *m.test_acc;
  if (m.acc_without_img) j["acc_without_img"] = *m.acc_without_img;
  return j.dump();
}

StepMetrics metrics_step_from_line(const std::string& line) {
  const json j = json::parse(line);
  StepMetrics m;
  m.step = j.at("step").get<int>();
  m.loss = j.at("loss").get<double>();
  if (j.contains("s_valid")) m.s_valid = j["s_valid"].get<double>();
  if (j.contains("mean_reward")) m.mean_reward = j["mean_reward"].get<double>();
  if (j.contains("frac_all_zero")) m.frac_all_zero = j["frac_all_zero"].get<double>();
  if (j.contains("frac_all_one")) m.frac_all_one = j["frac_all_one"].get<double>();
  if (j.contains("ratio_hist"))
    for (const auto& rc : j["ratio_hist"])
      m.ratio_hist.push_back({rc.at(0).get<double>(), rc.at(1).get<int>()});
  if (j.contains("skipped")) m.skipped = j["skipped"].get<int>();
  if (j.contains("train_acc")) m.train_acc = j["train_acc"].get<double>();
  if (j.contains("test_acc")) m.test_acc = j["test_acc"].get<double>();
  if (j.contains("acc_without_img")) m.acc_without_img = j["acc_without_img"].get<double>();
  return m;
}

RunMetrics read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("metrics: cannot open '" + path + "'");
  RunMetrics out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (!j.contains("kind") || j["kind"] != "step") continue;  // header or foreign line
    out.steps.push_back(metrics_step_from_line(line));
  }
  return out;
}

std::string metrics_csv(const RunMetrics& metrics) {
  std::string out = "step,s_valid,mean_reward,frac_all_zero,frac_all_one,loss\n";
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& m : metrics.steps) {
    out += std::to_string(m.step);
    out += ',';
    out += cell(m.s_valid);
    out += ',';
    out += cell(m.mean_reward);
    out += ',';
    out += cell(m.frac_all_zero);
    out += ',';
    out += cell(m.frac_all_one);
    out += ',';
    out += format_double(m.loss);
    out += '\n';
  }
  return out;
}

}  // namespace grpolab::harness
