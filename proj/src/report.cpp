#include "conseg/report.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

namespace conseg {

namespace {

nlohmann::json metric_report_json(const StepReport& step) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& [cid, pq] : step.metrics.per_class_pq) {
    nlohmann::json row = {{"class_id", cid}, {"pq", pq}};
    auto it = step.metrics.per_class_iou.find(cid);
    row["iou"] = it == step.metrics.per_class_iou.end() ? 0.0 : it->second;
    per_class.push_back(std::move(row));
  }
  nlohmann::json j = {{"step", step.step},
                      {"base", step.metrics.base_pq},
                      {"all", step.metrics.all_pq},
                      {"avg", step.metrics.avg_pq},
                      {"base_iou", step.metrics.base_iou},
                      {"all_iou", step.metrics.all_iou},
                      {"per_class", per_class},
                      {"loss_curve", step.loss_curve}};
  j["inc"] = step.metrics.inc_pq.has_value() ? nlohmann::json(*step.metrics.inc_pq)
                                             : nlohmann::json(nullptr);
  j["inc_iou"] = step.metrics.inc_iou.has_value() ? nlohmann::json(*step.metrics.inc_iou)
                                                  : nlohmann::json(nullptr);
  return j;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_metrics_json(const ExperimentResult& result, const std::filesystem::path& path) {
  nlohmann::json steps = nlohmann::json::array();
  for (const StepReport& s : result.steps) steps.push_back(metric_report_json(s));
  nlohmann::json j = {{"steps", steps}};
  if (!result.steps.empty()) {
    const StepReport& last = result.steps.back();
    j["final"] = {{"step", last.step},
                  {"base", last.metrics.base_pq},
                  {"inc", last.metrics.inc_pq.has_value() ? nlohmann::json(*last.metrics.inc_pq)
                                                          : nlohmann::json(nullptr)},
                  {"all", last.metrics.all_pq},
                  {"avg", last.metrics.avg_pq}};
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_per_class_csv(const ExperimentResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "step,class_id,pq,miou\n";
  for (const StepReport& s : result.steps) {
    for (const auto& [cid, pq] : s.metrics.per_class_pq) {
      auto it = s.metrics.per_class_iou.find(cid);
      const double iou = it == s.metrics.per_class_iou.end() ? 0.0 : it->second;
      out << s.step << "," << cid << "," << fixed6(pq) << "," << fixed6(iou) << "\n";
    }
  }
}

void write_summary_csv(const ExperimentResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "step,base,inc,all\n";
  for (const StepReport& s : result.steps) {
    out << s.step << "," << fixed6(s.metrics.base_pq) << ",";
    if (s.metrics.inc_pq.has_value()) out << fixed6(*s.metrics.inc_pq);
    out << "," << fixed6(s.metrics.all_pq) << "\n";
  }
}

void write_run_log(const ExperimentResult& result, const std::filesystem::path& path) {
  nlohmann::json steps = nlohmann::json::array();
  for (const StepReport& s : result.steps) {
    steps.push_back({{"step", s.step}, {"wall_seconds", s.wall_seconds}});
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << nlohmann::json{{"steps", steps}}.dump(2) << "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string canonical = config_to_json(cfg).dump();
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, hash);
  return buf;
}

void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                    const std::filesystem::path& path) {
  nlohmann::json j = {{"config_hash", config_hash(cfg)},
                      {"seed", cfg.seed},
#ifdef CONSEG_VERSION
                      {"version", CONSEG_VERSION},
#else
                      {"version", "unversioned"},
#endif
                      {"outputs",
                       {{"metrics", (out_dir / "metrics.json").string()},
                        {"summary", (out_dir / "summary.csv").string()},
                        {"per_class", (out_dir / "per_class.csv").string()},
                        {"run_log", (out_dir / "run_log.json").string()}}}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace conseg
