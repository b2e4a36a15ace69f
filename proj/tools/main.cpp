#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "conseg/report.hpp"
#include "conseg/task.hpp"
#include "conseg/taskgen.hpp"
#include "conseg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

int cmd_gen(const fs::path& spec_path, const fs::path& out_dir) {
  const conseg::TaskGenSpec spec = conseg::load_taskgen_spec(spec_path);
  const conseg::GeneratedTask gen = conseg::generate(spec);
  conseg::write_dataset(gen, out_dir);
  std::size_t total = gen.validation.size();
  for (const auto& step : gen.step_data) total += step.size();
  std::cout << "wrote " << gen.task.num_steps() << " steps, " << total << " samples to "
            << out_dir.string() << "\n";
  return kExitOk;
}

conseg::ExperimentResult run_one(const conseg::ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  conseg::write_manifest(cfg, out_dir, out_dir / "manifest.json");
  conseg::ExperimentResult result = conseg::run_experiment(cfg);
  conseg::write_metrics_json(result, out_dir / "metrics.json");
  conseg::write_summary_csv(result, out_dir / "summary.csv");
  conseg::write_per_class_csv(result, out_dir / "per_class.csv");
  conseg::write_run_log(result, out_dir / "run_log.json");
  return result;
}

int cmd_run(const fs::path& config_path, const fs::path& out_dir, bool dry_run) {
  const conseg::ExperimentConfig cfg = conseg::load_config(config_path);
  const conseg::Task task = conseg::load_task(cfg.task_file);
  conseg::validate_split(cfg.split, task);
  if (dry_run) {
    for (int t = 1; t <= task.num_steps(); ++t) {
      const fs::path p = cfg.data_dir / ("step_" + std::to_string(t) + ".jsonl");
      if (!fs::exists(p)) throw conseg::ConfigError("missing dataset file: " + p.string());
    }
    if (!fs::exists(cfg.data_dir / "val.jsonl")) {
      throw conseg::ConfigError("missing dataset file: " +
                                (cfg.data_dir / "val.jsonl").string());
    }
    std::cout << "config ok (hash " << conseg::config_hash(cfg) << ")\n";
    return kExitOk;
  }
  run_one(cfg, out_dir);
  std::cout << "wrote metrics to " << out_dir.string() << "\n";
  return kExitOk;
}

struct AblationCell {
  std::string name;
  conseg::DistillMode distill;
  conseg::ReplayMode replay;
  bool bag;
};

int cmd_ablate(const fs::path& config_path, const fs::path& out_dir, std::size_t n_seeds) {
  const conseg::ExperimentConfig base = conseg::load_config(config_path);
  const conseg::Task task = conseg::load_task(base.task_file);
  conseg::validate_split(base.split, task);

  // The component grid: no mechanisms, distillation only, then replay
  // variants with the balanced losses, and the full stack without them.
  const std::vector<AblationCell> cells = {
      {"baseline", conseg::DistillMode::none, conseg::ReplayMode::none, false},
      {"pcbd", conseg::DistillMode::pcbd, conseg::ReplayMode::none, false},
      {"pcbd_random_bag", conseg::DistillMode::pcbd, conseg::ReplayMode::random, true},
      {"pcbd_equal_bag", conseg::DistillMode::pcbd, conseg::ReplayMode::equal, true},
      {"pcbd_cpm_bag", conseg::DistillMode::pcbd, conseg::ReplayMode::cpm, true},
      {"pcbd_cpm_nobag", conseg::DistillMode::pcbd, conseg::ReplayMode::cpm, false},
  };

  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "ablation_summary.csv");
  if (!csv) throw conseg::ConfigError("cannot write ablation_summary.csv");
  csv << "cell,distill,replay,bag,basis,pseudo_labels,seed,step,base,inc,all,avg\n";

  auto fixed6 = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };

  for (const AblationCell& cell : cells) {
    double sum_base = 0.0, sum_inc = 0.0, sum_all = 0.0, sum_avg = 0.0;
    bool any_inc = false;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      conseg::ExperimentConfig cfg = base;
      cfg.seed = base.seed + s;
      cfg.ablation.distill = cell.distill;
      cfg.ablation.replay = cell.replay;
      cfg.ablation.bag = cell.bag;
      const fs::path cell_dir = out_dir / cell.name / ("seed_" + std::to_string(cfg.seed));
      const conseg::ExperimentResult result = run_one(cfg, cell_dir);
      const conseg::StepReport& last = result.steps.back();
      csv << cell.name << "," << conseg::to_string(cell.distill) << ","
          << conseg::to_string(cell.replay) << "," << (cell.bag ? "on" : "off") << ","
          << conseg::to_string(cfg.ablation.basis) << ","
          << (cfg.ablation.pseudo_labels ? "on" : "off") << "," << cfg.seed << "," << last.step
          << "," << fixed6(last.metrics.base_pq) << ",";
      if (last.metrics.inc_pq.has_value()) {
        csv << fixed6(*last.metrics.inc_pq);
        sum_inc += *last.metrics.inc_pq;
        any_inc = true;
      }
      csv << "," << fixed6(last.metrics.all_pq) << "," << fixed6(last.metrics.avg_pq) << "\n";
      sum_base += last.metrics.base_pq;
      sum_all += last.metrics.all_pq;
      sum_avg += last.metrics.avg_pq;
    }
    const double n = static_cast<double>(n_seeds);
    csv << cell.name << "," << conseg::to_string(cell.distill) << ","
        << conseg::to_string(cell.replay) << "," << (cell.bag ? "on" : "off") << ","
        << conseg::to_string(base.ablation.basis) << ","
        << (base.ablation.pseudo_labels ? "on" : "off") << ",avg," << task.num_steps() << ","
        << fixed6(sum_base / n) << ",";
    if (any_inc) csv << fixed6(sum_inc / n);
    csv << "," << fixed6(sum_all / n) << "," << fixed6(sum_avg / n) << "\n";
  }
  std::cout << "wrote " << (out_dir / "ablation_summary.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual panoptic segmentation laboratory"};
  app.require_subcommand(1);

  std::string spec_path, config_path, out_path;
  bool dry_run = false;
  std::size_t n_seeds = 5;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic task + datasets");
  gen->add_option("--spec", spec_path, "generator spec (JSON)")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  CLI::App* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_path, "output directory")->required();
  run->add_flag("--dry-run", dry_run, "validate config and datasets, write nothing");

  CLI::App* ablate = app.add_subcommand("ablate", "run the component ablation grid");
  ablate->add_option("--config", config_path, "experiment config (JSON)")->required();
  ablate->add_option("--out", out_path, "output directory")->required();
  ablate->add_option("--seeds", n_seeds, "seeds per cell")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(spec_path, out_path);
    if (run->parsed()) return cmd_run(config_path, out_path, dry_run);
    if (ablate->parsed()) return cmd_ablate(config_path, out_path, n_seeds);
  } catch (const conseg::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const conseg::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
