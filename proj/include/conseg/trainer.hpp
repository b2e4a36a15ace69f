#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "conseg/losses.hpp"
#include "conseg/metrics.hpp"
#include "conseg/model.hpp"
#include "conseg/replay.hpp"
#include "conseg/types.hpp"

namespace conseg {

enum class DistillMode { none, entire, pcbd };
enum class ReplayMode { none, random, equal, cpm };

DistillMode parse_distill_mode(const std::string& s);
ReplayMode parse_replay_mode(const std::string& s);
std::string to_string(DistillMode m);
std::string to_string(ReplayMode m);

struct AblationFlags {
  DistillMode distill = DistillMode::pcbd;
  ReplayMode replay = ReplayMode::cpm;
  bool bag = true;
  CountBasis basis = CountBasis::segment;
  // Off turns the frozen model's predictions off as extra annotations;
  // plain fine-tuning sets this false.
  bool pseudo_labels = true;
};

struct ModelConfig {
  std::size_t dim = 16;
  std::size_t n_queries = 8;
  std::size_t n_layers = 3;
  double init_scale = 0.1;
};

struct ExperimentConfig {
  std::filesystem::path task_file;
  std::filesystem::path data_dir;
  std::string split;  // "N1-N2", validated against the task's steps
  std::size_t replay_capacity = 300;
  LossWeights weights;
  // First-step rate twice the incremental rate; calibrated so the toy
  // model actually fits its training sets within the iteration budget.
  double lr_first = 0.1;
  double lr_incremental = 0.05;
  std::size_t iterations_per_class = 300;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  ModelConfig model;
  double mask_threshold = 0.5;
  double pseudo_confidence = 0.8;
  std::size_t pseudo_min_area = 4;
  AblationFlags ablation;
};

// Strict JSON; task_file/data_dir are resolved relative to the config's
// directory.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// Parses "N1-N2" and checks it against the task's actual step sizes.
void validate_split(const std::string& split, const Task& task);

// Retention fraction |C^{1:t-1}|/|C^{1:t}| for the replay update at step t.
double retention_fraction(const Task& task, int step);

struct StepReport {
  int step = 0;
  MetricReport metrics;
  std::vector<double> loss_curve;
  double wall_seconds = 0.0;  // reported in the run log, never in metrics.json
};

struct ExperimentResult {
  std::vector<StepReport> steps;
};

// One sample of a training batch: effective labels are the origin
// annotations for replay samples and ground truth plus merged
// pseudo-labels for regular images.
struct BatchEntry {
  const Sample* sample = nullptr;
  const std::vector<Segment>* labels = nullptr;
  SampleKind kind = SampleKind::regular;
  const std::vector<Mat>* frozen_features = nullptr;  // per-layer, null when unused
};

struct BatchLosses {
  double bag1 = 0.0;
  double bag2 = 0.0;
  double mask = 0.0;
  double dist = 0.0;
  double total = 0.0;
};

// Forward/assign/loss/backward over one batch and a single gradient step.
// past_classes drives the backtrace; lr 0 leaves the model bitwise
// unchanged.
BatchLosses train_batch(ModelState& model, const std::vector<BatchEntry>& batch,
                        const std::set<std::uint32_t>& past_classes, const ExperimentConfig& cfg,
                        double lr, DistillMode distill, bool bag_enabled);

struct StepInput {
  const Task* task = nullptr;
  int step = 1;
  const std::vector<Sample>* data = nullptr;  // D_t
  const ReplaySet* replay = nullptr;          // R^{t-1}, null when disabled or t=1
  const ModelState* prev_model = nullptr;     // M^{t-1}, null at t=1
};

struct StepOutput {
  ModelState model;
  std::vector<double> loss_curve;
};

// Step 1 trains from a seeded init; later steps snapshot the previous
// model, grow the classifier, generate pseudo-labels, and mix replay
// samples into every batch.
StepOutput run_step(const StepInput& in, const ExperimentConfig& cfg);

// Full protocol: steps 1..T with validation after each step and replay
// set maintenance per the ablation flags.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace conseg
