#include "conseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "conseg/dataset.hpp"
#include "conseg/rng.hpp"
#include "conseg/task.hpp"

namespace conseg {

namespace {

constexpr std::uint64_t kTagModelInit = 0x6d6f64656c;
constexpr std::uint64_t kTagBatches = 0x62617463;
constexpr std::uint64_t kTagReplay = 0x7265706c;

LossValue distillation_against_features(const ForwardTrace& current,
                                        const std::vector<Mat>& frozen_features,
                                        std::span<const std::size_t> past_queries) {
  LossValue loss;
  if (past_queries.empty()) return loss;
  const std::size_t s_count = current.layers.size();
  if (frozen_features.size() != s_count) {
    throw ConfigError("distillation: frozen feature cache has wrong depth");
  }
  loss.grads.d_query_features.assign(s_count, Mat(current.n_queries, current.dim));
  const double denom = static_cast<double>(s_count) *
                       static_cast<double>(past_queries.size()) *
                       static_cast<double>(current.dim);
  double sum = 0.0;
  for (std::size_t s = 1; s <= s_count; ++s) {
    const Mat& cur = current.query_features(s);
    const Mat& ref = frozen_features[s - 1];
    Mat& grad = loss.grads.d_query_features[s - 1];
    for (std::size_t i : past_queries) {
      for (std::size_t c = 0; c < current.dim; ++c) {
        const double diff = cur(i, c) - ref(i, c);
        sum += diff * diff;
        grad(i, c) = 2.0 * diff / denom;
      }
    }
  }
  loss.value = sum / denom;
  return loss;
}

std::vector<std::size_t> all_queries(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

// Distinct draws without replacement; n must not exceed the pool.
std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t pool, std::size_t n) {
  std::vector<std::size_t> out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t k = rng.index(pool);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

}  // namespace

DistillMode parse_distill_mode(const std::string& s) {
  if (s == "none") return DistillMode::none;
  if (s == "entire") return DistillMode::entire;
  if (s == "pcbd") return DistillMode::pcbd;
  throw ConfigError("unknown distill mode: " + s);
}

ReplayMode parse_replay_mode(const std::string& s) {
  if (s == "none") return ReplayMode::none;
  if (s == "random") return ReplayMode::random;
  if (s == "equal") return ReplayMode::equal;
  if (s == "cpm") return ReplayMode::cpm;
  throw ConfigError("unknown replay mode: " + s);
}

std::string to_string(DistillMode m) {
  switch (m) {
    case DistillMode::none: return "none";
    case DistillMode::entire: return "entire";
    case DistillMode::pcbd: return "pcbd";
  }
  return "none";
}

std::string to_string(ReplayMode m) {
  switch (m) {
    case ReplayMode::none: return "none";
    case ReplayMode::random: return "random";
    case ReplayMode::equal: return "equal";
    case ReplayMode::cpm: return "cpm";
  }
  return "none";
}

ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: root must be an object");
  static const std::set<std::string> known = {
      "task_file",        "data_dir",   "split",          "replay_capacity",
      "loss_weights",     "learning_rate_first", "learning_rate_incremental",
      "iterations_per_class", "batch_size", "seed",       "model",
      "mask_threshold",   "pseudo_label_confidence", "pseudo_label_min_area", "ablation"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("config: unknown field \"" + it.key() + "\"");
  }
  ExperimentConfig cfg;
  try {
    cfg.task_file = base_dir / j.at("task_file").get<std::string>();
    cfg.data_dir = base_dir / j.at("data_dir").get<std::string>();
    cfg.split = j.at("split").get<std::string>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.replay_capacity = j.value("replay_capacity", cfg.replay_capacity);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      cfg.weights.alpha = w.value("alpha", cfg.weights.alpha);
      cfg.weights.beta = w.value("beta", cfg.weights.beta);
      cfg.weights.gamma = w.value("gamma", cfg.weights.gamma);
    }
    cfg.lr_first = j.value("learning_rate_first", cfg.lr_first);
    cfg.lr_incremental = j.value("learning_rate_incremental", cfg.lr_incremental);
    cfg.iterations_per_class = j.value("iterations_per_class", cfg.iterations_per_class);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      cfg.model.dim = m.value("d", cfg.model.dim);
      cfg.model.n_queries = m.value("n_queries", cfg.model.n_queries);
      cfg.model.n_layers = m.value("layers", cfg.model.n_layers);
      cfg.model.init_scale = m.value("init_scale", cfg.model.init_scale);
    }
    cfg.mask_threshold = j.value("mask_threshold", cfg.mask_threshold);
    cfg.pseudo_confidence = j.value("pseudo_label_confidence", cfg.pseudo_confidence);
    cfg.pseudo_min_area = j.value("pseudo_label_min_area", cfg.pseudo_min_area);
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      static const std::set<std::string> flags = {"distill", "replay", "bag", "basis",
                                                  "pseudo_labels"};
      for (auto it = a.begin(); it != a.end(); ++it) {
        if (!flags.count(it.key())) {
          throw ConfigError("config.ablation: unknown field \"" + it.key() + "\"");
        }
      }
      if (a.contains("distill")) cfg.ablation.distill = parse_distill_mode(a.at("distill"));
      if (a.contains("replay")) cfg.ablation.replay = parse_replay_mode(a.at("replay"));
      cfg.ablation.bag = a.value("bag", cfg.ablation.bag);
      if (a.contains("basis")) cfg.ablation.basis = parse_count_basis(a.at("basis"));
      cfg.ablation.pseudo_labels = a.value("pseudo_labels", cfg.ablation.pseudo_labels);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.lr_first <= 0.0 || cfg.lr_incremental <= 0.0) {
    throw ConfigError("config: learning rates must be positive");
  }
  if (cfg.batch_size == 0 || cfg.iterations_per_class == 0) {
    throw ConfigError("config: batch size and iterations must be positive");
  }
  if (cfg.mask_threshold <= 0.0 || cfg.mask_threshold >= 1.0) {
    throw ConfigError("config: mask threshold must lie in (0, 1)");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  return {
      {"task_file", cfg.task_file.string()},
      {"data_dir", cfg.data_dir.string()},
      {"split", cfg.split},
      {"replay_capacity", cfg.replay_capacity},
      {"loss_weights",
       {{"alpha", cfg.weights.alpha}, {"beta", cfg.weights.beta}, {"gamma", cfg.weights.gamma}}},
      {"learning_rate_first", cfg.lr_first},
      {"learning_rate_incremental", cfg.lr_incremental},
      {"iterations_per_class", cfg.iterations_per_class},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"model",
       {{"d", cfg.model.dim},
        {"n_queries", cfg.model.n_queries},
        {"layers", cfg.model.n_layers},
        {"init_scale", cfg.model.init_scale}}},
      {"mask_threshold", cfg.mask_threshold},
      {"pseudo_label_confidence", cfg.pseudo_confidence},
      {"pseudo_label_min_area", cfg.pseudo_min_area},
      {"ablation",
       {{"distill", to_string(cfg.ablation.distill)},
        {"replay", to_string(cfg.ablation.replay)},
        {"bag", cfg.ablation.bag},
        {"basis", to_string(cfg.ablation.basis)},
        {"pseudo_labels", cfg.ablation.pseudo_labels}}}};
}

void validate_split(const std::string& split, const Task& task) {
  const auto dash = split.find('-');
  if (dash == std::string::npos) throw ConfigError("split must look like \"N1-N2\"");
  std::size_t base = 0, inc = 0;
  try {
    base = std::stoul(split.substr(0, dash));
    inc = std::stoul(split.substr(dash + 1));
  } catch (const std::exception&) {
    throw ConfigError("split must look like \"N1-N2\"");
  }
  if (base == 0 || inc == 0) throw ConfigError("split class counts must be positive");
  if (task.classes_at(1).size() != base) {
    throw ConfigError("split base class count does not match the task");
  }
  for (int t = 2; t <= task.num_steps(); ++t) {
    if (task.classes_at(t).size() != inc) {
      throw ConfigError("split incremental class count does not match step " +
                        std::to_string(t));
    }
  }
}

double retention_fraction(const Task& task, int step) {
  if (step < 2) throw ConfigError("retention_fraction: defined for steps >= 2");
  const double past = static_cast<double>(task.classes_up_to(step - 1).size());
  const double seen = static_cast<double>(task.classes_up_to(step).size());
  return past / seen;
}

BatchLosses train_batch(ModelState& model, const std::vector<BatchEntry>& batch,
                        const std::set<std::uint32_t>& past_classes, const ExperimentConfig& cfg,
                        double lr, DistillMode distill, bool bag_enabled) {
  if (batch.empty()) throw ConfigError("train_batch: empty batch");

  struct PerSample {
    ForwardTrace trace;
    AssignmentResult assignment;
    LossValue bag, mask, dist;
  };
  std::vector<PerSample> work(batch.size());
  std::vector<AssignmentResult> assignments(batch.size());
  std::vector<SampleKind> kinds(batch.size());

  std::size_t n_replay = 0, n_regular = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const BatchEntry& entry = batch[b];
    if (entry.labels->size() > cfg.model.n_queries) {
      throw ConfigError("train_batch: sample carries more labels than queries");
    }
    work[b].trace = forward(model, *entry.sample);
    work[b].assignment = assign_labels(work[b].trace, *entry.labels, cfg.weights.alpha,
                                       cfg.weights.beta);
    assignments[b] = work[b].assignment;
    kinds[b] = entry.kind;
    (entry.kind == SampleKind::replay ? n_replay : n_regular) += 1;
  }
  const NoObjectCounts counts = count_no_object(assignments, kinds);

  BatchLosses losses;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const BatchEntry& entry = batch[b];
    PerSample& ps = work[b];

    if (!bag_enabled) {
      // Plain cross-entropy over every query, for both sample kinds.
      ps.bag = bag2_loss(ps.assignment, ps.trace, NoObjectCounts{0, 1});
      losses.bag2 += ps.bag.value / static_cast<double>(batch.size());
    } else if (entry.kind == SampleKind::replay) {
      ps.bag = bag1_loss(ps.assignment, ps.trace);
      losses.bag1 += ps.bag.value / static_cast<double>(n_replay);
    } else {
      ps.bag = bag2_loss(ps.assignment, ps.trace, counts);
      losses.bag2 += ps.bag.value / static_cast<double>(n_regular);
    }

    ps.mask = mask_loss(ps.trace, ps.assignment, *entry.labels);
    losses.mask += ps.mask.value / static_cast<double>(batch.size());

    if (distill != DistillMode::none && entry.frozen_features != nullptr) {
      std::vector<std::size_t> selected;
      if (distill == DistillMode::entire) {
        selected = all_queries(ps.trace.n_queries);
      } else {
        selected = backtrace_past(ps.assignment, *entry.labels, past_classes);
      }
      ps.dist = distillation_against_features(ps.trace, *entry.frozen_features, selected);
      losses.dist += ps.dist.value / static_cast<double>(batch.size());
    }
  }
  losses.total = total_loss(losses.bag1, losses.bag2, losses.mask, losses.dist, cfg.weights);

  ModelGrads batch_grads = zeros_like(model);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const BatchEntry& entry = batch[b];
    PerSample& ps = work[b];
    const double bag_scale =
        !bag_enabled
            ? cfg.weights.alpha / static_cast<double>(batch.size())
            : cfg.weights.alpha / static_cast<double>(entry.kind == SampleKind::replay
                                                          ? n_replay
                                                          : n_regular);
    TraceGrads combined;
    combined.accumulate(ps.bag.grads, bag_scale);
    combined.accumulate(ps.mask.grads, cfg.weights.beta / static_cast<double>(batch.size()));
    if (!ps.dist.grads.d_query_features.empty()) {
      combined.accumulate(ps.dist.grads, cfg.weights.gamma / static_cast<double>(batch.size()));
    }
    accumulate(batch_grads, backward(model, ps.trace, combined).params, 1.0);
  }
  apply_gradient_step(model, batch_grads, lr);
  return losses;
}

StepOutput run_step(const StepInput& in, const ExperimentConfig& cfg) {
  const Task& task = *in.task;
  const int t = in.step;
  const std::vector<Sample>& data = *in.data;
  if (data.empty()) throw ConfigError("run_step: empty training set");

  StepOutput out;
  std::optional<ModelState> frozen;
  if (t == 1) {
    std::vector<ClassId> classes = task.classes_at(1);
    std::sort(classes.begin(), classes.end());
    const Sample& probe = data.front();
    out.model = init_model(cfg.model.dim, cfg.model.n_queries, cfg.model.n_layers, probe.h,
                           probe.w, classes, cfg.model.init_scale,
                           derive_seed(cfg.seed, {kTagModelInit, 1}));
  } else {
    if (in.prev_model == nullptr) throw ConfigError("run_step: missing previous model");
    frozen = snapshot(*in.prev_model);
    out.model = extend_classifier(*in.prev_model, task.classes_at(t), cfg.model.init_scale,
                                  derive_seed(cfg.seed, {kTagModelInit,
                                                         static_cast<std::uint64_t>(t)}));
  }

  const std::set<std::uint32_t> past_ids =
      t > 1 ? task.id_set_up_to(t - 1) : std::set<std::uint32_t>{};
  const DistillMode distill = t > 1 ? cfg.ablation.distill : DistillMode::none;
  const bool use_pseudo = t > 1 && cfg.ablation.pseudo_labels;
  const bool use_frozen = t > 1 && distill != DistillMode::none;

  // Effective labels and frozen per-layer features, fixed for the whole
  // step (the previous model never changes during it).
  std::map<std::string, std::vector<Segment>> labels_by_id;
  std::map<std::string, std::vector<Mat>> frozen_by_id;
  auto frozen_features_of = [&](const Sample& s) {
    ForwardTrace ft = forward(*frozen, s);
    std::vector<Mat> feats;
    feats.reserve(ft.layers.size());
    for (const LayerTrace& lt : ft.layers) feats.push_back(lt.out);
    return feats;
  };
  for (const Sample& s : data) {
    std::vector<Segment> labels = s.segments;
    if (use_pseudo || use_frozen) {
      ForwardTrace ft = forward(*frozen, s);
      if (use_frozen) {
        std::vector<Mat> feats;
        for (const LayerTrace& lt : ft.layers) feats.push_back(lt.out);
        frozen_by_id[s.id] = std::move(feats);
      }
      if (use_pseudo) {
        std::vector<PredictedSegment> preds = predict_segments(ft, cfg.mask_threshold);
        std::stable_sort(preds.begin(), preds.end(),
                         [](const PredictedSegment& a, const PredictedSegment& b) {
                           return a.confidence > b.confidence;
                         });
        labels = merge_pseudo_labels(labels, preds, cfg.pseudo_confidence, cfg.pseudo_min_area);
        if (labels.size() > cfg.model.n_queries) labels.resize(cfg.model.n_queries);
      }
    }
    labels_by_id[s.id] = std::move(labels);
  }

  const bool mix_replay = t > 1 && in.replay != nullptr && !in.replay->samples.empty();
  if (mix_replay) {
    for (const Sample& s : in.replay->samples) {
      labels_by_id[s.id] = s.segments;
      if (use_frozen) frozen_by_id[s.id] = frozen_features_of(s);
    }
  }

  // Replay share of each batch follows the pool proportions, but always at
  // least one replay and one regular sample when mixing. A batch of one
  // cannot mix.
  std::size_t batch_replay = 0;
  if (mix_replay && cfg.batch_size >= 2) {
    const double share = static_cast<double>(in.replay->samples.size()) /
                         static_cast<double>(in.replay->samples.size() + data.size());
    batch_replay = std::clamp<std::size_t>(
        round_half_up(share * static_cast<double>(cfg.batch_size)), 1,
        std::min(cfg.batch_size - 1, in.replay->samples.size()));
  }
  const std::size_t batch_regular = std::min(cfg.batch_size - batch_replay, data.size());

  const double lr = t == 1 ? cfg.lr_first : cfg.lr_incremental;
  const std::size_t iterations = cfg.iterations_per_class * task.classes_at(t).size();
  Rng batch_rng(derive_seed(cfg.seed, {kTagBatches, static_cast<std::uint64_t>(t)}));

  for (std::size_t iter = 0; iter < iterations; ++iter) {
    std::vector<BatchEntry> batch;
    for (std::size_t k : draw_distinct(batch_rng, data.size(), batch_regular)) {
      const Sample& s = data[k];
      BatchEntry e;
      e.sample = &s;
      e.labels = &labels_by_id.at(s.id);
      e.kind = SampleKind::regular;
      if (use_frozen) e.frozen_features = &frozen_by_id.at(s.id);
      batch.push_back(e);
    }
    if (batch_replay > 0) {
      for (std::size_t k : draw_distinct(batch_rng, in.replay->samples.size(), batch_replay)) {
        const Sample& s = in.replay->samples[k];
        BatchEntry e;
        e.sample = &s;
        e.labels = &labels_by_id.at(s.id);
        e.kind = SampleKind::replay;
        if (use_frozen) e.frozen_features = &frozen_by_id.at(s.id);
        batch.push_back(e);
      }
    }
    const BatchLosses losses =
        train_batch(out.model, batch, past_ids, cfg, lr, distill, cfg.ablation.bag);
    out.loss_curve.push_back(losses.total);
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const Task task = load_task(cfg.task_file);
  validate_split(cfg.split, task);

  std::vector<std::vector<Sample>> step_data;
  for (int t = 1; t <= task.num_steps(); ++t) {
    step_data.push_back(
        load_samples(cfg.data_dir / ("step_" + std::to_string(t) + ".jsonl"), task));
    if (step_data.back().empty()) {
      throw ConfigError("step " + std::to_string(t) + " dataset is empty");
    }
  }
  const std::vector<Sample> validation = load_samples(cfg.data_dir / "val.jsonl", task);
  if (validation.empty()) throw ConfigError("validation dataset is empty");

  ExperimentResult result;
  ModelState model;
  std::optional<ReplaySet> replay;
  ClassCounts cumulative_counts;
  std::vector<double> all_pq_history;

  for (int t = 1; t <= task.num_steps(); ++t) {
    const auto wall_start = std::chrono::steady_clock::now();
    StepInput in;
    in.task = &task;
    in.step = t;
    in.data = &step_data[static_cast<std::size_t>(t - 1)];
    in.replay = (t > 1 && replay.has_value()) ? &*replay : nullptr;
    in.prev_model = t > 1 ? &model : nullptr;
    StepOutput step_out = run_step(in, cfg);
    model = std::move(step_out.model);

    // Validation over all seen classes.
    MetricAccumulator acc;
    const auto seen = task.id_set_up_to(t);
    for (const Sample& v : validation) {
      const ForwardTrace trace = forward(model, v);
      const std::vector<Segment> preds =
          resolve_overlaps(predict_segments(trace, cfg.mask_threshold), v.h, v.w);
      std::vector<Segment> gt;
      for (const Segment& seg : v.segments) {
        if (seen.count(seg.cls.id)) gt.push_back(seg);
      }
      acc.add_image(preds, gt);
    }
    StepReport report;
    report.step = t;
    report.metrics = continual_aggregate(acc.class_pq(), acc.class_iou(), task, t,
                                         all_pq_history);
    all_pq_history.push_back(report.metrics.all_pq);
    report.loss_curve = std::move(step_out.loss_curve);

    // Replay maintenance for the next step.
    add_counts(cumulative_counts,
               recount_samples(step_data[static_cast<std::size_t>(t - 1)], cfg.ablation.basis));
    if (cfg.ablation.replay != ReplayMode::none && t < task.num_steps()) {
      const ClassDistribution target = make_distribution(cumulative_counts);
      const std::uint64_t seed =
          derive_seed(cfg.seed, {kTagReplay, static_cast<std::uint64_t>(t)});
      const std::vector<Sample>& d_t = step_data[static_cast<std::size_t>(t - 1)];
      if (cfg.ablation.replay == ReplayMode::cpm) {
        if (t == 1) {
          replay = build_initial(d_t, cfg.replay_capacity, target, cfg.ablation.basis, seed);
        } else {
          replay = update_replay(*replay, d_t, cfg.replay_capacity, target,
                                 task.classes_up_to(t - 1).size(),
                                 task.classes_up_to(t).size(), seed);
        }
      } else {
        const BaselineSelection mode = cfg.ablation.replay == ReplayMode::random
                                           ? BaselineSelection::random
                                           : BaselineSelection::equal_per_class;
        std::vector<Sample> pool;
        if (t > 1 && replay.has_value()) pool = replay->samples;
        pool.insert(pool.end(), d_t.begin(), d_t.end());
        ReplaySet next;
        next.capacity = cfg.replay_capacity;
        next.basis = cfg.ablation.basis;
        next.samples = select_baseline(pool, cfg.replay_capacity, mode, seed);
        for (Sample& s : next.samples) s.kind = SampleKind::replay;
        next.counts = recount_samples(next.samples, next.basis);
        replay = std::move(next);
      }
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    result.steps.push_back(std::move(report));
  }
  return result;
}

}  // namespace conseg
