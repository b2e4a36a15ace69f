#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "conseg/types.hpp"

namespace conseg {

// Generator spec (JSON, strict schema):
//   { "seed":1, "things":7, "stuffs":5, "split":[8,4], "images_per_step":80,
//     "val_images":40, "h":16, "w":16, "d":16, "noise_sigma":0.3,
//     "frequency_exponent":1.0, "distractor_prob":0.5 }
// split lists the class count of each step and must sum to things+stuffs.
struct TaskGenSpec {
  std::uint64_t seed = 1;
  std::size_t things = 7;
  std::size_t stuffs = 5;
  std::vector<std::size_t> split = {8, 4};
  std::size_t images_per_step = 80;
  std::size_t val_images = 40;
  std::size_t h = 16, w = 16, dim = 16;
  double noise_sigma = 0.3;
  double frequency_exponent = 1.0;
  // Chance that a training image also renders (unannotated) segments of
  // classes from other steps, creating the background-shift pressure of
  // the overlapped setting.
  double distractor_prob = 0.5;

  void validate() const;
};

TaskGenSpec load_taskgen_spec(const std::filesystem::path& path);

struct GeneratedTask {
  Task task;
  std::vector<std::vector<Sample>> step_data;  // index t-1
  std::vector<Sample> validation;              // annotated for all classes
};

// Deterministic in the seed: class prototypes in feature space, images of
// disjoint jittered rectangles, per-step class frequencies following a
// power law over the step's classes.
GeneratedTask generate(const TaskGenSpec& spec);

// task.json + step_<t>.jsonl + val.jsonl under dir.
void write_dataset(const GeneratedTask& gen, const std::filesystem::path& dir);

}  // namespace conseg
