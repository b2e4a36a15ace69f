#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace conseg {

// Bad input files, inconsistent configs, schema violations. Maps to CLI
// exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values surfacing during training/evaluation. Maps to CLI
// exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ClassKind { thing, stuff };

// Class ids are unique within a task, so ordering and equality use the id
// alone; the kind rides along for convenience.
struct ClassId {
  std::uint32_t id = 0;
  ClassKind kind = ClassKind::thing;

  friend bool operator==(const ClassId& a, const ClassId& b) { return a.id == b.id; }
  friend bool operator<(const ClassId& a, const ClassId& b) { return a.id < b.id; }
};

// Binary mask over a row-major H×W grid.
struct Mask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> cells;  // 0/1, size h*w

  Mask() = default;
  Mask(std::size_t height, std::size_t width) : h(height), w(width), cells(height * width, 0) {}

  bool at(std::size_t r, std::size_t c) const { return cells[r * w + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { cells[r * w + c] = v ? 1 : 0; }

  std::size_t area() const {
    std::size_t n = 0;
    for (std::uint8_t v : cells) n += v;
    return n;
  }

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.h == b.h && a.w == b.w && a.cells == b.cells;
  }
};

struct Segment {
  ClassId cls;
  Mask mask;
};

enum class SampleKind { regular, replay };

// One image: a synthetic feature grid plus its annotated segments.
struct Sample {
  std::string id;
  std::size_t h = 0, w = 0, dim = 0;
  std::vector<double> features;  // row-major h*w*dim
  std::vector<Segment> segments;
  int origin_step = 1;
  SampleKind kind = SampleKind::regular;

  std::size_t pixels() const { return h * w; }
};

struct StepSpec {
  int step = 1;  // t, 1-based
  std::vector<ClassId> classes;
};

// Class table plus the step schedule; loaded from the task file.
struct Task {
  std::vector<ClassId> classes;  // sorted by id
  std::vector<StepSpec> steps;   // t = 1..T, contiguous

  int num_steps() const { return static_cast<int>(steps.size()); }

  const ClassId* find_class(std::uint32_t id) const;
  ClassKind kind_of(std::uint32_t id) const;  // throws if unknown

  const std::vector<ClassId>& classes_at(int t) const;  // C^t
  std::vector<ClassId> classes_up_to(int t) const;      // C^{1:t}
  std::set<std::uint32_t> id_set_at(int t) const;
  std::set<std::uint32_t> id_set_up_to(int t) const;

  // Enforces: unique ids, disjoint step class sets, steps numbered 1..T
  // with no gaps, every step class present in the class table.
  void validate() const;
};

// Throws ConfigError when a sample violates its invariants (mask sizes,
// empty masks, replay annotations outside the origin step's classes).
void validate_sample(const Sample& sample, const Task& task);

}  // namespace conseg
