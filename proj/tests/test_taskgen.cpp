#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "conseg/dataset.hpp"
#include "conseg/distribution.hpp"
#include "conseg/taskgen.hpp"

using namespace conseg;

TEST_SUITE_BEGIN("taskgen");

namespace {

TaskGenSpec tiny_spec() {
  TaskGenSpec spec;
  spec.seed = 5;
  spec.things = 4;
  spec.stuffs = 2;
  spec.split = {4, 2};
  spec.images_per_step = 12;
  spec.val_images = 8;
  spec.h = spec.w = 8;
  spec.dim = 4;
  spec.noise_sigma = 0.2;
  return spec;
}

std::string file_contents(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generation is deterministic and files are byte-identical") {
  const TaskGenSpec spec = tiny_spec();
  const auto dir_a = std::filesystem::temp_directory_path() / "conseg_gen_a";
  const auto dir_b = std::filesystem::temp_directory_path() / "conseg_gen_b";
  write_dataset(generate(spec), dir_a);
  write_dataset(generate(spec), dir_b);
  for (const char* name : {"task.json", "step_1.jsonl", "step_2.jsonl", "val.jsonl"}) {
    CHECK(file_contents(dir_a / name) == file_contents(dir_b / name));
  }
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("sigma zero makes segment pixels equal their class prototype") {
  TaskGenSpec spec = tiny_spec();
  spec.noise_sigma = 0.0;
  const GeneratedTask gen = generate(spec);
  const Sample& s = gen.step_data[0][0];
  const Segment& seg = s.segments[0];
  // all cells of one segment share identical feature vectors
  std::vector<double> proto;
  for (std::size_t p = 0; p < s.pixels(); ++p) {
    if (!seg.mask.cells[p]) continue;
    std::vector<double> vec(s.features.begin() + static_cast<std::ptrdiff_t>(p * s.dim),
                            s.features.begin() + static_cast<std::ptrdiff_t>((p + 1) * s.dim));
    if (proto.empty()) {
      proto = vec;
    } else {
      CHECK(vec == proto);
    }
  }
}

TEST_CASE("masks within an image are pairwise disjoint and in bounds") {
  const GeneratedTask gen = generate(tiny_spec());
  auto check_set = [](const std::vector<Sample>& samples) {
    for (const Sample& s : samples) {
      std::vector<int> covered(s.pixels(), 0);
      CHECK(!s.segments.empty());
      for (const Segment& seg : s.segments) {
        CHECK(seg.mask.h == s.h);
        CHECK(seg.mask.w == s.w);
        CHECK(seg.mask.area() >= 1);
        for (std::size_t p = 0; p < s.pixels(); ++p) covered[p] += seg.mask.cells[p];
      }
      for (int c : covered) CHECK(c <= 1);
    }
  };
  for (const auto& step : gen.step_data) check_set(step);
  check_set(gen.validation);
}

TEST_CASE("training annotations stay within the step's classes") {
  const GeneratedTask gen = generate(tiny_spec());
  for (int t = 1; t <= gen.task.num_steps(); ++t) {
    const auto allowed = gen.task.id_set_at(t);
    for (const Sample& s : gen.step_data[static_cast<std::size_t>(t - 1)]) {
      CHECK(s.origin_step == t);
      for (const Segment& seg : s.segments) CHECK(allowed.count(seg.cls.id) == 1);
    }
  }
}

TEST_CASE("every step class appears in at least one of its training images") {
  const GeneratedTask gen = generate(tiny_spec());
  for (int t = 1; t <= gen.task.num_steps(); ++t) {
    for (const ClassId& c : gen.task.classes_at(t)) {
      bool found = false;
      for (const Sample& s : gen.step_data[static_cast<std::size_t>(t - 1)]) {
        for (const Segment& seg : s.segments) found = found || seg.cls.id == c.id;
      }
      CHECK(found);
    }
  }
}

TEST_CASE("positive frequency exponent skews counts toward head classes") {
  TaskGenSpec spec = tiny_spec();
  spec.images_per_step = 120;
  spec.frequency_exponent = 1.5;
  const GeneratedTask gen = generate(spec);
  ClassCounts counts;
  for (const Sample& s : gen.step_data[0]) add_counts(counts, segment_counts(s, CountBasis::image));
  const auto& step1 = gen.task.classes_at(1);
  // head = lowest-ranked class of the step
  CHECK(counts[step1.front().id] > counts[step1.back().id]);
}

TEST_CASE("samples round-trip through the dataset format") {
  const GeneratedTask gen = generate(tiny_spec());
  const auto path = std::filesystem::temp_directory_path() / "conseg_roundtrip.jsonl";
  save_samples(gen.step_data[0], path);
  const std::vector<Sample> back = load_samples(path, gen.task);
  REQUIRE(back.size() == gen.step_data[0].size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == gen.step_data[0][i].id);
    CHECK(back[i].features == gen.step_data[0][i].features);
    REQUIRE(back[i].segments.size() == gen.step_data[0][i].segments.size());
    for (std::size_t g = 0; g < back[i].segments.size(); ++g) {
      CHECK(back[i].segments[g].cls.id == gen.step_data[0][i].segments[g].cls.id);
      CHECK(back[i].segments[g].mask == gen.step_data[0][i].segments[g].mask);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("infeasible specs are rejected") {
  TaskGenSpec spec = tiny_spec();
  spec.split = {4, 3};  // sums to 7, classes are 6
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  TaskGenSpec tiny_grid = tiny_spec();
  tiny_grid.h = tiny_grid.w = 4;  // 16 cells cannot hold the segment budget
  CHECK_THROWS_AS(tiny_grid.validate(), ConfigError);

  TaskGenSpec short_step = tiny_spec();
  short_step.images_per_step = 2;
  CHECK_THROWS_AS(short_step.validate(), ConfigError);
}

TEST_CASE("validation images cover all classes with annotations") {
  const GeneratedTask gen = generate(tiny_spec());
  std::set<std::uint32_t> seen;
  for (const Sample& s : gen.validation) {
    for (const Segment& seg : s.segments) seen.insert(seg.cls.id);
  }
  CHECK(seen.size() == gen.task.classes.size());
}

TEST_SUITE_END();
