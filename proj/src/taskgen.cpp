#include "conseg/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "conseg/dataset.hpp"
#include "conseg/rng.hpp"
#include "conseg/task.hpp"

namespace conseg {

namespace {

constexpr std::uint64_t kTagKinds = 0x6b696e64;
constexpr std::uint64_t kTagProto = 0x70726f74;
constexpr std::uint64_t kTagTrain = 0x74726169;
constexpr std::uint64_t kTagVal = 0x76616c00;
constexpr std::int32_t kBackground = -1;

struct ImageBuild {
  std::vector<std::int32_t> owner;       // per cell: class id or background
  std::vector<Segment> annotated;
};

// Weighted draw over ranks: weight(r) = (r+1)^-exponent.
std::size_t power_law_draw(Rng& rng, std::size_t n, double exponent) {
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) total += std::pow(static_cast<double>(r + 1), -exponent);
  double x = rng.real() * total;
  for (std::size_t r = 0; r < n; ++r) {
    x -= std::pow(static_cast<double>(r + 1), -exponent);
    if (x <= 0.0) return r;
  }
  return n - 1;
}

// Claims the free cells of a jittered rectangle; fails when fewer than
// min_cells remain unoccupied.
bool place_rectangle(Rng& rng, std::size_t h, std::size_t w, std::vector<std::int32_t>& owner,
                     std::int32_t cls, std::size_t min_cells, Mask& out) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    const std::size_t rh = 2 + rng.index(std::max<std::size_t>(1, h / 3));
    const std::size_t rw = 2 + rng.index(std::max<std::size_t>(1, w / 3));
    const std::size_t r0 = rng.index(h - rh + 1);
    const std::size_t c0 = rng.index(w - rw + 1);
    std::vector<std::size_t> cells;
    for (std::size_t r = r0; r < r0 + rh; ++r) {
      for (std::size_t c = c0; c < c0 + rw; ++c) {
        const std::size_t idx = r * w + c;
        if (owner[idx] == kBackground) cells.push_back(idx);
      }
    }
    if (cells.size() < min_cells) continue;
    out = Mask(h, w);
    for (std::size_t idx : cells) {
      owner[idx] = cls;
      out.cells[idx] = 1;
    }
    return true;
  }
  return false;
}

std::vector<std::uint32_t> draw_distinct_classes(Rng& rng, const std::vector<ClassId>& pool,
                                                 std::size_t want, double exponent) {
  std::vector<std::uint32_t> out;
  for (int tries = 0; tries < 32 && out.size() < want; ++tries) {
    const std::uint32_t cid = pool[power_law_draw(rng, pool.size(), exponent)].id;
    if (std::find(out.begin(), out.end(), cid) == out.end()) out.push_back(cid);
  }
  return out;
}

}  // namespace

void TaskGenSpec::validate() const {
  if (h < 4 || w < 4) throw ConfigError("taskgen: grid must be at least 4x4");
  if (dim == 0) throw ConfigError("taskgen: feature dim must be positive");
  if (split.empty()) throw ConfigError("taskgen: split must list at least one step");
  std::size_t total = 0;
  for (std::size_t n : split) {
    if (n == 0) throw ConfigError("taskgen: every step needs at least one class");
    total += n;
    if (images_per_step < n) {
      throw ConfigError("taskgen: images_per_step must cover every step class at least once");
    }
  }
  if (total != things + stuffs) {
    throw ConfigError("taskgen: split must sum to the class count");
  }
  if (noise_sigma < 0.0) throw ConfigError("taskgen: negative noise");
  if (distractor_prob < 0.0 || distractor_prob > 1.0) {
    throw ConfigError("taskgen: distractor_prob must lie in [0,1]");
  }
  // Three segments of a few cells each must fit with room to spare.
  if (h * w < 9 * 6) throw ConfigError("taskgen: grid too small for the segment budget");
}

TaskGenSpec load_taskgen_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open generator spec: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("generator spec " + path.string() + ": " + e.what());
  }
  static const std::set<std::string> known = {
      "seed",       "things",         "stuffs", "split",       "images_per_step",
      "val_images", "h",              "w",      "d",           "noise_sigma",
      "frequency_exponent", "distractor_prob"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("generator spec: unknown field \"" + it.key() + "\"");
    }
  }
  TaskGenSpec spec;
  try {
    spec.seed = j.value("seed", spec.seed);
    spec.things = j.value("things", spec.things);
    spec.stuffs = j.value("stuffs", spec.stuffs);
    if (j.contains("split")) spec.split = j.at("split").get<std::vector<std::size_t>>();
    spec.images_per_step = j.value("images_per_step", spec.images_per_step);
    spec.val_images = j.value("val_images", spec.val_images);
    spec.h = j.value("h", spec.h);
    spec.w = j.value("w", spec.w);
    spec.dim = j.value("d", spec.dim);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    spec.frequency_exponent = j.value("frequency_exponent", spec.frequency_exponent);
    spec.distractor_prob = j.value("distractor_prob", spec.distractor_prob);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("generator spec " + path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

GeneratedTask generate(const TaskGenSpec& spec) {
  spec.validate();
  const std::size_t n_classes = spec.things + spec.stuffs;

  // Kind labels shuffled across the dense ids so steps mix things and stuff.
  std::vector<ClassKind> kinds(spec.things, ClassKind::thing);
  kinds.insert(kinds.end(), spec.stuffs, ClassKind::stuff);
  Rng kind_rng(derive_seed(spec.seed, {kTagKinds}));
  kind_rng.shuffle(kinds);

  GeneratedTask gen;
  for (std::size_t c = 0; c < n_classes; ++c) {
    gen.task.classes.push_back(ClassId{static_cast<std::uint32_t>(c), kinds[c]});
  }
  std::size_t next_id = 0;
  for (std::size_t t = 0; t < spec.split.size(); ++t) {
    StepSpec step;
    step.step = static_cast<int>(t) + 1;
    for (std::size_t k = 0; k < spec.split[t]; ++k) {
      step.classes.push_back(gen.task.classes[next_id++]);
    }
    gen.task.steps.push_back(std::move(step));
  }
  gen.task.validate();

  // Feature-space prototypes, one per class plus background.
  std::vector<std::vector<double>> protos(n_classes + 1);
  for (std::size_t c = 0; c <= n_classes; ++c) {
    Rng proto_rng(derive_seed(spec.seed, {kTagProto, c}));
    protos[c].resize(spec.dim);
    for (double& v : protos[c]) v = proto_rng.uniform(-1.0, 1.0);
  }
  const std::vector<double>& background_proto = protos[n_classes];

  auto render = [&](const std::vector<std::int32_t>& owner, Rng& rng) {
    std::vector<double> features(spec.h * spec.w * spec.dim);
    for (std::size_t p = 0; p < owner.size(); ++p) {
      const std::vector<double>& proto =
          owner[p] == kBackground ? background_proto : protos[static_cast<std::size_t>(owner[p])];
      for (std::size_t c = 0; c < spec.dim; ++c) {
        features[p * spec.dim + c] = proto[c] + rng.normal(0.0, spec.noise_sigma);
      }
    }
    return features;
  };

  auto build_image = [&](Rng& rng, const std::vector<ClassId>& annot_pool,
                         const std::vector<ClassId>& distractor_pool,
                         const ClassId* forced) -> ImageBuild {
    ImageBuild img;
    img.owner.assign(spec.h * spec.w, kBackground);

    std::vector<std::uint32_t> chosen;
    if (forced) chosen.push_back(forced->id);
    const std::size_t want = 1 + rng.index(3);
    for (std::uint32_t cid :
         draw_distinct_classes(rng, annot_pool, want, spec.frequency_exponent)) {
      if (std::find(chosen.begin(), chosen.end(), cid) == chosen.end() && chosen.size() < 3) {
        chosen.push_back(cid);
      }
    }

    // Hard cap keeps the densest image within the query budget downstream.
    constexpr std::size_t kMaxSegments = 6;
    for (std::uint32_t cid : chosen) {
      const ClassId cls = *std::find_if(annot_pool.begin(), annot_pool.end(),
                                        [cid](const ClassId& c) { return c.id == cid; });
      const std::size_t instances = cls.kind == ClassKind::thing ? 1 + rng.index(3) : 1;
      for (std::size_t k = 0; k < instances && img.annotated.size() < kMaxSegments; ++k) {
        Mask mask;
        if (place_rectangle(rng, spec.h, spec.w, img.owner, static_cast<std::int32_t>(cid), 3,
                            mask)) {
          img.annotated.push_back(Segment{cls, std::move(mask)});
        }
      }
    }
    // Guarantee at least one annotated segment.
    while (img.annotated.empty()) {
      const ClassId cls = annot_pool[rng.index(annot_pool.size())];
      Mask mask;
      if (place_rectangle(rng, spec.h, spec.w, img.owner,
                          static_cast<std::int32_t>(cls.id), 3, mask)) {
        img.annotated.push_back(Segment{cls, std::move(mask)});
      }
    }

    if (!distractor_pool.empty() && rng.real() < spec.distractor_prob) {
      const std::size_t extras = 1 + rng.index(2);
      for (std::size_t k = 0; k < extras; ++k) {
        const ClassId cls = distractor_pool[rng.index(distractor_pool.size())];
        Mask mask;
        place_rectangle(rng, spec.h, spec.w, img.owner, static_cast<std::int32_t>(cls.id), 3,
                        mask);
      }
    }
    return img;
  };

  for (int t = 1; t <= gen.task.num_steps(); ++t) {
    const std::vector<ClassId>& step_classes = gen.task.classes_at(t);
    std::vector<ClassId> others;
    for (const ClassId& c : gen.task.classes) {
      if (!gen.task.id_set_at(t).count(c.id)) others.push_back(c);
    }
    std::vector<Sample> data;
    for (std::size_t i = 0; i < spec.images_per_step; ++i) {
      Rng rng(derive_seed(spec.seed, {kTagTrain, static_cast<std::uint64_t>(t), i}));
      const ClassId* forced = i < step_classes.size() ? &step_classes[i] : nullptr;
      ImageBuild img = build_image(rng, step_classes, others, forced);
      Sample s;
      s.id = "t" + std::to_string(t) + "_" + std::to_string(i);
      s.h = spec.h;
      s.w = spec.w;
      s.dim = spec.dim;
      s.origin_step = t;
      s.segments = std::move(img.annotated);
      s.features = render(img.owner, rng);
      data.push_back(std::move(s));
    }
    gen.step_data.push_back(std::move(data));
  }

  for (std::size_t i = 0; i < spec.val_images; ++i) {
    Rng rng(derive_seed(spec.seed, {kTagVal, i}));
    const ClassId* forced = i < gen.task.classes.size() ? &gen.task.classes[i] : nullptr;
    ImageBuild img = build_image(rng, gen.task.classes, {}, forced);
    Sample s;
    s.id = "val_" + std::to_string(i);
    s.h = spec.h;
    s.w = spec.w;
    s.dim = spec.dim;
    s.origin_step = 1;
    s.segments = std::move(img.annotated);
    s.features = render(img.owner, rng);
    gen.validation.push_back(std::move(s));
  }

  // Contract check: every step class must be annotated somewhere in its step.
  for (int t = 1; t <= gen.task.num_steps(); ++t) {
    for (const ClassId& c : gen.task.classes_at(t)) {
      bool found = false;
      for (const Sample& s : gen.step_data[static_cast<std::size_t>(t - 1)]) {
        for (const Segment& seg : s.segments) {
          if (seg.cls.id == c.id) {
            found = true;
            break;
          }
        }
        if (found) break;
      }
      if (!found) {
        throw ConfigError("taskgen: class " + std::to_string(c.id) +
                          " never appears in step " + std::to_string(t));
      }
    }
  }
  return gen;
}

void write_dataset(const GeneratedTask& gen, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_task(gen.task, dir / "task.json");
  for (std::size_t t = 0; t < gen.step_data.size(); ++t) {
    save_samples(gen.step_data[t], dir / ("step_" + std::to_string(t + 1) + ".jsonl"));
  }
  save_samples(gen.validation, dir / "val.jsonl");
}

}  // namespace conseg
