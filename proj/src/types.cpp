#include "conseg/types.hpp"

#include <algorithm>

namespace conseg {

const ClassId* Task::find_class(std::uint32_t id) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), ClassId{id, ClassKind::thing});
  if (it == classes.end() || it->id != id) return nullptr;
  return &*it;
}

ClassKind Task::kind_of(std::uint32_t id) const {
  const ClassId* c = find_class(id);
  if (!c) throw ConfigError("unknown class id " + std::to_string(id));
  return c->kind;
}

const std::vector<ClassId>& Task::classes_at(int t) const {
  if (t < 1 || t > num_steps()) throw ConfigError("step index out of range");
  return steps[static_cast<std::size_t>(t - 1)].classes;
}

std::vector<ClassId> Task::classes_up_to(int t) const {
  std::vector<ClassId> out;
  for (int s = 1; s <= t; ++s) {
    const auto& cs = classes_at(s);
    out.insert(out.end(), cs.begin(), cs.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::set<std::uint32_t> Task::id_set_at(int t) const {
  std::set<std::uint32_t> out;
  for (const ClassId& c : classes_at(t)) out.insert(c.id);
  return out;
}

std::set<std::uint32_t> Task::id_set_up_to(int t) const {
  std::set<std::uint32_t> out;
  for (int s = 1; s <= t; ++s) {
    for (const ClassId& c : classes_at(s)) out.insert(c.id);
  }
  return out;
}

void Task::validate() const {
  std::set<std::uint32_t> ids;
  for (const ClassId& c : classes) {
    if (!ids.insert(c.id).second) {
      throw ConfigError("duplicate class id " + std::to_string(c.id));
    }
  }
  if (!std::is_sorted(classes.begin(), classes.end())) {
    throw ConfigError("class table must be sorted by id");
  }
  std::set<std::uint32_t> assigned;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].step != static_cast<int>(i) + 1) {
      throw ConfigError("step indices must form 1..T with no gaps");
    }
    if (steps[i].classes.empty()) throw ConfigError("step with empty class set");
    for (const ClassId& c : steps[i].classes) {
      if (!ids.count(c.id)) {
        throw ConfigError("step references unknown class id " + std::to_string(c.id));
      }
      if (!assigned.insert(c.id).second) {
        throw ConfigError("class sets across steps must be disjoint (id " +
                          std::to_string(c.id) + ")");
      }
    }
  }
}

void validate_sample(const Sample& sample, const Task& task) {
  if (sample.origin_step < 1 || sample.origin_step > task.num_steps()) {
    throw ConfigError("sample " + sample.id + ": origin_step out of range");
  }
  if (sample.features.size() != sample.h * sample.w * sample.dim) {
    throw ConfigError("sample " + sample.id + ": feature buffer size mismatch");
  }
  const auto step_ids = task.id_set_at(sample.origin_step);
  for (const Segment& seg : sample.segments) {
    if (seg.mask.h != sample.h || seg.mask.w != sample.w) {
      throw ConfigError("sample " + sample.id + ": segment mask dimensions mismatch");
    }
    if (seg.mask.area() == 0) {
      throw ConfigError("sample " + sample.id + ": empty segment mask");
    }
    if (!task.find_class(seg.cls.id)) {
      throw ConfigError("sample " + sample.id + ": unknown segment class");
    }
    if (sample.kind == SampleKind::replay && !step_ids.count(seg.cls.id)) {
      throw ConfigError("sample " + sample.id +
                        ": replay annotation outside its origin step's classes");
    }
  }
}

}  // namespace conseg
