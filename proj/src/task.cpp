#include "conseg/task.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace conseg {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const char* where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(std::string(where) + ": unknown field \"" + it.key() + "\"");
    }
  }
}

const json& require_field(const json& obj, const char* key, const char* where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ConfigError(std::string(where) + ": missing field \"" + key + "\"");
  }
  return *it;
}

}  // namespace

Task parse_task(const json& j) {
  if (!j.is_object()) throw ConfigError("task: root must be an object");
  reject_unknown_keys(j, {"classes", "steps"}, "task");

  Task task;
  const json& classes = require_field(j, "classes", "task");
  if (!classes.is_array()) throw ConfigError("task.classes: must be an array");
  for (const json& c : classes) {
    if (!c.is_object()) throw ConfigError("task.classes: entries must be objects");
    reject_unknown_keys(c, {"id", "kind"}, "task.classes");
    ClassId cid;
    cid.id = require_field(c, "id", "task.classes").get<std::uint32_t>();
    const std::string kind = require_field(c, "kind", "task.classes").get<std::string>();
    if (kind == "thing") {
      cid.kind = ClassKind::thing;
    } else if (kind == "stuff") {
      cid.kind = ClassKind::stuff;
    } else {
      throw ConfigError("task.classes: kind must be \"thing\" or \"stuff\"");
    }
    task.classes.push_back(cid);
  }
  std::sort(task.classes.begin(), task.classes.end());

  const json& steps = require_field(j, "steps", "task");
  if (!steps.is_array()) throw ConfigError("task.steps: must be an array");
  for (const json& s : steps) {
    if (!s.is_object()) throw ConfigError("task.steps: entries must be objects");
    reject_unknown_keys(s, {"t", "class_ids"}, "task.steps");
    StepSpec step;
    step.step = require_field(s, "t", "task.steps").get<int>();
    for (const json& id : require_field(s, "class_ids", "task.steps")) {
      const ClassId* c = task.find_class(id.get<std::uint32_t>());
      if (!c) throw ConfigError("task.steps: class id not in class table");
      step.classes.push_back(*c);
    }
    task.steps.push_back(std::move(step));
  }

  task.validate();
  return task;
}

nlohmann::json task_to_json(const Task& task) {
  json classes = json::array();
  for (const ClassId& c : task.classes) {
    classes.push_back({{"id", c.id}, {"kind", c.kind == ClassKind::thing ? "thing" : "stuff"}});
  }
  json steps = json::array();
  for (const StepSpec& s : task.steps) {
    json ids = json::array();
    for (const ClassId& c : s.classes) ids.push_back(c.id);
    steps.push_back({{"t", s.step}, {"class_ids", ids}});
  }
  return {{"classes", classes}, {"steps", steps}};
}

Task load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("task file " + path.string() + ": " + e.what());
  }
  try {
    return parse_task(j);
  } catch (const json::exception& e) {
    throw ConfigError("task file " + path.string() + ": " + e.what());
  }
}

void save_task(const Task& task, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write task file: " + path.string());
  out << task_to_json(task).dump(2) << "\n";
}

}  // namespace conseg
