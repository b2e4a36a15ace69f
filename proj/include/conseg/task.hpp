#pragma once

#include <filesystem>
#include <nlohmann/json_fwd.hpp>

#include "conseg/types.hpp"

namespace conseg {

// Task file schema (strict, unknown fields rejected):
//   { "classes": [{"id": 0, "kind": "thing"|"stuff"}, ...],
//     "steps":   [{"t": 1, "class_ids": [0, 1, ...]}, ...] }
Task parse_task(const nlohmann::json& j);
nlohmann::json task_to_json(const Task& task);

Task load_task(const std::filesystem::path& path);
void save_task(const Task& task, const std::filesystem::path& path);

}  // namespace conseg
