#pragma once

#include <filesystem>
#include <string>

#include "conseg/trainer.hpp"

namespace conseg {

// metrics.json carries only deterministic values (wall times go to the run
// log) so identical config+seed reruns are byte-identical.
void write_metrics_json(const ExperimentResult& result, const std::filesystem::path& path);

// step,class_id,pq,miou
void write_per_class_csv(const ExperimentResult& result, const std::filesystem::path& path);

// step,base,inc,all (inc empty at step 1)
void write_summary_csv(const ExperimentResult& result, const std::filesystem::path& path);

// Per-step wall-clock seconds; excluded from the determinism contract.
void write_run_log(const ExperimentResult& result, const std::filesystem::path& path);

// FNV-1a 64 over the canonical config serialization.
std::string config_hash(const ExperimentConfig& cfg);

// Written before training starts.
void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                    const std::filesystem::path& path);

}  // namespace conseg
