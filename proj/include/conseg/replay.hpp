#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "conseg/distribution.hpp"
#include "conseg/types.hpp"

namespace conseg {

// Capacity-bounded store of earlier-step samples plus the running
// per-class counts of its contents (under `basis`).
struct ReplaySet {
  std::vector<Sample> samples;
  std::size_t capacity = 0;
  CountBasis basis = CountBasis::segment;
  ClassCounts counts;  // always equals recount_samples(samples, basis)
};

ClassCounts recount_samples(const std::vector<Sample>& samples, CountBasis basis);

// Seeded Fisher-Yates pass; exposed so tests can reproduce the scan order
// the greedy selection sees.
std::vector<Sample> shuffle_pool(std::vector<Sample> pool, std::uint64_t seed);

// Greedy pass over a pool in the given order: n iterations, each adding
// the first unselected sample that strictly minimizes the L1 discrepancy
// between the would-be selection distribution and the target.
std::vector<Sample> greedy_select_ordered(const std::vector<Sample>& pool, std::size_t n,
                                          const ClassDistribution& target, CountBasis basis);

// shuffle_pool + greedy_select_ordered.
std::vector<Sample> greedy_select(const std::vector<Sample>& pool, std::size_t n,
                                  const ClassDistribution& target, CountBasis basis,
                                  std::uint64_t seed);

ReplaySet build_initial(const std::vector<Sample>& first_step_data, std::size_t capacity,
                        const ClassDistribution& target, CountBasis basis, std::uint64_t seed);

// Nearest integer with .5 rounded up.
std::size_t round_half_up(double x);

// Keep round_half_up(retention·capacity) samples from the previous set
// (greedy against the cumulative target), then fill from the new step's
// data targeting the residual distribution. retention = past classes /
// seen classes.
ReplaySet update_replay(const ReplaySet& previous, const std::vector<Sample>& step_data,
                        std::size_t capacity, const ClassDistribution& cumulative_target,
                        std::size_t n_past_classes, std::size_t n_seen_classes,
                        std::uint64_t seed);

enum class BaselineSelection { random, equal_per_class };

// Cheap selection baselines: a seeded uniform subset, or a round-robin
// over classes picking unused images that contain each class.
std::vector<Sample> select_baseline(const std::vector<Sample>& pool, std::size_t n,
                                    BaselineSelection mode, std::uint64_t seed);

// Manifest: sample ids + origin steps + the count table. Samples are
// resolved against a dataset store on load.
void save_replay_manifest(const ReplaySet& set, const std::filesystem::path& path);
ReplaySet load_replay_manifest(const std::filesystem::path& path,
                               const std::function<Sample(const std::string&)>& resolve);

}  // namespace conseg
