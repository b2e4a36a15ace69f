#include "conseg/replay.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "conseg/rng.hpp"

namespace conseg {

ClassCounts recount_samples(const std::vector<Sample>& samples, CountBasis basis) {
  ClassCounts counts;
  for (const Sample& s : samples) add_counts(counts, segment_counts(s, basis));
  return counts;
}

std::vector<Sample> shuffle_pool(std::vector<Sample> pool, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(pool);
  return pool;
}

std::vector<Sample> greedy_select_ordered(const std::vector<Sample>& pool, std::size_t n,
                                          const ClassDistribution& target, CountBasis basis) {
  if (n > pool.size()) throw ConfigError("greedy_select: pool smaller than request");

  std::vector<ClassCounts> per_sample;
  per_sample.reserve(pool.size());
  for (const Sample& s : pool) per_sample.push_back(segment_counts(s, basis));

  std::vector<char> taken(pool.size(), 0);
  std::vector<Sample> selected;
  selected.reserve(n);
  ClassCounts cumulative;
  for (std::size_t round = 0; round < n; ++round) {
    double best_d = std::numeric_limits<double>::infinity();
    std::size_t best_k = pool.size();
    for (std::size_t k = 0; k < pool.size(); ++k) {
      if (taken[k]) continue;
      ClassCounts tentative = cumulative;
      add_counts(tentative, per_sample[k]);
      const double d = l1_discrepancy(target, make_distribution(tentative));
      if (d < best_d) {  // strict: the first minimizer in scan order wins
        best_d = d;
        best_k = k;
      }
    }
    taken[best_k] = 1;
    add_counts(cumulative, per_sample[best_k]);
    selected.push_back(pool[best_k]);
  }
  return selected;
}

std::vector<Sample> greedy_select(const std::vector<Sample>& pool, std::size_t n,
                                  const ClassDistribution& target, CountBasis basis,
                                  std::uint64_t seed) {
  return greedy_select_ordered(shuffle_pool(pool, seed), n, target, basis);
}

ReplaySet build_initial(const std::vector<Sample>& first_step_data, std::size_t capacity,
                        const ClassDistribution& target, CountBasis basis, std::uint64_t seed) {
  ReplaySet set;
  set.capacity = capacity;
  set.basis = basis;
  set.samples = greedy_select(first_step_data, capacity, target, basis, seed);
  for (Sample& s : set.samples) s.kind = SampleKind::replay;
  set.counts = recount_samples(set.samples, basis);
  return set;
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

ReplaySet update_replay(const ReplaySet& previous, const std::vector<Sample>& step_data,
                        std::size_t capacity, const ClassDistribution& cumulative_target,
                        std::size_t n_past_classes, std::size_t n_seen_classes,
                        std::uint64_t seed) {
  if (previous.samples.size() + step_data.size() < capacity) {
    throw ConfigError("update_replay: pools too small for the requested capacity");
  }
  const double retention =
      static_cast<double>(n_past_classes) / static_cast<double>(n_seen_classes);
  std::size_t n_keep = round_half_up(retention * static_cast<double>(capacity));
  if (n_keep > previous.samples.size()) {
    std::cerr << "[warn] update_replay: retention asks for " << n_keep << " of "
              << previous.samples.size() << " previous samples; keeping all\n";
    n_keep = previous.samples.size();
  }
  if (capacity - n_keep > step_data.size()) {
    // Pool precondition guarantees the previous set can absorb the deficit.
    n_keep = capacity - step_data.size();
  }

  ReplaySet next;
  next.capacity = capacity;
  next.basis = previous.basis;
  next.samples = greedy_select(previous.samples, n_keep, cumulative_target, previous.basis,
                               derive_seed(seed, {0x6b65, 1}));

  // Residual demand after the kept samples; the subtraction can go
  // negative, so clamp then renormalize. An all-zero residual falls back
  // to the cumulative target.
  const ClassDistribution kept_dist =
      make_distribution(recount_samples(next.samples, previous.basis));
  ClassDistribution residual;
  double total = 0.0;
  for (const auto& [id, wt] : cumulative_target.weights) {
    const double r = wt - kept_dist.at(id);
    if (r > 0.0) {
      residual.weights[id] = r;
      total += r;
    }
  }
  if (total > 0.0) {
    for (auto& [id, wt] : residual.weights) wt /= total;
  } else {
    residual = cumulative_target;
  }

  std::vector<Sample> added = greedy_select(step_data, capacity - n_keep, residual,
                                            previous.basis, derive_seed(seed, {0x6e65, 2}));
  for (Sample& s : added) s.kind = SampleKind::replay;
  next.samples.insert(next.samples.end(), std::make_move_iterator(added.begin()),
                      std::make_move_iterator(added.end()));
  next.counts = recount_samples(next.samples, next.basis);
  return next;
}

std::vector<Sample> select_baseline(const std::vector<Sample>& pool, std::size_t n,
                                    BaselineSelection mode, std::uint64_t seed) {
  if (n > pool.size()) throw ConfigError("select_baseline: pool smaller than request");
  std::vector<Sample> shuffled = shuffle_pool(pool, seed);
  if (mode == BaselineSelection::random) {
    shuffled.resize(n);
    return shuffled;
  }

  // Round-robin over classes (ascending id), picking the next unused image
  // containing each class; exhausted classes are skipped and any shortfall
  // is filled from the remaining shuffled pool.
  std::set<std::uint32_t> class_ids;
  for (const Sample& s : shuffled) {
    for (const Segment& seg : s.segments) class_ids.insert(seg.cls.id);
  }
  std::vector<char> used(shuffled.size(), 0);
  std::vector<Sample> selected;
  selected.reserve(n);
  bool progress = true;
  while (selected.size() < n && progress) {
    progress = false;
    for (std::uint32_t cid : class_ids) {
      if (selected.size() >= n) break;
      for (std::size_t k = 0; k < shuffled.size(); ++k) {
        if (used[k]) continue;
        bool has = false;
        for (const Segment& seg : shuffled[k].segments) {
          if (seg.cls.id == cid) {
            has = true;
            break;
          }
        }
        if (has) {
          used[k] = 1;
          selected.push_back(shuffled[k]);
          progress = true;
          break;
        }
      }
    }
  }
  for (std::size_t k = 0; k < shuffled.size() && selected.size() < n; ++k) {
    if (!used[k]) {
      used[k] = 1;
      selected.push_back(shuffled[k]);
    }
  }
  return selected;
}

void save_replay_manifest(const ReplaySet& set, const std::filesystem::path& path) {
  nlohmann::json entries = nlohmann::json::array();
  for (const Sample& s : set.samples) {
    entries.push_back({{"id", s.id}, {"origin_step", s.origin_step}});
  }
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [id, n] : set.counts) counts[std::to_string(id)] = n;
  nlohmann::json j = {{"capacity", set.capacity},
                      {"basis", to_string(set.basis)},
                      {"samples", entries},
                      {"class_counts", counts}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write replay manifest: " + path.string());
  out << j.dump(2) << "\n";
}

ReplaySet load_replay_manifest(const std::filesystem::path& path,
                               const std::function<Sample(const std::string&)>& resolve) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open replay manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("replay manifest " + path.string() + ": " + e.what());
  }
  ReplaySet set;
  try {
    set.capacity = j.at("capacity").get<std::size_t>();
    set.basis = parse_count_basis(j.at("basis").get<std::string>());
    for (const auto& entry : j.at("samples")) {
      Sample s = resolve(entry.at("id").get<std::string>());
      s.origin_step = entry.at("origin_step").get<int>();
      s.kind = SampleKind::replay;
      set.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("replay manifest " + path.string() + ": " + e.what());
  }
  set.counts = recount_samples(set.samples, set.basis);
  return set;
}

}  // namespace conseg
