#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "conseg/types.hpp"

namespace conseg {

// Run-length encoding of a row-major binary mask: alternating run lengths
// starting with a run of zeros (possibly length 0). Runs sum to h*w.
std::vector<std::uint32_t> rle_encode(const Mask& mask);
Mask rle_decode(const std::vector<std::uint32_t>& runs, std::size_t h, std::size_t w);

// Dataset files are JSON lines, one sample per line:
//   {"id":..., "origin_step":..., "h":..., "w":..., "d":...,
//    "features":[...], "segments":[{"class":id, "rle":[...]}]}
// Class kinds are resolved against the task's class table on load.
void save_samples(const std::vector<Sample>& samples, const std::filesystem::path& path);
std::vector<Sample> load_samples(const std::filesystem::path& path, const Task& task);

}  // namespace conseg
