#include "conseg/dataset.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace conseg {

using nlohmann::json;

std::vector<std::uint32_t> rle_encode(const Mask& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;  // first run counts zeros
  std::uint32_t len = 0;
  for (std::uint8_t cell : mask.cells) {
    const std::uint8_t v = cell ? 1 : 0;
    if (v == current) {
      ++len;
    } else {
      runs.push_back(len);
      current = v;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

Mask rle_decode(const std::vector<std::uint32_t>& runs, std::size_t h, std::size_t w) {
  Mask mask(h, w);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : runs) {
    if (pos + run > mask.cells.size()) throw ConfigError("rle: runs exceed mask size");
    if (value) std::fill_n(mask.cells.begin() + static_cast<std::ptrdiff_t>(pos), run, 1);
    pos += run;
    value = value ? 0 : 1;
  }
  if (pos != mask.cells.size()) throw ConfigError("rle: runs do not cover mask");
  return mask;
}

void save_samples(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset file: " + path.string());
  for (const Sample& s : samples) {
    json segs = json::array();
    for (const Segment& seg : s.segments) {
      segs.push_back({{"class", seg.cls.id}, {"rle", rle_encode(seg.mask)}});
    }
    json line = {{"id", s.id},
                 {"origin_step", s.origin_step},
                 {"h", s.h},
                 {"w", s.w},
                 {"d", s.dim},
                 {"features", s.features},
                 {"segments", segs}};
    out << line.dump() << "\n";
  }
}

std::vector<Sample> load_samples(const std::filesystem::path& path, const Task& task) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file: " + path.string());
  std::vector<Sample> samples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      Sample s;
      s.id = j.at("id").get<std::string>();
      s.origin_step = j.at("origin_step").get<int>();
      s.h = j.at("h").get<std::size_t>();
      s.w = j.at("w").get<std::size_t>();
      s.dim = j.at("d").get<std::size_t>();
      s.features = j.at("features").get<std::vector<double>>();
      for (const json& seg : j.at("segments")) {
        Segment segment;
        const std::uint32_t cid = seg.at("class").get<std::uint32_t>();
        const ClassId* cls = task.find_class(cid);
        if (!cls) {
          throw ConfigError(path.string() + ": segment class " + std::to_string(cid) +
                            " not in task");
        }
        segment.cls = *cls;
        segment.mask = rle_decode(seg.at("rle").get<std::vector<std::uint32_t>>(), s.h, s.w);
        s.segments.push_back(std::move(segment));
      }
      validate_sample(s, task);
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace conseg
