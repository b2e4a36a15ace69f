#include "conseg/distribution.hpp"

#include <cmath>
#include <set>

namespace conseg {

CountBasis parse_count_basis(const std::string& s) {
  if (s == "segment") return CountBasis::segment;
  if (s == "image") return CountBasis::image;
  if (s == "pixel") return CountBasis::pixel;
  throw ConfigError("unknown count basis: " + s);
}

std::string to_string(CountBasis basis) {
  switch (basis) {
    case CountBasis::segment: return "segment";
    case CountBasis::image: return "image";
    case CountBasis::pixel: return "pixel";
  }
  return "segment";
}

ClassCounts segment_counts(const Sample& sample, CountBasis basis) {
  ClassCounts counts;
  switch (basis) {
    case CountBasis::segment: {
      std::set<std::uint32_t> stuff_seen;
      for (const Segment& seg : sample.segments) {
        if (seg.cls.kind == ClassKind::stuff) {
          // Stuff has no instances: the whole category counts once per image.
          if (stuff_seen.insert(seg.cls.id).second) counts[seg.cls.id] += 1;
        } else {
          counts[seg.cls.id] += 1;
        }
      }
      break;
    }
    case CountBasis::image: {
      std::set<std::uint32_t> seen;
      for (const Segment& seg : sample.segments) {
        if (seen.insert(seg.cls.id).second) counts[seg.cls.id] = 1;
      }
      break;
    }
    case CountBasis::pixel: {
      for (const Segment& seg : sample.segments) {
        counts[seg.cls.id] += static_cast<std::int64_t>(seg.mask.area());
      }
      break;
    }
  }
  return counts;
}

void add_counts(ClassCounts& into, const ClassCounts& from) {
  for (const auto& [id, n] : from) into[id] += n;
}

ClassDistribution make_distribution(const ClassCounts& counts) {
  std::int64_t total = 0;
  for (const auto& [id, n] : counts) {
    if (n < 0) throw ConfigError("negative class count");
    total += n;
  }
  ClassDistribution dist;
  if (total == 0) return dist;
  for (const auto& [id, n] : counts) {
    if (n > 0) dist.weights[id] = static_cast<double>(n) / static_cast<double>(total);
  }
  return dist;
}

double l1_discrepancy(const ClassDistribution& a, const ClassDistribution& b) {
  double sum = 0.0;
  auto ia = a.weights.begin();
  auto ib = b.weights.begin();
  while (ia != a.weights.end() || ib != b.weights.end()) {
    if (ib == b.weights.end() || (ia != a.weights.end() && ia->first < ib->first)) {
      sum += std::fabs(ia->second);
      ++ia;
    } else if (ia == a.weights.end() || ib->first < ia->first) {
      sum += std::fabs(ib->second);
      ++ib;
    } else {
      sum += std::fabs(ia->second - ib->second);
      ++ia;
      ++ib;
    }
  }
  return sum;
}

}  // namespace conseg
