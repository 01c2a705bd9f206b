#pragma once

#include <vector>

#include "zsceval/common.hpp"

namespace zsceval {

// Expected per-episode event counts of one policy, plus its unit-length copy.
struct BehaviorFeature {
  std::vector<double> theta;
  std::vector<double> normalized;
  int episodes_used = 0;
  // All-zero raw feature: cannot be normalized.
  bool degenerate = false;

  static BehaviorFeature from_raw(std::vector<double> raw, int episodes) {
    BehaviorFeature f;
    f.theta = std::move(raw);
    f.episodes_used = episodes;
    double ss = 0.0;
    for (double v : f.theta) ss += v * v;
    if (!(ss > 0.0)) {
      f.degenerate = true;
      f.normalized.assign(f.theta.size(), 0.0);
      return f;
    }
    const double inv = 1.0 / std::sqrt(ss);
    f.normalized.reserve(f.theta.size());
    for (double v : f.theta) f.normalized.push_back(v * inv);
    return f;
  }
};

}  // namespace zsceval
