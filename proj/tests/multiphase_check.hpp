#pragma once

#include <optional>
#include <set>
#include <vector>

#include "enap/control.hpp"

namespace mpcheck {

// Goal named by a multiphase symbol's centroid cue, if any. Observations are
// [x, y, cue0, cue1].
inline std::optional<int> goal_of(const enap::Codebook& cb, enap::SymbolId c) {
  const auto& f = cb.centroids.at(c);
  if (f.size() < 4) return std::nullopt;
  if (f[2] > 0.5 && f[2] > f[3]) return 0;
  if (f[3] > 0.5 && f[3] > f[2]) return 1;
  return std::nullopt;
}

// States whose outgoing edges split into both goals: inputs cueing goal 0 and
// goal 1 leading to different destinations.
inline std::vector<enap::StateId> goal_branch_states(const enap::Pmm& pmm, const enap::Codebook& cb) {
  std::vector<enap::StateId> out;
  for (const auto& s : pmm.states) {
    std::set<enap::StateId> dst[2];
    for (const auto& e : pmm.edges)
      if (e.src == s.id)
        if (auto g = goal_of(cb, e.input)) dst[*g].insert(e.dst);
    if (dst[0].empty() || dst[1].empty()) continue;
    bool distinct = false;
    for (auto a : dst[0])
      for (auto b : dst[1]) distinct |= a != b;
    if (distinct) out.push_back(s.id);
  }
  return out;
}

}  // namespace mpcheck
