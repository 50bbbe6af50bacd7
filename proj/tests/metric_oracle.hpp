#pragma once

// Literal re-derivation of CMC and mAP straight from their definitions:
// CMC[r] scans the top r+1 positions per query, AP recomputes precision at
// every correct position from scratch. Independent of the incremental
// bookkeeping in pmx::cmc_map.

#include "pmx/eval.hpp"

namespace pmx::test {

inline TrialResult brute_force_cmc_map(const std::vector<std::vector<int>>& rankings,
                                       const std::vector<int>& qlabels,
                                       const std::vector<int>& glabels) {
  const size_t depth = glabels.size();
  std::vector<size_t> usable;
  for (size_t q = 0; q < rankings.size(); ++q) {
    bool any = false;
    for (int idx : rankings[q]) any |= glabels[static_cast<size_t>(idx)] == qlabels[q];
    if (any) usable.push_back(q);
  }

  TrialResult out;
  out.skipped_queries = static_cast<int>(rankings.size() - usable.size());
  out.cmc.assign(depth, 0);
  if (usable.empty()) return out;

  for (size_t r = 0; r < depth; ++r) {
    int hits = 0;
    for (size_t q : usable) {
      bool found = false;
      for (size_t pos = 0; pos <= r; ++pos)
        found |= glabels[static_cast<size_t>(rankings[q][pos])] == qlabels[q];
      hits += found;
    }
    out.cmc[r] = static_cast<real>(hits) / static_cast<real>(usable.size());
  }

  real map = 0;
  for (size_t q : usable) {
    std::vector<size_t> correct_positions;
    for (size_t pos = 0; pos < depth; ++pos)
      if (glabels[static_cast<size_t>(rankings[q][pos])] == qlabels[q])
        correct_positions.push_back(pos + 1);
    real ap = 0;
    for (size_t k : correct_positions) {
      int correct_in_topk = 0;
      for (size_t pos = 1; pos <= k; ++pos)
        correct_in_topk += glabels[static_cast<size_t>(rankings[q][pos - 1])] == qlabels[q];
      ap += static_cast<real>(correct_in_topk) / static_cast<real>(k);
    }
    map += ap / correct_positions.size();
  }
  out.map = map / usable.size();
  return out;
}

}  // namespace pmx::test
