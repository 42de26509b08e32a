#ifndef TIE_TESTS_SCHEDULE_ORACLE_HPP
#define TIE_TESTS_SCHEDULE_ORACLE_HPP

#include "tie/schedule.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace tie::testing {

/// Fewest adjacent same-dataset pairs any ordering of the batches can have,
/// counting the pair formed with the batch before the epoch.
inline int minimum_repeats(const std::vector<DatasetSize>& datasets, int batch_size, const std::string& previous) {
  int total = 0, largest = 0;
  bool previous_is_largest = false;
  for (const auto& d : datasets) total += (d.size + batch_size - 1) / batch_size;
  for (const auto& d : datasets) largest = std::max(largest, (d.size + batch_size - 1) / batch_size);
  for (const auto& d : datasets)
    if (d.id == previous && (d.size + batch_size - 1) / batch_size == largest) previous_is_largest = true;
  return std::max(0, largest - (total - largest) - (previous_is_largest ? 0 : 1));
}

/// Violated plan properties, empty when the plan is sound.
inline std::vector<std::string> plan_violations(const std::vector<DatasetSize>& datasets, int batch_size,
                                                const std::string& previous, const BatchPlan& plan) {
  std::vector<std::string> out;
  std::map<std::string, std::vector<int>> seen;
  std::map<std::string, int> sizes;
  for (const auto& d : datasets) sizes[d.id] = d.size;
  for (const auto& b : plan.batches) {
    if (b.indices.empty() || static_cast<int>(b.indices.size()) > batch_size) out.push_back("batch size");
    if (!sizes.count(b.dataset)) out.push_back("unknown dataset " + b.dataset);
    for (int i : b.indices)
      if (i < 0 || i >= sizes[b.dataset]) out.push_back("index outside " + b.dataset);
    auto& v = seen[b.dataset];
    v.insert(v.end(), b.indices.begin(), b.indices.end());
  }
  for (const auto& d : datasets) {
    auto v = seen[d.id];
    std::sort(v.begin(), v.end());
    std::vector<int> all(static_cast<std::size_t>(d.size));
    std::iota(all.begin(), all.end(), 0);
    if (v != all) out.push_back("coverage of " + d.id);
  }
  int repeats = 0;
  std::string last = previous;
  bool tail = false;
  std::string tail_dataset;
  for (const auto& b : plan.batches) {
    if (tail && b.dataset != tail_dataset) out.push_back("repeat before the tail");
    if (b.dataset == last) {
      ++repeats;
      tail = true;
      tail_dataset = b.dataset;
    }
    last = b.dataset;
  }
  if (repeats != plan.repeats) out.push_back("repeat count not logged");
  if (repeats != minimum_repeats(datasets, batch_size, previous)) out.push_back("more repeats than necessary");
  return out;
}

}  // namespace tie::testing

#endif
