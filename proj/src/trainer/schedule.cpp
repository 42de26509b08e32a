#include "tie/schedule.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace tie {

BatchPlan plan_epoch(const std::vector<DatasetSize>& datasets, int batch_size, Rng& rng, PlanMode mode,
                     const std::string& previous_id) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (mode == PlanMode::pretrain && datasets.size() < 2)
    throw std::invalid_argument("pretraining needs at least 2 source datasets, got " +
                                std::to_string(datasets.size()));
  if (mode == PlanMode::finetune && datasets.size() != 1)
    throw std::invalid_argument("finetuning takes exactly 1 dataset, got " + std::to_string(datasets.size()));

  std::vector<std::vector<Batch>> queues;
  for (const auto& ds : datasets) {
    if (ds.size < 0) throw std::invalid_argument("dataset " + ds.id + " has negative size");
    std::vector<int> order(static_cast<std::size_t>(ds.size));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<Batch> q;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
      const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
      q.push_back({ds.id, std::vector<int>(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end))});
    }
    std::reverse(q.begin(), q.end());  // pop from the back in shuffled order
    queues.push_back(std::move(q));
  }

  BatchPlan plan;
  plan.batch_size = batch_size;
  std::size_t remaining = 0;
  for (const auto& q : queues) remaining += q.size();
  const std::size_t none = queues.size();
  std::size_t previous = none;
  for (std::size_t i = 0; i < datasets.size(); ++i)
    if (mode == PlanMode::pretrain && datasets[i].id == previous_id) previous = i;
  while (remaining > 0) {
    std::size_t pick = none;
    std::size_t largest = 0;
    for (std::size_t i = 1; i < queues.size(); ++i)
      if (queues[i].size() > queues[largest].size()) largest = i;
    if (2 * queues[largest].size() > remaining && largest != previous) {
      pick = largest;
    } else {
      std::uint64_t weight = 0;
      for (std::size_t i = 0; i < queues.size(); ++i)
        if (i != previous) weight += queues[i].size();
      if (weight == 0) {
        pick = previous;
        ++plan.repeats;
      } else {
        auto draw = rng.below(weight);
        for (std::size_t i = 0; i < queues.size(); ++i) {
          if (i == previous) continue;
          if (draw < queues[i].size()) {
            pick = i;
            break;
          }
          draw -= queues[i].size();
        }
      }
    }
    if (mode == PlanMode::finetune) pick = 0;
    plan.batches.push_back(std::move(queues[pick].back()));
    queues[pick].pop_back();
    --remaining;
    previous = mode == PlanMode::finetune ? none : pick;
  }
  return plan;
}

}  // namespace tie
