#ifndef TIE_SCHEDULE_HPP
#define TIE_SCHEDULE_HPP

#include "tie/rng.hpp"

#include <string>
#include <vector>

namespace tie {

struct Batch {
  std::string dataset;
  std::vector<int> indices;
};

struct BatchPlan {
  int batch_size = 0;
  std::vector<Batch> batches;
  /// Adjacent same-dataset pairs the interleaving could not avoid.
  int repeats = 0;
};

struct DatasetSize {
  std::string id;
  int size = 0;
};

enum class PlanMode { pretrain, finetune };

/// One epoch of single-dataset batches.
///
/// Each dataset's indices are shuffled and chunked into batches of
/// `batch_size` (the last one may be short). In pretraining the batches are
/// interleaved so that adjacent batches come from different datasets: a
/// dataset holding more than half of the remaining batches is taken whenever
/// allowed, otherwise a dataset other than the previous one is drawn with
/// weight equal to its remaining batch count. When only the previous dataset
/// is left its batches follow each other and each repeat is counted.
/// `previous` names the dataset of the batch before this epoch, if any.
/// Finetuning takes exactly one dataset in shuffled order.
BatchPlan plan_epoch(const std::vector<DatasetSize>& datasets, int batch_size, Rng& rng, PlanMode mode,
                     const std::string& previous = {});

}  // namespace tie

#endif  // TIE_SCHEDULE_HPP
