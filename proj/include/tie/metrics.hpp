#ifndef TIE_METRICS_HPP
#define TIE_METRICS_HPP

#include "tie/schema.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tie {

/// Exact-match counts for one metric. P is 0 without predictions, R is 0
/// without gold, F1 is 0 when P + R is 0.
struct F1Counts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }

  F1Counts& operator+=(const F1Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const F1Counts&) const = default;
};

// All scorers take aligned prediction/gold lists (one entry per sentence),
// deduplicate within each sentence, and pool counts over sentences.

/// Entity correct iff type and offsets match.
F1Counts ent_f1(std::span<const Annotations> preds, std::span<const Annotations> golds);
/// Relation correct iff type plus typed offsets of both ends match.
F1Counts rel_f1(std::span<const Annotations> preds, std::span<const Annotations> golds);
/// Trigger correct iff event type and offsets match.
F1Counts trig_f1(std::span<const Annotations> preds, std::span<const Annotations> golds);
/// Argument correct iff offsets, role and the governing event type match.
/// With `require_trigger_offsets` the trigger offsets must match as well.
F1Counts arg_f1(std::span<const Annotations> preds, std::span<const Annotations> golds,
                bool require_trigger_offsets = false);
/// Triplet correct iff expression offsets, aspect offsets and polarity match.
F1Counts senti_triplet_f1(std::span<const Annotations> preds, std::span<const Annotations> golds);

/// Metric names reported for each task shape.
std::vector<std::string> metrics_for(TaskKind task);
/// Metric driving model selection: ent (NER), rel (RE), mean of trig and
/// arg (EE), triplet (ABSA).
double headline_f1(TaskKind task, const std::map<std::string, F1Counts>& metrics);

struct ScoreReport {
  std::map<std::string, std::map<std::string, F1Counts>> per_dataset;
  std::map<std::string, F1Counts> aggregate;

  void add(const std::string& dataset, TaskKind task, std::span<const Annotations> preds,
           std::span<const Annotations> golds);
  nlohmann::json to_json() const;
  /// Aligned plain-text table.
  std::string table() const;
};

}  // namespace tie

#endif  // TIE_METRICS_HPP
