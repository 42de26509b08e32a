#ifndef TIE_CODEC_HPP
#define TIE_CODEC_HPP

#include "tie/schema.hpp"
#include "tie/tensor.hpp"

#include <json.hpp>

#include <vector>

namespace tie {

/// |x| x |x| x K cube stored as (|x| * |x|) rows of K channels, so cell
/// (i, j, k) lives at row i * |x| + j, column k.
template <typename Scalar>
struct PairCube {
  int length = 0;
  int channels = 0;
  RowMatrix<Scalar> cells;

  PairCube() = default;
  PairCube(int n, int k) : length(n), channels(k), cells(RowMatrix<Scalar>::Zero(n * n, k)) {}
  PairCube(int n, RowMatrix<Scalar> values)
      : length(n), channels(static_cast<int>(values.cols())), cells(std::move(values)) {}

  Scalar operator()(int i, int j, int k) const { return cells(i * length + j, k); }
  Scalar& operator()(int i, int j, int k) { return cells(i * length + j, k); }
};

/// Binary targets. `collisions` counts cells claimed by two different gold
/// structures (the encoding cannot represent both).
struct GoldMatrix : PairCube<Real> {
  using PairCube<Real>::PairCube;
  int collisions = 0;

  Tensor as_tensor() const { return Tensor::constant(cells, {length, length, channels}); }
  int nonzero() const { return static_cast<int>((cells.array() != 0.0).count()); }
};

/// Sigmoid-mapped scores in (0, 1).
using ScoreMatrix = PairCube<Real>;

/// Entities set (start, end, type). A link sets two cells in its channel:
/// (subject.start, object.start) and (subject.end, object.end).
GoldMatrix encode(const Instance& instance, const LabelSpace& labels);

struct ScoredMention {
  Mention mention;
  double score = 0.0;
};

struct ScoredLink {
  Link link;
  double score = 0.0;
};

struct Prediction {
  std::vector<ScoredMention> entities;
  std::vector<ScoredLink> links;

  Annotations annotations() const;
};

/// Threshold decoding.
///
/// Entities are the entity-channel cells (i <= j) at or above the threshold.
/// Links need both the head-head and the tail-tail cell at or above it.
/// RE links pair any two decoded entities; ABSA links pair an Expression
/// subject with an Aspect object; EE links start at a decoded trigger and
/// read the argument span off the trigger's rows of the role channel.
Prediction decode(const ScoreMatrix& scores, const LabelSpace& labels, TaskKind task,
                  double threshold = 0.5);

/// Prediction in the corpus JSONL layout, with "score" on every structure.
nlohmann::json prediction_to_json(const std::vector<std::string>& tokens, const Prediction& prediction);

}  // namespace tie

#endif  // TIE_CODEC_HPP
