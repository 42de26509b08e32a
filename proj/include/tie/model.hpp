#ifndef TIE_MODEL_HPP
#define TIE_MODEL_HPP

#include "tie/ops.hpp"
#include "tie/rng.hpp"
#include "tie/tensor.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tie {

struct ModelConfig {
  int d = 32;
  int layers_enc = 1;
  int layers_dec = 1;
  int heads = 2;
  int d_ff = 64;
  int max_len = 128;
  int max_instr_len = 64;
  double dropout = 0.0;
  int vocab_size = 0;
  /// Feed encoder states plus label-aware states to the scoring MLPs; false feeds the label-aware states alone, which
  /// limits each token to a mixture of the K slot vectors.
  bool label_residual = true;
  /// Causal instruction self-attention; false gives the bidirectional variant.
  bool causal_decoder = true;

  /// Throws std::invalid_argument naming the offending field under `path`.
  void validate(const std::string& path = "model") const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j, const std::string& path = "model");
  bool operator==(const ModelConfig&) const = default;
};

/// Named trainable tensors, each assigned to exactly one group. Groups are
/// the unit the gradient-sign gate freezes.
class Parameters {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor tensor;
  };

  void add(std::string name, std::string group, Tensor tensor);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  /// Group names in first-appearance order.
  std::vector<std::string> groups() const;
  std::vector<std::size_t> members(const std::string& group) const;
  Index scalar_count() const;

  void zero_grad();
  /// Deep copy with fresh leaves.
  Parameters clone() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Intermediate representations of one forward pass.
struct ForwardState {
  Tensor encoded;     // |x| x d
  Tensor decoded;     // |u| x d
  Tensor slots;    // slots x d
  Tensor label_aware;       // |x| x d
  Tensor head_repr;    // |x| x d
  Tensor tail_repr;    // |x| x d
  Tensor pair;      // [|x|, |x|, K_head] biaffine output
  Tensor logits;    // [|x|, |x|, K] after the score layer and channel selection
};

struct ModelInput {
  std::vector<int> tokens;
  std::vector<int> instruction;
  /// Instruction position of each label slot.
  std::vector<int> slot_index;
  /// Head channel feeding each output channel; empty selects every channel.
  std::vector<Index> channels;
};

struct RunMode {
  bool train = false;
  Rng* rng = nullptr;  // dropout stream, required when training with dropout
};

/// Row gather of the slot positions; throws on an index outside the decoder states.
Tensor gather_slots(const Tensor& decoded, const std::vector<int>& slot_index);

/// softmax_rows((encoded token_proj)(slots slot_proj)^T) (slots slot_proj).
Tensor label_attention(const Tensor& encoded, const Tensor& slots, const Tensor& token_proj, const Tensor& slot_proj);

/// Instructed pair scorer: sentence encoder, instruction decoder with
/// cross-attention, slot gathering, label attention and a biaffine head
/// whose output channels are named by `head_channels`.
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::vector<std::string> head_channels, std::uint64_t seed);
  Model(ModelConfig config, std::vector<std::string> head_channels, Parameters params);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& head_channels() const { return head_channels_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

  Tensor encode_sentence(const std::vector<int>& tokens, const RunMode& mode = {}) const;
  Tensor decode_instruction(const Tensor& encoded, const std::vector<int>& instruction,
                            const RunMode& mode = {}) const;
  /// Scoring MLPs, biaffine product and the per-cell score layer over all
  /// head channels. Returns {pair, logits} with logits [|x|, |x|, K_head].
  std::pair<Tensor, Tensor> biaffine_score(const Tensor& label_aware, ForwardState* state = nullptr) const;

  ForwardState forward(const ModelInput& input, const RunMode& mode = {}) const;

  /// Head column of each named channel; throws std::out_of_range naming a
  /// channel the head does not carry.
  std::vector<Index> channel_columns(const std::vector<std::string>& channels) const;

  /// Copy whose channel-dependent head (biaffine and score layer) is rebuilt
  /// for `channels`: slices of channels present in this head are copied,
  /// new channels are freshly initialised from `seed`.
  Model with_head(const std::vector<std::string>& channels, std::uint64_t seed) const;

  Model clone() const;

 private:
  Tensor attention(const std::string& prefix, const Tensor& query_in, const Tensor& memory, Mask mask,
                   const RunMode& mode) const;
  Tensor feed_forward(const std::string& prefix, const Tensor& x, const RunMode& mode) const;
  Tensor mlp(const std::string& prefix, const Tensor& x) const;

  ModelConfig config_;
  std::vector<std::string> head_channels_;
  Parameters params_;
};

}  // namespace tie

#endif  // TIE_MODEL_HPP
