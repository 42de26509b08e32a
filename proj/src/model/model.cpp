#include "tie/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace tie {

namespace {

void require(bool ok, const std::string& path, const std::string& field, const std::string& what) {
  if (!ok) throw std::invalid_argument(path + "." + field + ": " + what);
}

}  // namespace

void ModelConfig::validate(const std::string& path) const {
  require(d >= 1, path, "d", "must be >= 1");
  require(heads >= 1, path, "heads", "must be >= 1");
  require(d % heads == 0, path, "d", "must be divisible by heads (" + std::to_string(heads) + ")");
  require(layers_enc >= 1, path, "layers_enc", "must be >= 1");
  require(layers_dec >= 1, path, "layers_dec", "must be >= 1");
  require(d_ff >= 1, path, "d_ff", "must be >= 1");
  require(max_len >= 1, path, "max_len", "must be >= 1");
  require(max_instr_len >= 1, path, "max_instr_len", "must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, path, "dropout", "must lie in [0, 1)");
  require(vocab_size >= 3, path, "vocab_size", "must be >= 3 (reserved ids)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", d},
          {"layers_enc", layers_enc},
          {"layers_dec", layers_dec},
          {"heads", heads},
          {"d_ff", d_ff},
          {"max_len", max_len},
          {"max_instr_len", max_instr_len},
          {"dropout", dropout},
          {"vocab_size", vocab_size},
          {"label_residual", label_residual},
          {"causal_decoder", causal_decoder}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw std::invalid_argument(path + ": expected an object");
  ModelConfig c;
  const auto known = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument(path + "." + key + ": unknown field");
    const auto& expected = known.at(key);
    const bool ok = expected.is_boolean() ? value.is_boolean()
                    : expected.is_number_integer() ? value.is_number_integer()
                                                   : value.is_number();
    if (!ok) throw std::invalid_argument(path + "." + key + ": expected " + std::string(expected.type_name()));
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("d", c.d);
  get("layers_enc", c.layers_enc);
  get("layers_dec", c.layers_dec);
  get("heads", c.heads);
  get("d_ff", c.d_ff);
  get("max_len", c.max_len);
  get("max_instr_len", c.max_instr_len);
  get("dropout", c.dropout);
  get("vocab_size", c.vocab_size);
  get("label_residual", c.label_residual);
  get("causal_decoder", c.causal_decoder);
  return c;
}

void Parameters::add(std::string name, std::string group, Tensor tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(group), std::move(tensor)});
}

const Tensor& Parameters::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].tensor;
}

Tensor& Parameters::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const Parameters&>(*this).at(name));
}

std::vector<std::string> Parameters::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : entries_)
    if (seen.insert(e.group).second) out.push_back(e.group);
  return out;
}

std::vector<std::size_t> Parameters::members(const std::string& group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].group == group) out.push_back(i);
  return out;
}

Index Parameters::scalar_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void Parameters::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

Parameters Parameters::clone() const {
  Parameters p;
  for (const auto& e : entries_) p.add(e.name, e.group, Tensor::leaf(e.tensor.value(), e.tensor.shape(), e.name));
  return p;
}

namespace {

class Builder {
 public:
  Builder(Parameters& params, Rng& rng, double bound) : params_(params), rng_(rng), bound_(bound) {}

  void weight(const std::string& name, const std::string& group, Shape shape) {
    const Index cols = shape.back();
    const Index rows = element_count(shape) / cols;
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = rng_.uniform(-bound_, bound_);
    params_.add(name, group, Tensor::leaf(std::move(m), std::move(shape), name));
  }
  void fill(const std::string& name, const std::string& group, Index n, Real value) {
    params_.add(name, group, Tensor::leaf(Matrix::Constant(1, n, value), {n}, name));
  }
  void norm(const std::string& prefix, const std::string& group, Index d) {
    fill(prefix + ".gain", group, d, 1.0);
    fill(prefix + ".bias", group, d, 0.0);
  }
  void attention(const std::string& group, Index d) {
    norm(group + ".norm", group, d);
    for (const char* w : {"wq", "wk", "wv", "wo"}) weight(group + "." + w, group, {d, d});
  }
  void ffn(const std::string& group, Index d, Index ff) {
    norm(group + ".norm", group, d);
    weight(group + ".w1", group, {d, ff});
    fill(group + ".b1", group, ff, 0.0);
    weight(group + ".w2", group, {ff, d});
    fill(group + ".b2", group, d, 0.0);
  }
  void mlp(const std::string& group, Index d) {
    weight(group + ".w1", group, {d, d});
    fill(group + ".b1", group, d, 0.0);
    weight(group + ".w2", group, {d, d});
    fill(group + ".b2", group, d, 0.0);
  }
  void head(Index d, Index k) {
    weight("biaffine.bilinear", "biaffine", {d, k, d});
    weight("biaffine.pair_linear", "biaffine", {k, 2 * d});
    weight("mlp_score.w", "mlp_score", {k, k});
    fill("mlp_score.b", "mlp_score", k, 0.0);
  }

 private:
  Parameters& params_;
  Rng& rng_;
  double bound_;
};

bool is_head_parameter(const std::string& name) {
  return name.rfind("biaffine.", 0) == 0 || name.rfind("mlp_score.", 0) == 0;
}

}  // namespace

Model::Model(ModelConfig config, std::vector<std::string> head_channels, std::uint64_t seed)
    : config_(std::move(config)), head_channels_(std::move(head_channels)) {
  config_.validate();
  if (head_channels_.empty()) throw std::invalid_argument("model needs at least one output channel");
  Rng rng(seed);
  const Index d = config_.d;
  Builder b(params_, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  b.weight("embed.token", "embed", {config_.vocab_size, d});
  b.weight("embed.enc_pos", "embed", {config_.max_len, d});
  b.weight("embed.dec_pos", "embed", {config_.max_instr_len, d});
  for (int l = 0; l < config_.layers_enc; ++l) {
    b.attention("enc." + std::to_string(l) + ".attn", d);
    b.ffn("enc." + std::to_string(l) + ".ffn", d, config_.d_ff);
  }
  b.norm("enc.norm", "enc.norm", d);
  for (int l = 0; l < config_.layers_dec; ++l) {
    b.attention("dec." + std::to_string(l) + ".self_attn", d);
    b.attention("dec." + std::to_string(l) + ".cross_attn", d);
    b.ffn("dec." + std::to_string(l) + ".ffn", d, config_.d_ff);
  }
  b.norm("dec.norm", "dec.norm", d);
  b.weight("label_attn.token_proj", "label_attn", {d, d});
  b.weight("label_attn.slot_proj", "label_attn", {d, d});
  b.mlp("mlp_head", d);
  b.mlp("mlp_tail", d);
  b.head(d, static_cast<Index>(head_channels_.size()));
}

Model::Model(ModelConfig config, std::vector<std::string> head_channels, Parameters params)
    : config_(std::move(config)), head_channels_(std::move(head_channels)), params_(std::move(params)) {
  config_.validate();
  const Model reference(config_, head_channels_, 0);
  const auto& want = reference.params().entries();
  if (want.size() != params_.entries().size())
    throw std::invalid_argument("parameter set has " + std::to_string(params_.entries().size()) +
                                " tensors, architecture needs " + std::to_string(want.size()));
  for (const auto& e : want) {
    const Tensor& got = params_.at(e.name);
    if (got.shape() != e.tensor.shape())
      throw ShapeError("parameter " + e.name + " has shape " + to_string(got.shape()) + ", expected " +
                       to_string(e.tensor.shape()));
  }
}

Model Model::clone() const { return Model(config_, head_channels_, params_.clone()); }

Tensor gather_slots(const Tensor& decoded, const std::vector<int>& slot_index) {
  std::vector<Index> rows;
  for (int s : slot_index) {
    if (s < 0 || s >= decoded.rows())
      throw std::out_of_range("slot index " + std::to_string(s) + " outside instruction of length " +
                              std::to_string(decoded.rows()));
    rows.push_back(s);
  }
  return gather_rows(decoded, rows);
}

Tensor label_attention(const Tensor& encoded, const Tensor& slots, const Tensor& token_proj, const Tensor& slot_proj) {
  const Tensor keys = matmul(slots, slot_proj);
  const Tensor weights = softmax_rows(matmul(matmul(encoded, token_proj), transpose(keys)));
  return matmul(weights, keys);
}

Tensor Model::attention(const std::string& prefix, const Tensor& query_in, const Tensor& memory, Mask mask,
                        const RunMode& mode) const {
  const Index d = config_.d;
  const Index dh = d / config_.heads;
  const Tensor q = matmul(query_in, params_.at(prefix + ".wq"));
  const Tensor k = matmul(memory, params_.at(prefix + ".wk"));
  const Tensor v = matmul(memory, params_.at(prefix + ".wv"));
  const Real scale_factor = 1.0 / std::sqrt(static_cast<Real>(dh));
  std::vector<Tensor> heads;
  for (int h = 0; h < config_.heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    Tensor w = softmax_rows(scale(matmul(qh, transpose(kh)), scale_factor), mask);
    if (mode.train && config_.dropout > 0.0) w = dropout(w, config_.dropout, *mode.rng);
    heads.push_back(matmul(w, vh));
  }
  const Tensor joined = heads.size() == 1 ? heads.front() : concat_last_dim(heads);
  return matmul(joined, params_.at(prefix + ".wo"));
}

Tensor Model::feed_forward(const std::string& prefix, const Tensor& x, const RunMode& mode) const {
  Tensor h = gelu(add_bias(matmul(x, params_.at(prefix + ".w1")), params_.at(prefix + ".b1")));
  if (mode.train && config_.dropout > 0.0) h = dropout(h, config_.dropout, *mode.rng);
  return add_bias(matmul(h, params_.at(prefix + ".w2")), params_.at(prefix + ".b2"));
}

Tensor Model::mlp(const std::string& prefix, const Tensor& x) const {
  const Tensor h = gelu(add_bias(matmul(x, params_.at(prefix + ".w1")), params_.at(prefix + ".b1")));
  return add_bias(matmul(h, params_.at(prefix + ".w2")), params_.at(prefix + ".b2"));
}

namespace {

Tensor norm(const Parameters& p, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, p.at(prefix + ".gain"), p.at(prefix + ".bias"));
}

Tensor embed(const Parameters& p, const std::vector<int>& ids, const std::string& positions, int limit,
             const char* what) {
  if (ids.empty()) throw std::invalid_argument(std::string(what) + " is empty");
  if (static_cast<int>(ids.size()) > limit)
    throw std::invalid_argument(std::string(what) + " length " + std::to_string(ids.size()) + " exceeds " +
                                std::to_string(limit));
  const Tensor tokens = embedding_lookup(p.at("embed.token"), ids);
  return add(tokens, slice_rows(p.at(positions), 0, static_cast<Index>(ids.size())));
}

void check_mode(const RunMode& mode, double rate) {
  if (mode.train && rate > 0.0 && mode.rng == nullptr)
    throw std::invalid_argument("training with dropout needs an rng");
}

}  // namespace

Tensor Model::encode_sentence(const std::vector<int>& tokens, const RunMode& mode) const {
  check_mode(mode, config_.dropout);
  Tensor x = embed(params_, tokens, "embed.enc_pos", config_.max_len, "sentence");
  for (int l = 0; l < config_.layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l);
    const Tensor n1 = norm(params_, p + ".attn.norm", x);
    x = add(x, attention(p + ".attn", n1, n1, Mask::none, mode));
    x = add(x, feed_forward(p + ".ffn", norm(params_, p + ".ffn.norm", x), mode));
  }
  return norm(params_, "enc.norm", x);
}

Tensor Model::decode_instruction(const Tensor& encoded, const std::vector<int>& instruction,
                                 const RunMode& mode) const {
  check_mode(mode, config_.dropout);
  if (encoded.shape().size() != 2 || encoded.cols() != config_.d)
    throw ShapeError("decode_instruction: encoder states " + to_string(encoded.shape()) + " do not have width " +
                     std::to_string(config_.d));
  Tensor x = embed(params_, instruction, "embed.dec_pos", config_.max_instr_len, "instruction");
  const Mask self_mask = config_.causal_decoder ? Mask::causal : Mask::none;
  for (int l = 0; l < config_.layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l);
    const Tensor n1 = norm(params_, p + ".self_attn.norm", x);
    x = add(x, attention(p + ".self_attn", n1, n1, self_mask, mode));
    x = add(x, attention(p + ".cross_attn", norm(params_, p + ".cross_attn.norm", x), encoded, Mask::none, mode));
    x = add(x, feed_forward(p + ".ffn", norm(params_, p + ".ffn.norm", x), mode));
  }
  return norm(params_, "dec.norm", x);
}

std::pair<Tensor, Tensor> Model::biaffine_score(const Tensor& label_aware, ForwardState* state) const {
  if (label_aware.shape().size() != 2 || label_aware.cols() != config_.d)
    throw ShapeError("biaffine_score: input " + to_string(label_aware.shape()) + " does not have width " +
                     std::to_string(config_.d));
  const Tensor head = mlp("mlp_head", label_aware);
  const Tensor tail = mlp("mlp_tail", label_aware);
  const Tensor pair = biaffine(head, tail, params_.at("biaffine.bilinear"), params_.at("biaffine.pair_linear"));
  const Tensor cells = reshape(pair, {pair.rows(), pair.cols()});
  const Tensor scored = add_bias(matmul(cells, params_.at("mlp_score.w")), params_.at("mlp_score.b"));
  if (state) {
    state->head_repr = head;
    state->tail_repr = tail;
  }
  return {pair, reshape(scored, pair.shape())};
}

ForwardState Model::forward(const ModelInput& input, const RunMode& mode) const {
  ForwardState s;
  s.encoded = encode_sentence(input.tokens, mode);
  s.decoded = decode_instruction(s.encoded, input.instruction, mode);
  s.slots = gather_slots(s.decoded, input.slot_index);
  s.label_aware = label_attention(s.encoded, s.slots, params_.at("label_attn.token_proj"), params_.at("label_attn.slot_proj"));
  const Tensor features = config_.label_residual ? add(s.encoded, s.label_aware) : s.label_aware;
  auto [pair, logits] = biaffine_score(features, &s);
  s.pair = pair;
  s.logits = input.channels.empty() ? logits : gather_cols(logits, input.channels);
  return s;
}

std::vector<Index> Model::channel_columns(const std::vector<std::string>& channels) const {
  std::vector<Index> out;
  for (const auto& c : channels) {
    const auto it = std::find(head_channels_.begin(), head_channels_.end(), c);
    if (it == head_channels_.end()) throw std::out_of_range("model head has no channel named " + c);
    out.push_back(static_cast<Index>(it - head_channels_.begin()));
  }
  return out;
}

Model Model::with_head(const std::vector<std::string>& channels, std::uint64_t seed) const {
  if (channels.empty()) throw std::invalid_argument("model needs at least one output channel");
  const Index d = config_.d;
  const Index k = static_cast<Index>(channels.size());
  Parameters fresh;
  Rng rng(seed);
  Builder(fresh, rng, 1.0 / std::sqrt(static_cast<double>(d))).head(d, k);

  std::vector<std::optional<Index>> source(channels.size());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto it = std::find(head_channels_.begin(), head_channels_.end(), channels[c]);
    if (it != head_channels_.end()) source[c] = static_cast<Index>(it - head_channels_.begin());
  }

  Matrix& bilinear = fresh.at("biaffine.bilinear").mutable_value();
  Matrix& pair_linear = fresh.at("biaffine.pair_linear").mutable_value();
  Matrix& sw = fresh.at("mlp_score.w").mutable_value();
  Matrix& sb = fresh.at("mlp_score.b").mutable_value();
  const Matrix& old_bilinear = params_.at("biaffine.bilinear").value();  // (d*K_old) x d, row a*K + c
  const Matrix& old_pair_linear = params_.at("biaffine.pair_linear").value();
  const Matrix& old_sw = params_.at("mlp_score.w").value();
  const Matrix& old_sb = params_.at("mlp_score.b").value();
  const Index k_old = static_cast<Index>(head_channels_.size());
  for (Index c = 0; c < k; ++c) {
    if (!source[static_cast<std::size_t>(c)]) continue;
    const Index o = *source[static_cast<std::size_t>(c)];
    for (Index a = 0; a < d; ++a) bilinear.row(a * k + c) = old_bilinear.row(a * k_old + o);
    pair_linear.row(c) = old_pair_linear.row(o);
    sb(0, c) = old_sb(0, o);
    for (Index r = 0; r < k; ++r)
      if (source[static_cast<std::size_t>(r)]) sw(r, c) = old_sw(*source[static_cast<std::size_t>(r)], o);
  }

  Parameters params;
  for (const auto& e : params_.entries())
    if (!is_head_parameter(e.name)) params.add(e.name, e.group, Tensor::leaf(e.tensor.value(), e.tensor.shape(), e.name));
  for (const auto& e : fresh.entries()) params.add(e.name, e.group, e.tensor);
  return Model(config_, channels, std::move(params));
}

}  // namespace tie
