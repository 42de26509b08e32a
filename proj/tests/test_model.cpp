#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/finite_difference.hpp"
#include "tie/model.hpp"

#include <algorithm>
#include <numeric>

using namespace tie;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.vocab_size = 20;
  c.max_len = 16;
  c.max_instr_len = 16;
  return c;
}

Model toy_model(int k = 3, std::uint64_t seed = 1) {
  std::vector<std::string> channels;
  for (int i = 0; i < k; ++i) channels.push_back("C" + std::to_string(i));
  return Model(toy_config(), channels, seed);
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("shape contracts") {
  const Model m = toy_model(2);
  const Tensor enc = m.encode_sentence({3, 4, 5, 6});
  CHECK(enc.shape() == Shape{4, 8});
  const Tensor dec = m.decode_instruction(enc, {7, 8, 9, 10, 11, 12});
  CHECK(dec.shape() == Shape{6, 8});
  const auto s = m.forward({{3, 4, 5}, {7, 8, 9, 10}, {1, 3}, {}});
  CHECK(s.slots.shape() == Shape{2, 8});
  CHECK(s.label_aware.shape() == Shape{3, 8});
  CHECK(s.head_repr.shape() == Shape{3, 8});
  CHECK(s.logits.shape() == Shape{3, 3, 2});

  for (int n = 1; n <= 5; ++n)
    for (int k = 1; k <= 4; ++k) {
      std::vector<int> tokens(static_cast<std::size_t>(n), 3);
      CHECK(toy_model(k).forward({tokens, {4, 5}, {0}, {}}).logits.shape() == Shape{n, n, k});
    }

  CHECK_THROWS_AS(m.encode_sentence({3, 99}), std::out_of_range);
  CHECK_THROWS(m.encode_sentence({}));
  CHECK_THROWS(m.encode_sentence(std::vector<int>(17, 3)));
}

TEST_CASE("config validation names the field") {
  ModelConfig c = toy_config();
  c.heads = 3;
  try {
    c.validate();
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("model.d") != std::string::npos);
  }
  CHECK(ModelConfig::from_json(toy_config().to_json()) == toy_config());
  CHECK_THROWS(ModelConfig::from_json({{"depth", 2}}));
  CHECK_THROWS(ModelConfig::from_json({{"d", "eight"}}));
}

TEST_CASE("eval forward is deterministic; dropout only acts in training") {
  ModelConfig c = toy_config();
  c.dropout = 0.3;
  const Model m(c, {"A", "B"}, 3);
  const ModelInput in{{3, 4, 5, 6}, {7, 8, 9}, {0, 2}, {}};
  CHECK(m.forward(in).logits.value() == m.forward(in).logits.value());
  Rng rng(5);
  const Matrix trained = m.forward(in, {true, &rng}).logits.value();
  CHECK(trained != m.forward(in).logits.value());
  CHECK_THROWS(m.forward(in, {true, nullptr}));
}

TEST_CASE("permuting vocabulary ids with their embedding rows leaves the encoding unchanged") {
  Model m = toy_model();
  const std::vector<int> tokens{3, 7, 11, 3, 19};
  const Matrix before = m.encode_sentence(tokens).value();

  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(9);
  rng.shuffle(perm.begin() + 3, perm.end());
  Matrix& table = m.params().at("embed.token").mutable_value();
  const Matrix old = table;
  for (int id = 0; id < 20; ++id) table.row(perm[static_cast<std::size_t>(id)]) = old.row(id);
  std::vector<int> mapped;
  for (int t : tokens) mapped.push_back(perm[static_cast<std::size_t>(t)]);
  CHECK(m.encode_sentence(mapped).value() == before);
}

TEST_CASE("zeroed cross-attention cuts the sentence out of the instruction states") {
  Model m = toy_model();
  const std::vector<int> instr{4, 5, 6, 7};
  const Tensor a = m.encode_sentence({3, 8, 9});
  const Tensor b = m.encode_sentence({10, 11, 12, 13, 14});
  CHECK(max_abs_diff(m.decode_instruction(a, instr).value(), m.decode_instruction(b, instr).value()) > 1e-6);
  m.params().at("dec.0.cross_attn.wo").mutable_value().setZero();
  CHECK(m.decode_instruction(a, instr).value() == m.decode_instruction(b, instr).value());
}

TEST_CASE("causal instruction attention") {
  const Model m = toy_model();
  const Tensor enc = m.encode_sentence({3, 4, 5});
  const Matrix one = m.decode_instruction(enc, {6, 7, 8, 9}).value();
  const Matrix two = m.decode_instruction(enc, {6, 12, 13, 14}).value();
  CHECK(max_abs_diff(one.row(0), two.row(0)) < 1e-12);
  CHECK(max_abs_diff(one.row(1), two.row(1)) > 1e-6);

  ModelConfig c = toy_config();
  c.causal_decoder = false;
  const Model bi(c, {"A"}, 1);
  const Tensor e2 = bi.encode_sentence({3, 4, 5});
  CHECK(max_abs_diff(bi.decode_instruction(e2, {6, 7, 8, 9}).value().row(0),
                     bi.decode_instruction(e2, {6, 12, 13, 14}).value().row(0)) > 1e-6);
}

TEST_CASE("gather_slots") {
  Rng rng(2);
  Matrix v(5, 4);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-1, 1);
  Tensor h = Tensor::leaf(v, "h");
  CHECK(gather_slots(h, {0, 1, 2, 3, 4}).value() == v);
  CHECK(gather_slots(h, {3}).value() == v.row(3));
  CHECK_THROWS_AS(gather_slots(h, {5}), std::out_of_range);

  Matrix w(2, 4);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
  const auto loss = [&] { return sum(mul(gather_slots(h, {1, 3}), Tensor::constant(w))); };
  backward(loss());
  const Matrix g = h.grad();
  for (Index row : {0, 2, 4}) {
    CHECK(g.row(row).isZero(0.0));
    for (Index c = 0; c < 4; ++c) CHECK(testing::numeric_derivative(loss, h, row * 4 + c) == 0.0);
  }
  CHECK(g.row(1) == w.row(0));
}

TEST_CASE("label attention") {
  Rng rng(4);
  auto random = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
    return Tensor::constant(m);
  };
  const Tensor token_proj = random(6, 6), slot_proj = random(6, 6);
  const Tensor enc = random(5, 6);

  const Tensor one = random(1, 6);
  const Matrix projected = one.value() * slot_proj.value();
  const Matrix out1 = label_attention(enc, one, token_proj, slot_proj).value();
  for (Index i = 0; i < 5; ++i) CHECK(max_abs_diff(out1.row(i), projected) < 1e-15);

  CHECK_THROWS_AS(label_attention(enc, random(3, 5), token_proj, slot_proj), ShapeError);

  for (int trial = 0; trial < 100; ++trial) {
    const Index k = 1 + static_cast<Index>(rng.below(5));
    const Tensor slots = random(k, 6);
    const Matrix proj = slots.value() * slot_proj.value();
    const Matrix weights = (((enc.value() * token_proj.value()) * proj.transpose()).array().exp()).matrix();
    const Matrix out = label_attention(enc, slots, token_proj, slot_proj).value();
    for (Index i = 0; i < 5; ++i) {
      const double total = weights.row(i).sum();
      CHECK(std::abs((weights.row(i) / total).sum() - 1.0) < 1e-9);
      for (Index c = 0; c < 6; ++c) {
        CHECK(out(i, c) <= proj.col(c).maxCoeff() + 1e-12);
        CHECK(out(i, c) >= proj.col(c).minCoeff() - 1e-12);
      }
    }
  }
}

TEST_CASE("biaffine score with constructed weights is an inner product") {
  Model m = toy_model(1);
  auto& p = m.params();
  p.at("biaffine.bilinear").mutable_value() = Matrix::Identity(8, 8);
  p.at("biaffine.pair_linear").mutable_value().setZero();
  p.at("mlp_score.w").mutable_value() = Matrix::Identity(1, 1);
  p.at("mlp_score.b").mutable_value().setZero();
  for (const char* w : {".w1", ".b1", ".w2", ".b2"})
    p.at(std::string("mlp_tail") + w).mutable_value() = p.at(std::string("mlp_head") + w).value();

  Rng rng(12);
  Matrix hx(4, 8);
  for (Index i = 0; i < hx.size(); ++i) hx.data()[i] = rng.uniform(-1, 1);
  ForwardState s;
  const auto [pair, logits] = m.biaffine_score(Tensor::constant(hx), &s);
  CHECK(logits.shape() == Shape{4, 4, 1});
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      const double inner = s.head_repr.value().row(i).dot(s.tail_repr.value().row(j));
      CHECK(std::abs(logits.value()(i * 4 + j, 0) - inner) < 1e-12);
      CHECK(std::abs(logits.value()(i * 4 + j, 0) - logits.value()(j * 4 + i, 0)) < 1e-12);
    }
}

TEST_CASE("full model gradients match finite differences") {
  Model m = toy_model(3, 21);
  Rng rng(22);
  Matrix gold = Matrix::Zero(16, 3);
  for (Index i = 0; i < gold.size(); ++i) gold.data()[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  const Tensor target = Tensor::constant(gold, {4, 4, 3});
  const ModelInput in{{3, 4, 5, 6}, {7, 8, 9, 10, 11}, {1, 2, 4}, {}};
  const auto loss = [&] { return bce_with_logits(m.forward(in).logits, target); };
  std::vector<Tensor> leaves;
  for (const auto& e : m.params().entries()) leaves.push_back(e.tensor);
  const double worst = testing::max_gradient_error(loss, leaves);
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("channel selection and head rebuilding") {
  const Model m = toy_model(3);
  const ModelInput all{{3, 4, 5}, {7, 8, 9}, {0, 1, 2}, {}};
  const auto cols = m.channel_columns({"C2", "C0"});
  ModelInput some = all;
  some.channels = cols;
  const Matrix full = m.forward(all).logits.value();
  const Matrix picked = m.forward(some).logits.value();
  CHECK(picked.col(0) == full.col(2));
  CHECK(picked.col(1) == full.col(0));
  CHECK_THROWS_AS(m.channel_columns({"C9"}), std::out_of_range);

  // a new channel only changes the channel-dependent head
  const Model grown = m.with_head({"C0", "C1", "C2", "NEW"}, 5);
  for (const auto& e : m.params().entries()) {
    const Tensor& t = grown.params().at(e.name);
    const bool head = e.group == "biaffine" || e.group == "mlp_score";
    if (!head) {
      CHECK(t.shape() == e.tensor.shape());
      CHECK(t.value() == e.tensor.value());
    } else {
      CHECK(t.shape() != e.tensor.shape());
    }
  }
  ModelInput grown_in = all;
  grown_in.slot_index = {0, 1, 2, 2};
  CHECK(grown.forward(grown_in).logits.shape() == Shape{3, 3, 4});
  // matched channels reproduce the old pair scores exactly
  const Matrix old_pair = m.forward(all).pair.value();
  const Matrix new_pair = grown.forward(all).pair.value();
  for (int c = 0; c < 3; ++c) CHECK(max_abs_diff(old_pair.col(c), new_pair.col(c)) < 1e-12);

  // parameters are not shared with the source model
  Model copy = m.clone();
  copy.params().at("embed.token").mutable_value().setZero();
  CHECK_FALSE(m.params().at("embed.token").value().isZero());
}

TEST_CASE("another paraphrase changes logits but not shapes") {
  const Model m = toy_model(2);
  const auto a = m.forward({{3, 4, 5}, {7, 8, 9}, {0, 2}, {}}).logits;
  const auto b = m.forward({{3, 4, 5}, {10, 7, 11, 12, 9}, {1, 4}, {}}).logits;
  CHECK(a.shape() == b.shape());
  CHECK(max_abs_diff(a.value(), b.value()) > 1e-9);
}

TEST_CASE("parameter groups partition every tensor") {
  const Model m = toy_model();
  std::size_t covered = 0;
  for (const auto& g : m.params().groups()) covered += m.params().members(g).size();
  CHECK(covered == m.params().entries().size());
  const auto groups = m.params().groups();
  for (const char* g : {"embed", "enc.0.attn", "enc.0.ffn", "enc.norm", "dec.0.self_attn", "dec.0.cross_attn",
                        "dec.0.ffn", "dec.norm", "label_attn", "mlp_head", "mlp_tail", "biaffine", "mlp_score"})
    CHECK(std::find(groups.begin(), groups.end(), g) != groups.end());
}

TEST_CASE("the residual switch decides what the scoring MLPs see") {
  // With one channel every label-aware row is the single projected slot row, so
  // without the residual all cells of the table score the same.
  ModelConfig c = toy_config();
  c.label_residual = false;
  const Model plain(c, {"C0"}, 4);
  const auto s = plain.forward({{3, 4, 5, 6}, {7, 8, 9}, {1}, {}});
  const Matrix& logits = s.logits.value();
  CHECK((logits.array() - logits(0, 0)).abs().maxCoeff() < 1e-12);

  c.label_residual = true;
  const Model mixed(c, {"C0"}, 4);
  const Matrix& varied = mixed.forward({{3, 4, 5, 6}, {7, 8, 9}, {1}, {}}).logits.value();
  CHECK((varied.array() - varied(0, 0)).abs().maxCoeff() > 1e-6);
}
