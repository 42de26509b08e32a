#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/gate_oracle.hpp"
#include "support/schedule_oracle.hpp"
#include "tie/synth.hpp"
#include "tie/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <set>

using namespace tie;
using namespace tie::testing;

namespace {

RunConfig toy_run(std::uint64_t seed = 3) {
  RunConfig c;
  c.seed = seed;
  c.model.d = 8;
  c.model.d_ff = 16;
  c.model.max_len = 32;
  c.model.max_instr_len = 32;
  c.data.max_len = 32;
  c.pretrain.batch_size = 4;
  c.pretrain.epochs = 1;
  c.finetune.batch_size = 4;
  c.finetune.epochs = 2;
  return c;
}

std::vector<TaskData> as_tasks(const std::vector<SynthTask>& synth) {
  std::vector<TaskData> out;
  for (const auto& s : synth) out.push_back({s.dataset, s.templates});
  return out;
}

}  // namespace

TEST_CASE("pair loss") {
  GoldMatrix gold(2, 2);
  gold(0, 0, 0) = 1;
  gold(1, 0, 1) = 1;
  Matrix confident(4, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) confident(i * 2 + j, k) = gold(i, j, k) > 0 ? 40.0 : -40.0;
  CHECK(pair_loss(Tensor::constant(confident, {2, 2, 2}), gold).item() < 1e-15);
  CHECK(pair_loss(Tensor::constant(Matrix::Zero(4, 2), {2, 2, 2}), gold).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  Rng rng(1);
  Matrix z(4, 2);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform(-5, 5);
  double expected = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        const double s = 1.0 / (1.0 + std::exp(-z(i * 2 + j, k)));
        const double t = gold(i, j, k);
        expected -= t * std::log(s) + (1 - t) * std::log(1 - s);
      }
  expected /= 8;
  CHECK(std::abs(pair_loss(Tensor::constant(z, {2, 2, 2}), gold).item() - expected) < 1e-10);
}

TEST_CASE("adam follows the bias-corrected update") {
  Parameters p;
  p.add("w", "g", Tensor::leaf(Matrix::Constant(1, 1, 0.5)));
  Adam adam(p, {0.1, 0.9, 0.999, 1e-8});
  double w = 0.5, m = 0, v = 0;
  const double grads[] = {0.3, -0.2, 0.7};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    adam.update(p, 0, Matrix::Constant(1, 1, g));
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(std::abs(p.at("w").value()(0, 0) - w) < 1e-14);
  }
  CHECK(adam.steps()[0] == 3);
}

TEST_CASE("gate: first step updates everything and stores the snapshot") {
  Parameters p = three_groups();
  Adam adam(p, {});
  GradientSnapshot snap;
  Rng rng(2);
  const auto g = random_grads(p, rng);
  const auto before = p.clone();
  const auto r = gated_step(p, snap, g, adam, GateMode::group);
  CHECK_FALSE(r.gated);
  CHECK(r.skipped() == 0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK_FALSE(bit_equal(p.entries()[i].tensor.value(), before.entries()[i].tensor.value()));
    CHECK(bit_equal(snap.grads[i], g[i]));
  }
}

TEST_CASE("gate: exhaustive sign patterns over three groups") {
  const GateAudit audit = audit_gate();
  CHECK(audit.cases == 54);
  for (const auto& f : audit.failures) FAIL_CHECK(f);
}

TEST_CASE("gate: off mode and non-finite gradients") {
  Parameters p = three_groups();
  Adam adam(p, {});
  GradientSnapshot snap;
  Rng rng(4);
  const auto g = random_grads(p, rng);
  gated_step(p, snap, g, adam, GateMode::off);
  std::vector<Matrix> neg;
  for (const auto& m : g) neg.push_back(-m);
  const auto r = gated_step(p, snap, neg, adam, GateMode::off);
  CHECK_FALSE(r.gated);
  CHECK(r.skipped() == 0);

  auto bad = random_grads(p, rng);
  bad[3](1, 2) = std::nan("");
  const Parameters before = p.clone();
  const auto m_before = adam.first_moments();
  const auto snap_before = snap.grads;
  CHECK_THROWS_AS(gated_step(p, snap, bad, adam, GateMode::group), NumericError);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(bit_equal(p.entries()[i].tensor.value(), before.entries()[i].tensor.value()));
    CHECK(bit_equal(adam.first_moments()[i], m_before[i]));
    CHECK(bit_equal(snap.grads[i], snap_before[i]));
  }
  CHECK(parse_gate_mode("global") == GateMode::global);
  CHECK_THROWS_AS(parse_gate_mode("sometimes"), std::invalid_argument);
}

TEST_CASE("scheduler: two equal datasets alternate") {
  Rng rng(1);
  const auto plan = plan_epoch({{"a", 4}, {"b", 4}}, 2, rng, PlanMode::pretrain);
  REQUIRE(plan.batches.size() == 4);
  CHECK(plan.repeats == 0);
  for (std::size_t i = 1; i < 4; ++i) CHECK(plan.batches[i].dataset != plan.batches[i - 1].dataset);
}

TEST_CASE("scheduler: fuzzed plans over 11 sources") {
  Rng rng(2024);
  int tail_cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<DatasetSize> ds;
    for (int i = 0; i < 11; ++i) {
      // now and then one dominant dataset, which forces tail repeats
      const int hi = (trial % 7 == 0 && i == 0) ? 400 : 40;
      ds.push_back({"d" + std::to_string(i), static_cast<int>(rng.below(static_cast<std::uint64_t>(hi)))});
    }
    const int batch = 1 + static_cast<int>(rng.below(8));
    const std::string previous = rng.bernoulli(0.5) ? ds[rng.below(11)].id : "";
    Rng plan_rng(static_cast<std::uint64_t>(trial));
    const BatchPlan plan = plan_epoch(ds, batch, plan_rng, PlanMode::pretrain, previous);
    for (const auto& v : plan_violations(ds, batch, previous, plan)) FAIL_CHECK("trial " << trial << ": " << v);
    tail_cases += plan.repeats > 0 ? 1 : 0;
  }
  CHECK(tail_cases > 0);
}

TEST_CASE("scheduler: repeat bound") {
  CHECK(minimum_repeats({{"a", 10}, {"b", 2}}, 1, "") == 7);
  CHECK(minimum_repeats({{"a", 10}, {"b", 2}}, 1, "a") == 8);
  CHECK(minimum_repeats({{"a", 10}, {"b", 2}}, 1, "b") == 7);
  CHECK(minimum_repeats({{"a", 3}, {"b", 3}}, 1, "a") == 0);
}

TEST_CASE("scheduler: determinism, finetune mode and errors") {
  const std::vector<DatasetSize> ds = {{"a", 13}, {"b", 7}, {"c", 9}};
  Rng r1(9), r2(9);
  const auto p1 = plan_epoch(ds, 3, r1, PlanMode::pretrain);
  const auto p2 = plan_epoch(ds, 3, r2, PlanMode::pretrain);
  REQUIRE(p1.batches.size() == p2.batches.size());
  for (std::size_t i = 0; i < p1.batches.size(); ++i) {
    CHECK(p1.batches[i].dataset == p2.batches[i].dataset);
    CHECK(p1.batches[i].indices == p2.batches[i].indices);
  }

  Rng r3(1);
  const auto ft = plan_epoch({{"t", 10}}, 4, r3, PlanMode::finetune);
  CHECK(ft.batches.size() == 3);
  CHECK(ft.repeats == 0);
  std::set<int> idx;
  for (const auto& b : ft.batches) idx.insert(b.indices.begin(), b.indices.end());
  CHECK(idx.size() == 10);

  Rng r4(1);
  CHECK_THROWS_AS(plan_epoch({{"a", 3}}, 2, r4, PlanMode::pretrain), std::invalid_argument);
  CHECK_THROWS_AS(plan_epoch({{"a", 3}, {"b", 3}}, 2, r4, PlanMode::finetune), std::invalid_argument);
  CHECK_THROWS_AS(plan_epoch({{"a", 3}, {"b", 3}}, 0, r4, PlanMode::pretrain), std::invalid_argument);
}

TEST_CASE("checkpoint bytes round trip and damage is detected") {
  CheckpointFile f;
  f.header = {{"kind", "test"}, {"n", 3}};
  Matrix a(2, 3);
  a << 1, -2, 3.5, 1e-300, -0.0, 7;
  f.tensors.push_back({"x", {2, 3}, a});
  f.tensors.push_back({"y", {1}, Matrix::Constant(1, 1, 4.25)});
  const std::string bytes = serialize_checkpoint(f);
  CHECK(bytes.substr(0, 4) == "TIE1");
  const CheckpointFile g = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(g) == bytes);
  CHECK(bit_equal(g.tensor("x").value, a));
  CHECK(g.tensor("x").dims == Shape{2, 3});
  CHECK(g.header.at("n") == 3);

  std::string corrupt = bytes;
  corrupt[corrupt.size() - 10] ^= 0x01;
  CHECK_THROWS_AS(parse_checkpoint(corrupt), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(magic), CheckpointError);

  try {
    read_checkpoint("/nonexistent/model.ckpt");
    FAIL("expected an error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("not found") != std::string::npos);
  }
}

TEST_CASE("config parsing names the field path") {
  auto error_of = [](const nlohmann::json& j) {
    try {
      RunConfig::from_json(j);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(error_of({{"model", {{"d", 8}}}}).rfind("seed", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"pretrain", {{"batch_size", 0}}}}).rfind("pretrain.batch_size", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"pretrain", {{"batch_size", "four"}}}}).rfind("pretrain.batch_size", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"finetune", {{"lr", -1.0}}}}).rfind("finetune.lr", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"pretrain", {{"gate", "maybe"}}}}).rfind("pretrain.gate", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"pretrain", {{"warmup", 3}}}}).rfind("pretrain.warmup", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"model", {{"heads", 5}}}}).rfind("model.", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"threshold", 1.0}}).rfind("threshold", 0) == 0);
  CHECK(error_of({{"seed", 1}, {"colour", "red"}}).rfind("colour", 0) == 0);
  CHECK(error_of({{"seed", -4}}).rfind("seed", 0) == 0);

  const RunConfig c = RunConfig::from_json({{"seed", 7}, {"pretrain", {{"gate", "global"}}}});
  CHECK(c.seed == 7);
  CHECK(c.pretrain.gate == GateMode::global);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("synthetic bundles") {
  for (const auto& kind : synth_kinds()) {
    const auto a = synth_bundle(kind, 30, 4);
    const auto b = synth_bundle(kind, 30, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].dataset.train == b[i].dataset.train);
      CHECK(a[i].templates.size() == 5);
      InstructionPool pool;
      CHECK_NOTHROW(pool.add(a[i].dataset.id, a[i].dataset.labels, a[i].templates));
      for (const auto& x : a[i].dataset.train) CHECK(encode(x, a[i].dataset.labels).collisions == 0);
    }
  }
  CHECK(synth_bundle("all", 10, 1).size() == 4);
  CHECK_THROWS_AS(synth_bundle("poetry", 10, 1), std::invalid_argument);

  // conflict: the venue frames are shared but typed ORG in one source and LOC in the other
  const auto conflict = synth_bundle("conflict", 200, 1);
  auto venue_types = [](const Dataset& d) {
    std::set<std::string> types;
    for (const auto& x : d.train)
      for (const auto& m : x.entities)
        if (x.tokens[static_cast<std::size_t>(m.span.start)] == "bistro") types.insert(m.type);
    return types;
  };
  CHECK(venue_types(conflict[0].dataset) == std::set<std::string>{"ORG"});
  CHECK(venue_types(conflict[1].dataset) == std::set<std::string>{"LOC"});
  const auto aligned = synth_bundle("aligned", 200, 1);
  CHECK(venue_types(aligned[1].dataset) == std::set<std::string>{"ORG"});
  CHECK(aligned[0].dataset.train.size() == 200);
  CHECK(aligned[2].dataset.train.size() == 10);
  CHECK(aligned[2].dataset.dev.size() == 40);

  const auto dir = std::filesystem::temp_directory_path() / "tie_synth_test";
  std::filesystem::remove_all(dir);
  const auto manifests = write_synth(dir, aligned);
  REQUIRE(manifests.size() == 3);
  const TaskData loaded = load_task(manifests[0], 128);
  CHECK(loaded.dataset.train == aligned[0].dataset.train);
  CHECK(loaded.templates == aligned[0].templates);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pretraining is deterministic and gates after the first step") {
  const auto tasks = as_tasks(synth_bundle("conflict", 24, 2));
  RunConfig c = toy_run();
  std::vector<StepReport> reports;
  const auto r1 = pretrain(c, {tasks[0], tasks[1]}, [&](const StepReport& r) { reports.push_back(r); });
  const auto r2 = pretrain(c, {tasks[0], tasks[1]});
  CHECK(serialize_checkpoint(r1.checkpoint) == serialize_checkpoint(r2.checkpoint));
  REQUIRE(reports.size() == 12);
  CHECK_FALSE(reports[0].gated);
  for (std::size_t i = 1; i < reports.size(); ++i) CHECK(reports[i].gated);
  CHECK(r1.gated_decisions == 11 * static_cast<std::int64_t>(reports[1].groups.size()));
  CHECK(r1.repeats == 0);
  for (const auto& r : reports) CHECK(std::isfinite(r.loss));

  CHECK_THROWS_AS(pretrain(c, {tasks[0]}), std::invalid_argument);
}

TEST_CASE("resume continues bit-identically") {
  const auto tasks = as_tasks(synth_bundle("aligned", 40, 5));
  const std::vector<TaskData> sources = {tasks[0], tasks[1]};
  RunConfig c = toy_run();
  c.pretrain.epochs = 3;
  c.pretrain.batch_size = 2;
  c.model.dropout = 0.1;
  const Vocabulary vocab = build_vocabulary(sources, 1, true);
  c.model.vocab_size = vocab.size();
  const auto channels = sources[0].dataset.labels.channels();

  Trainer straight(Model(c.model, channels, 1), vocab, sources, c, PlanMode::pretrain);
  for (int i = 0; i < 51; ++i) straight.step();

  Trainer first(Model(c.model, channels, 1), vocab, sources, c, PlanMode::pretrain);
  for (int i = 0; i < 50; ++i) first.step();
  const std::string bytes = serialize_checkpoint(first.checkpoint());
  Trainer resumed = Trainer::resume(parse_checkpoint(bytes), sources);
  CHECK(serialize_checkpoint(resumed.checkpoint()) == bytes);
  resumed.step();
  CHECK(resumed.state().step == 51);
  CHECK(serialize_checkpoint(resumed.checkpoint()) == serialize_checkpoint(straight.checkpoint()));
}

TEST_CASE("loss falls on a fixed batch") {
  const auto task = as_tasks(synth_bundle("ner", 8, 1))[0];
  const Vocabulary vocab = build_vocabulary({task}, 1, true);
  ModelConfig mc = toy_run().model;
  mc.vocab_size = vocab.size();
  Model model(mc, task.dataset.labels.channels(), 3);
  Adam adam(model.params(), {3e-3});
  GradientSnapshot snap;
  const Instruction ins = parse_template(task.templates[0], task.dataset.labels, task.dataset.id);
  std::vector<double> losses;
  for (int step = 0; step < 20; ++step) {
    model.params().zero_grad();
    Tensor total;
    for (const auto& x : task.dataset.train) {
      const Tensor l = pair_loss(model.forward({vocab.encode(x.tokens), ins.token_ids(vocab), ins.slot_index, {}}).logits,
                                 encode(x, task.dataset.labels));
      total = total.defined() ? add(total, l) : l;
    }
    backward(total);
    std::vector<Matrix> grads;
    for (const auto& e : model.params().entries()) grads.push_back(e.tensor.grad());
    losses.push_back(total.item());
    gated_step(model.params(), snap, grads, adam, GateMode::off);
  }
  int rises = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) rises += losses[i] > losses[i - 1] ? 1 : 0;
  CHECK(rises <= 2);
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("finetune keeps the best dev epoch and transfers the head by name") {
  const auto tasks = as_tasks(synth_bundle("aligned", 24, 6));
  RunConfig c = toy_run();
  c.finetune.epochs = 3;
  const auto pre = pretrain(c, {tasks[0], tasks[1]});
  const auto ft = finetune(c, pre.checkpoint, tasks[2]);
  CHECK(ft.dev_curve.size() == 3);
  const auto best = std::max_element(ft.dev_curve.begin(), ft.dev_curve.end());
  CHECK(ft.best_epoch == 1 + static_cast<int>(best - ft.dev_curve.begin()));
  CHECK(ft.best_dev == *best);
  const LoadedModel loaded = load_model(ft.checkpoint);
  CHECK(loaded.tasks.size() == 1);
  CHECK(loaded.model.head_channels() == tasks[2].dataset.labels.channels());
  const Evaluation ev = evaluate(loaded.model, loaded.vocab, tasks[2], tasks[2].dataset.dev, c.threshold);
  CHECK(ev.headline == doctest::Approx(ft.best_dev).epsilon(1e-12));

  const auto scratch = finetune(c, std::nullopt, tasks[2]);
  CHECK(scratch.dev_curve.size() == 3);
  const auto again = finetune(c, std::nullopt, tasks[2]);
  CHECK(serialize_checkpoint(scratch.checkpoint) == serialize_checkpoint(again.checkpoint));
}
