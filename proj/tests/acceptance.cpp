// One pass/fail line per acceptance criterion. Tolerances are fixed here.

#include "support/codec_oracle.hpp"
#include "support/finite_difference.hpp"
#include "support/gate_oracle.hpp"
#include "support/metric_oracle.hpp"
#include "support/schedule_oracle.hpp"
#include "tie/synth.hpp"
#include "tie/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace tie;
using namespace tie::testing;

namespace {

constexpr double gradcheck_tolerance = 1e-3;
constexpr double gradcheck_step = 1e-5;
constexpr double gradcheck_budget_s = 120.0;
constexpr int fuzz_cases = 1000;
constexpr double capacity_target_f1 = 0.99;
constexpr int capacity_max_steps = 500;
constexpr double capacity_budget_s = 300.0;
constexpr int transfer_seeds = 5;
constexpr int transfer_wins_needed = 4;
constexpr int transfer_train_size = 500;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::vector<TaskData> as_tasks(const std::vector<SynthTask>& synth) {
  std::vector<TaskData> out;
  for (const auto& s : synth) out.push_back({s.dataset, s.templates});
  return out;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// (a) ------------------------------------------------------------------------

Verdict gradcheck_criterion() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  int runs = 0;
  for (int length = 1; length <= 6; ++length)
    for (int k = 1; k <= 5; ++k)
      for (int variant = 0; variant < 2; ++variant) {
        if (variant == 1 && !(length == 6 && k == 5)) continue;
        ModelConfig c;
        c.d = 8;
        c.layers_enc = 1;
        c.layers_dec = 1;
        c.heads = 2;
        c.d_ff = 16;
        c.vocab_size = 24;
        c.max_len = 8;
        c.max_instr_len = 12;
        c.label_residual = variant == 0;
        c.causal_decoder = variant == 0;
        std::vector<std::string> names;
        for (int i = 0; i < k; ++i) names.push_back("C" + std::to_string(i));
        const std::uint64_t seed = static_cast<std::uint64_t>(length * 10 + k);
        Model model(c, names, seed);
        Rng rng(seed + 100);
        ModelInput input;
        for (int i = 0; i < length; ++i) input.tokens.push_back(3 + static_cast<int>(rng.below(21)));
        for (int i = 0; i < 10; ++i) input.instruction.push_back(3 + static_cast<int>(rng.below(21)));
        for (int i = 0; i < k; ++i) input.slot_index.push_back(2 * i);
        GoldMatrix gold(length, k);
        for (Index i = 0; i < gold.cells.size(); ++i) gold.cells.data()[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
        std::vector<Tensor> leaves;
        for (const auto& e : model.params().entries()) leaves.push_back(e.tensor);
        const double err = max_gradient_error([&] { return pair_loss(model.forward(input).logits, gold); }, leaves,
                                              gradcheck_step);
        ++runs;
        if (err > worst) {
          worst = err;
          where = "|x|=" + std::to_string(length) + " K=" + std::to_string(k);
        }
      }
  const double elapsed = seconds_since(t0);
  return {worst <= gradcheck_tolerance && elapsed < gradcheck_budget_s,
          std::to_string(runs) + " configs, max rel err " + fmt(worst, 3) + " at " + where + " (tol " +
              fmt(gradcheck_tolerance) + "), " + fmt(elapsed, 3) + "s (budget " + fmt(gradcheck_budget_s) + "s)"};
}

// (b) ------------------------------------------------------------------------

Verdict codec_criterion() {
  std::string detail;
  bool pass = true;
  for (const auto task : {TaskKind::ner, TaskKind::re, TaskKind::ee, TaskKind::absa}) {
    const RoundTrip r = round_trip(task, fuzz_cases, 7);
    pass = pass && r.failures == 0 && r.collisions == 0 && r.trials == fuzz_cases;
    detail += to_string(task) + " " + std::to_string(r.trials - r.failures) + "/" + std::to_string(r.trials) + ", ";
  }
  const int collisions = degenerate_collisions();
  pass = pass && collisions == 2;
  return {pass, detail + "collision case counts " + std::to_string(collisions) + " (expect 2)"};
}

// (c) ------------------------------------------------------------------------

Verdict gate_criterion() {
  const GateAudit audit = audit_gate();
  std::string detail = std::to_string(audit.cases) + " sign patterns, " + std::to_string(audit.failures.size()) +
                       " violations";
  if (!audit.failures.empty()) detail += " (first: " + audit.failures.front() + ")";
  return {audit.cases == 54 && audit.failures.empty(), detail};
}

// (d) ------------------------------------------------------------------------

Verdict scheduler_criterion() {
  Rng rng(77);
  int bad = 0, tail_plans = 0;
  std::string first;
  for (int trial = 0; trial < fuzz_cases; ++trial) {
    std::vector<DatasetSize> ds;
    for (int i = 0; i < 11; ++i) {
      const int hi = (trial % 5 == 0 && i == 0) ? 500 : 60;
      ds.push_back({"src" + std::to_string(i), static_cast<int>(rng.below(static_cast<std::uint64_t>(hi)))});
    }
    const int batch = 1 + static_cast<int>(rng.below(16));
    const std::string previous = rng.bernoulli(0.5) ? ds[rng.below(ds.size())].id : "";
    Rng plan_rng(derive_seed(77, static_cast<std::uint64_t>(trial)));
    const auto plan = plan_epoch(ds, batch, plan_rng, PlanMode::pretrain, previous);
    const auto v = plan_violations(ds, batch, previous, plan);
    if (!v.empty()) {
      if (bad == 0) first = "trial " + std::to_string(trial) + ": " + v.front();
      ++bad;
    }
    tail_plans += plan.repeats > 0 ? 1 : 0;
  }
  std::string detail = std::to_string(fuzz_cases) + " plans over 11 sources, " + std::to_string(bad) +
                       " unsound, " + std::to_string(tail_plans) + " with logged tail repeats";
  if (bad) detail += " (first: " + first + ")";
  return {bad == 0, detail};
}

// (e) ------------------------------------------------------------------------

Verdict metrics_criterion() {
  bool pass = true;
  std::string detail;
  for (const auto& [name, mismatches] : metric_oracle_report(fuzz_cases)) {
    pass = pass && mismatches == 0;
    detail += name + " " + std::to_string(fuzz_cases - mismatches) + "/" + std::to_string(fuzz_cases) + ", ";
  }
  const Annotations gold{{{"PER", {0, 1}}, {"ORG", {3, 4}}}, {}};
  const Annotations pred{{{"PER", {0, 1}}, {"ORG", {3, 5}}}, {}};
  const double hand = ent_f1(std::vector{pred}, std::vector{gold}).f1();
  pass = pass && hand == 0.5;
  return {pass, detail + "hand case F1 " + fmt(hand)};
}

// (f) ------------------------------------------------------------------------

Verdict capacity_criterion() {
  const auto t0 = Clock::now();
  auto synth = synth_bundle("ner", 8, 11);
  TaskData task{synth[0].dataset, synth[0].templates};
  RunConfig c;
  c.seed = 11;
  c.model.d = 32;
  c.finetune.lr = 1e-3;
  c.finetune.batch_size = 8;
  c.finetune.epochs = capacity_max_steps;
  const Vocabulary vocab = build_vocabulary({task}, 1, true);
  c.model.vocab_size = vocab.size();
  Trainer trainer(Model(c.model, task.dataset.labels.channels(), derive_seed(c.seed, 1)), vocab, {task}, c,
                  PlanMode::finetune);
  double f1 = 0.0;
  std::int64_t reached = -1;
  while (!trainer.finished()) {
    trainer.step();
    f1 = evaluate(trainer.model(), trainer.vocab(), task, task.dataset.train, c.threshold).headline;
    if (f1 >= capacity_target_f1) {
      reached = trainer.state().step;
      break;
    }
  }
  const double elapsed = seconds_since(t0);
  return {reached > 0 && elapsed < capacity_budget_s,
          "train Ent.F1 " + fmt(f1) + (reached > 0 ? " reached at step " + std::to_string(reached) : " not reached") +
              " (target " + fmt(capacity_target_f1) + " within " + std::to_string(capacity_max_steps) + "), " +
              fmt(elapsed, 3) + "s (budget " + fmt(capacity_budget_s) + "s)"};
}

// (g) ------------------------------------------------------------------------

RunConfig transfer_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.model.d = 32;
  c.pretrain.epochs = 5;
  c.pretrain.batch_size = 8;
  c.pretrain.lr = 1e-3;
  c.finetune.epochs = 20;
  c.finetune.batch_size = 4;
  c.finetune.lr = 1e-3;
  return c;
}

Verdict transfer_criterion() {
  const auto t0 = Clock::now();
  int wins = 0, more_skips = 0;
  std::string detail;
  for (int s = 0; s < transfer_seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const RunConfig c = transfer_config(seed);
    const auto aligned = as_tasks(synth_bundle("aligned", transfer_train_size, seed));
    const auto conflict = as_tasks(synth_bundle("conflict", transfer_train_size, seed));
    const auto pre = pretrain(c, {aligned[0], aligned[1]});
    const double transfer = finetune(c, pre.checkpoint, aligned[2]).best_dev;
    const double scratch = finetune(c, std::nullopt, aligned[2]).best_dev;
    const auto pre_conflict = pretrain(c, {conflict[0], conflict[1]});
    const bool win = transfer > scratch;
    const bool skips = pre_conflict.skip_rate() > 0 && pre_conflict.skip_rate() > pre.skip_rate();
    wins += win ? 1 : 0;
    more_skips += skips ? 1 : 0;
    detail += "seed " + std::to_string(s) + ": dev F1 " + fmt(transfer, 3) + " vs " + fmt(scratch, 3) + ", skip " +
              fmt(pre_conflict.skip_rate(), 3) + " vs " + fmt(pre.skip_rate(), 3) + "; ";
  }
  detail += "transfer wins " + std::to_string(wins) + "/" + std::to_string(transfer_seeds) + ", conflict skips more " +
            std::to_string(more_skips) + "/" + std::to_string(transfer_seeds) + " (need " +
            std::to_string(transfer_wins_needed) + "), " + fmt(seconds_since(t0), 3) + "s";
  return {wins >= transfer_wins_needed && more_skips >= transfer_wins_needed, detail};
}

// (h) ------------------------------------------------------------------------

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string quoted(const std::string& s) { return "'" + s + "'"; }

// Full pipeline (synth, pretrain, finetune, eval) in `dir` through the CLI.
int run_pipeline(const std::string& cli, const std::filesystem::path& dir) {
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "run.json") << R"({"seed": 21, "model": {"d": 16, "d_ff": 32, "dropout": 0.1},
 "pretrain": {"epochs": 2, "batch_size": 8, "gate": "group"},
 "finetune": {"epochs": 3, "batch_size": 4},
 "data": {"sources": ["data/aligned_a/manifest.json", "data/aligned_b/manifest.json"],
          "target": "data/aligned_target/manifest.json"}})";
  const std::string t = quoted(cli);
  const std::string cmd = "cd " + quoted(dir.string()) + " && TIE_LOG=warn " + t +
                          " synth aligned 60 --seed 21 --out data >/dev/null && TIE_LOG=warn " + t +
                          " pretrain --config run.json --out pre >/dev/null && TIE_LOG=warn " + t +
                          " finetune --config run.json --checkpoint pre/checkpoint.tie --out ft >/dev/null && "
                          "TIE_LOG=warn " + t + " eval --checkpoint ft/checkpoint.tie --split test --out ev >/dev/null";
  return std::system(cmd.c_str());
}

Verdict reproducibility_criterion(const std::string& cli) {
  if (cli.empty()) return {false, "needs --cli"};
  const auto base = std::filesystem::temp_directory_path() / "tie_acceptance_repro";
  const int a = run_pipeline(cli, base / "first");
  const int b = run_pipeline(cli, base / "second");
  if (a != 0 || b != 0) return {false, "pipeline exit codes " + std::to_string(a) + ", " + std::to_string(b)};
  int files = 0, differing = 0;
  std::string first_diff;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(base / "first")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), base / "first");
    ++files;
    if (read_bytes(entry.path()) != read_bytes(base / "second" / rel)) {
      if (differing++ == 0) first_diff = rel.string();
    }
  }
  const bool key_files = std::filesystem::exists(base / "first/pre/checkpoint.tie") &&
                         std::filesystem::exists(base / "first/ft/checkpoint.tie") &&
                         std::filesystem::exists(base / "first/ev/metrics.json");
  std::filesystem::remove_all(base);
  std::string detail = std::to_string(files) + " files compared (checkpoints, metric JSON, logs, data), " +
                       std::to_string(differing) + " differ";
  if (differing) detail += " (first: " + first_diff + ")";
  return {key_files && differing == 0 && files > 0, detail};
}

Verdict cli_gradcheck(const std::string& cli) {
  const auto dir = std::filesystem::temp_directory_path() / "tie_acceptance_gradcheck";
  const auto t0 = Clock::now();
  const int code = std::system((quoted(cli) + " gradcheck --out " + quoted(dir.string()) + " >/dev/null").c_str());
  const double elapsed = seconds_since(t0);
  std::string worst = "?";
  try {
    std::ifstream in(dir / "gradcheck.json");
    worst = fmt(nlohmann::json::parse(in).at("max_error").get<double>(), 3);
  } catch (const std::exception&) {
  }
  std::filesystem::remove_all(dir);
  return {code == 0 && elapsed < gradcheck_budget_s,
          "tie gradcheck exit " + std::to_string(code) + ", max rel err " + worst + ", " + fmt(elapsed, 3) + "s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only = "abcdefgh";
  std::string cli;
  app.add_option("--only", only, "criteria letters to run");
  app.add_option("--cli", cli, "path of the tie executable (criterion h)");
  CLI11_PARSE(app, argc, argv);
  if (!cli.empty()) cli = std::filesystem::absolute(cli).string();

  struct Criterion {
    char id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {'a', "gradcheck",
       [&] {
         Verdict oracle = gradcheck_criterion();
         if (cli.empty()) return Verdict{false, oracle.detail + "; needs --cli"};
         const Verdict command = cli_gradcheck(cli);
         return Verdict{oracle.pass && command.pass, oracle.detail + "; " + command.detail};
       }},
      {'b', "codec round trip", codec_criterion},
      {'c', "gradient-sign gate", gate_criterion},
      {'d', "scheduler", scheduler_criterion},
      {'e', "metrics", metrics_criterion},
      {'f', "capacity", capacity_criterion},
      {'g', "transfer and conflict", transfer_criterion},
      {'h', "reproducibility", [&] { return reproducibility_criterion(cli); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (only.find(c.id) == std::string::npos) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("[%c] %-22s %s  %s\n", c.id, c.name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
