// tie: instructed table-filling information extraction.
//
//   tie synth KIND SIZE --seed N --out DIR
//   tie pretrain --config run.json [--seed N] [--out DIR]
//   tie finetune --config run.json [--checkpoint pre.tie] [--out DIR]
//   tie eval --checkpoint ft.tie [--config run.json] [--split dev] [--threshold T] [--out DIR]
//   tie eval --config run.json --split dev PREDICTIONS.jsonl
//   tie decode --checkpoint ft.tie INPUT.jsonl [--out DIR]
//   tie gradcheck [--config run.json] [--seed N] [--out DIR]
//
// Logs go to stderr as JSON lines (TIE_LOG=debug|info|warn), tables to
// stdout. Every command writes its artifacts, the effective config and an
// outputs.json listing under the output directory.

#include "tie/checkpoint.hpp"
#include "tie/gradcheck.hpp"
#include "tie/log.hpp"
#include "tie/synth.hpp"
#include "tie/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tie;

namespace {

constexpr int exit_failed = 1;
constexpr int exit_bad_config = 2;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::string out;
  std::string checkpoint;
  std::string split = "dev";
  std::vector<std::string> inputs;
};

/// Output directory that remembers what was written to it.
class OutDir {
 public:
  explicit OutDir(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  void text(const std::string& name, const std::string& content) {
    const fs::path path = root_ / name;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    files_.push_back(name);
  }
  void checkpoint(const std::string& name, const CheckpointFile& file) {
    write_checkpoint(root_ / name, file);
    files_.push_back(name);
  }
  void adopt(const std::string& name) { files_.push_back(name); }
  fs::path path(const std::string& name) const { return root_ / name; }

  void finish(const std::string& command) {
    std::sort(files_.begin(), files_.end());
    json listing = json::array();
    for (const auto& f : files_) listing.push_back({{"path", f}, {"bytes", fs::file_size(root_ / f)}});
    text("outputs.json", json{{"command", command}, {"files", listing}}.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
}

/// base <- config file <- command-line flags, validated.
RunConfig effective_config(const Flags& flags, const json& base = json::object()) {
  json j = base;
  if (!flags.config.empty()) j = merge_config(j, read_json_file(flags.config));
  if (flags.seed) j["seed"] = *flags.seed;
  if (flags.threshold) j["threshold"] = *flags.threshold;
  if (!flags.out.empty()) j["out"] = flags.out;
  RunConfig c;
  try {
    c = RunConfig::from_json(j);
    c.check_paths();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.out.empty()) throw ConfigError("out: missing (set it in the config or pass --out)");
  return c;
}

std::string jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

CheckpointFile require_checkpoint(const Flags& flags) {
  if (flags.checkpoint.empty()) throw ConfigError("--checkpoint: required");
  return read_checkpoint(flags.checkpoint);
}

std::vector<TaskData> load_sources(const RunConfig& c) {
  std::vector<TaskData> out;
  for (const auto& path : c.data.sources) out.push_back(load_task(path, c.data.max_len, c.data.instructions));
  return out;
}

TaskData load_target(const RunConfig& c) {
  if (c.data.target.empty()) throw ConfigError("data.target: missing");
  return load_task(c.data.target, c.data.max_len, c.data.instructions);
}

std::string two_columns(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  std::ostringstream s;
  for (const auto& [k, v] : rows) s << k << std::string(width - k.size() + 2, ' ') << v << "\n";
  return s.str();
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Flags& flags) {
  if (flags.inputs.size() != 2) throw ConfigError("synth: expected KIND SIZE");
  const std::string& kind = flags.inputs[0];
  int size = 0;
  try {
    size = std::stoi(flags.inputs[1]);
  } catch (const std::exception&) {
    throw ConfigError("size: expected an integer, got '" + flags.inputs[1] + "'");
  }
  if (!flags.seed) throw ConfigError("seed: missing (a seed is mandatory)");
  if (flags.out.empty()) throw ConfigError("out: missing (pass --out)");
  std::vector<SynthTask> tasks;
  try {
    tasks = synth_bundle(kind, size, *flags.seed);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  OutDir out(flags.out);
  const auto manifests = write_synth(flags.out, tasks);
  std::vector<std::pair<std::string, std::string>> rows{{"dataset", "task  train  dev  test"}};
  for (const auto& t : tasks) {
    for (const char* f : {"manifest.json", "train.jsonl", "dev.jsonl", "test.jsonl", "instructions.json"})
      out.adopt(t.dataset.id + "/" + f);
    rows.push_back({t.dataset.id, to_string(t.dataset.task) + "  " + std::to_string(t.dataset.train.size()) + "  " +
                                      std::to_string(t.dataset.dev.size()) + "  " +
                                      std::to_string(t.dataset.test.size())});
  }
  out.text("config.json", json{{"kind", kind}, {"size", size}, {"seed", *flags.seed}}.dump(2) + "\n");
  out.finish("synth");
  std::cout << two_columns(rows);
  return 0;
}

int cmd_pretrain(const Flags& flags) {
  const RunConfig c = effective_config(flags);
  OutDir out(c.out);
  out.text("config.json", c.to_json().dump(2) + "\n");
  std::vector<json> steps;
  const PretrainResult r = pretrain(c, load_sources(c), [&](const StepReport& s) { steps.push_back(s.to_json()); });
  out.checkpoint("checkpoint.tie", r.checkpoint);
  out.text("steps.jsonl", jsonl(steps));
  out.text("dev_metrics.jsonl", jsonl(r.dev_metrics));
  const json summary = {{"steps", steps.size()},
                        {"gated_decisions", r.gated_decisions},
                        {"skipped_decisions", r.skipped_decisions},
                        {"skip_rate", r.skip_rate()},
                        {"repeats", r.repeats}};
  out.text("summary.json", summary.dump(2) + "\n");
  out.finish("pretrain");

  std::vector<std::pair<std::string, std::string>> rows{{"steps", std::to_string(steps.size())},
                                                        {"skip rate", fixed(r.skip_rate())},
                                                        {"tail repeats", std::to_string(r.repeats)}};
  for (const auto& m : r.dev_metrics)
    rows.push_back({"epoch " + std::to_string(m.at("epoch").get<int>()) + " " + m.at("dataset").get<std::string>() +
                        " dev F1",
                    fixed(m.at("headline").get<double>())});
  std::cout << two_columns(rows);
  return 0;
}

int cmd_finetune(const Flags& flags) {
  const RunConfig c = effective_config(flags);
  std::optional<CheckpointFile> from;
  if (!flags.checkpoint.empty()) from = read_checkpoint(flags.checkpoint);
  TaskData target = load_target(c);
  OutDir out(c.out);
  out.text("config.json", c.to_json().dump(2) + "\n");
  std::vector<json> steps;
  const FinetuneResult r = finetune(c, from, std::move(target), [&](const StepReport& s) { steps.push_back(s.to_json()); });
  out.checkpoint("checkpoint.tie", r.checkpoint);
  out.text("steps.jsonl", jsonl(steps));
  std::vector<json> curve;
  for (std::size_t e = 0; e < r.dev_curve.size(); ++e) curve.push_back({{"epoch", e + 1}, {"headline", r.dev_curve[e]}});
  out.text("dev_metrics.jsonl", jsonl(curve));
  out.text("summary.json", json{{"steps", steps.size()},
                                {"best_epoch", r.best_epoch},
                                {"best_dev", r.best_dev},
                                {"from_checkpoint", from.has_value()}}
                               .dump(2) +
                               "\n");
  out.finish("finetune");
  std::vector<std::pair<std::string, std::string>> rows{{"steps", std::to_string(steps.size())},
                                                        {"best epoch", std::to_string(r.best_epoch)},
                                                        {"best dev F1", fixed(r.best_dev)}};
  std::cout << two_columns(rows);
  return 0;
}

int cmd_eval(const Flags& flags) {
  if (flags.split != "train" && flags.split != "dev" && flags.split != "test")
    throw ConfigError("--split: expected train, dev or test");
  std::optional<CheckpointFile> ckpt;
  json base = json::object();
  if (flags.inputs.empty()) {
    ckpt = require_checkpoint(flags);
    base = ckpt->header.at("config");
  } else if (flags.inputs.size() > 1) {
    throw ConfigError("eval: at most one predictions file");
  }
  const RunConfig c = effective_config(flags, base);
  const TaskData task = load_target(c);
  const auto& gold = task.dataset.split(flags.split);

  json result;
  ScoreReport report;
  double headline = 0.0;
  OutDir out(c.out);
  if (ckpt) {
    const LoadedModel loaded = load_model(*ckpt);
    const Evaluation ev = evaluate(loaded.model, loaded.vocab, task, gold, c.threshold);
    report = ev.report;
    headline = ev.headline;
    std::vector<json> preds;
    for (std::size_t i = 0; i < gold.size(); ++i) preds.push_back(prediction_to_json(gold[i].tokens, ev.predictions[i]));
    out.text("predictions.jsonl", jsonl(preds));
  } else {
    std::ifstream in(flags.inputs[0]);
    if (!in) throw std::runtime_error("cannot open predictions " + flags.inputs[0]);
    std::vector<Annotations> preds, golds;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ++n;
      if (n > gold.size()) break;
      Instance p;
      try {
        p = instance_from_json(json::parse(line));
      } catch (const std::exception& e) {
        throw std::runtime_error(flags.inputs[0] + " line " + std::to_string(n) + ": " + e.what());
      }
      if (p.tokens != gold[n - 1].tokens)
        throw std::runtime_error(flags.inputs[0] + " line " + std::to_string(n) + ": tokens differ from the gold sentence");
      preds.push_back(annotations(p));
      golds.push_back(annotations(gold[n - 1]));
    }
    if (n != gold.size())
      throw std::runtime_error(flags.inputs[0] + ": " + std::to_string(n) + " predictions for " +
                               std::to_string(gold.size()) + " gold sentences");
    report.add(task.dataset.id, task.dataset.task, preds, golds);
    headline = headline_f1(task.dataset.task, report.per_dataset[task.dataset.id]);
  }
  result = {{"dataset", task.dataset.id},
            {"split", flags.split},
            {"threshold", c.threshold},
            {"headline", headline},
            {"report", report.to_json()}};
  out.text("config.json", c.to_json().dump(2) + "\n");
  out.text("metrics.json", result.dump(2) + "\n");
  out.finish("eval");
  std::cout << report.table();
  return 0;
}

int cmd_decode(const Flags& flags) {
  if (flags.inputs.size() != 1) throw ConfigError("decode: expected one input JSONL file");
  const CheckpointFile ckpt = require_checkpoint(flags);
  const RunConfig c = effective_config(flags, ckpt.header.at("config"));
  const LoadedModel loaded = load_model(ckpt);
  TaskData task;
  if (!c.data.target.empty()) {
    task = load_target(c);
  } else if (loaded.tasks.size() == 1) {
    task = loaded.tasks.front();
  } else {
    throw ConfigError("data.target: missing (the checkpoint holds " + std::to_string(loaded.tasks.size()) +
                      " datasets, name the one to decode)");
  }
  std::ifstream in(flags.inputs[0]);
  if (!in) throw std::runtime_error("cannot open " + flags.inputs[0]);
  std::vector<Instance> sentences;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Instance x;
      x.tokens = j.contains("tokens") ? j.at("tokens").get<std::vector<std::string>>()
                                      : split_whitespace(j.at("text").get<std::string>());
      if (x.tokens.empty()) throw std::invalid_argument("empty sentence");
      if (static_cast<int>(x.tokens.size()) > loaded.model.config().max_len)
        throw std::invalid_argument("sentence longer than model.max_len");
      sentences.push_back(std::move(x));
    } catch (const std::exception& e) {
      throw std::runtime_error(flags.inputs[0] + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  const Evaluation ev = evaluate(loaded.model, loaded.vocab, task, sentences, c.threshold);
  std::vector<json> preds;
  for (std::size_t i = 0; i < sentences.size(); ++i)
    preds.push_back(prediction_to_json(sentences[i].tokens, ev.predictions[i]));
  OutDir out(c.out);
  out.text("config.json", c.to_json().dump(2) + "\n");
  out.text("predictions.jsonl", jsonl(preds));
  out.finish("decode");
  std::cout << two_columns({{"sentences", std::to_string(sentences.size())}, {"dataset", task.dataset.id}});
  return 0;
}

int cmd_gradcheck(const Flags& flags) {
  json model = gradcheck_model_config().to_json();
  std::uint64_t seed = flags.seed.value_or(0);
  if (!flags.config.empty()) {
    const json j = read_json_file(flags.config);
    if (j.contains("model")) model = merge_config(model, j.at("model"));
    if (!flags.seed && j.contains("seed") && j.at("seed").is_number_unsigned()) seed = j.at("seed").get<std::uint64_t>();
  }
  ModelConfig mc;
  try {
    mc = ModelConfig::from_json(model, "model");
    mc.validate("model");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::string out_dir = flags.out.empty() ? "gradcheck" : flags.out;
  std::vector<json> runs;
  std::vector<std::pair<std::string, std::string>> rows;
  bool passed = true;
  double worst = 0.0;
  for (int length = 1; length <= std::min(6, mc.max_len); ++length)
    for (int k = 1; k <= std::min(5, mc.max_instr_len); ++k) {
      GradcheckOptions o;
      o.length = length;
      o.channels = k;
      o.instruction_length = std::min(mc.max_instr_len, std::max(k, 10));
      o.seed = derive_seed(seed, static_cast<std::uint64_t>(length * 16 + k));
      const GradcheckReport r = gradcheck(mc, o);
      passed = passed && r.passed;
      worst = std::max(worst, r.max_error);
      json row = r.to_json();
      row["length"] = length;
      row["channels"] = k;
      runs.push_back(row);
      rows.push_back({"|x|=" + std::to_string(length) + " K=" + std::to_string(k),
                      (r.passed ? "ok    " : "FAIL  ") + fixed(r.max_error, 8) + "  " + r.worst_parameter});
      log_event(LogLevel::debug, "gradcheck", row);
    }
  OutDir out(out_dir);
  out.text("config.json", json{{"seed", seed}, {"model", mc.to_json()}}.dump(2) + "\n");
  out.text("gradcheck.json", json{{"passed", passed}, {"max_error", worst}, {"tolerance", GradcheckOptions{}.tolerance},
                                   {"runs", runs}}
                                  .dump(2) +
                                  "\n");
  out.finish("gradcheck");
  rows.push_back({"result", std::string(passed ? "pass" : "FAIL") + "  max rel err " + fixed(worst, 8)});
  std::cout << two_columns(rows);
  return passed ? 0 : exit_failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tie: instructed table-filling information extraction"};
  app.require_subcommand(1);
  Flags flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "run configuration (JSON)");
    sub->add_option("--seed", flags.seed, "overrides the config seed");
    sub->add_option("--threshold", flags.threshold, "decoding threshold in (0, 1)");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--checkpoint", flags.checkpoint, "checkpoint file");
    sub->add_option("--split", flags.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
    sub->add_option("inputs", flags.inputs, "positional inputs");
  };
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate synthetic datasets: synth KIND SIZE"},
      {"pretrain", "multi-source pretraining with the gradient-sign gate"},
      {"finetune", "finetune on the target dataset"},
      {"eval", "score a checkpoint or a predictions file"},
      {"decode", "predict structures for a JSONL file of sentences"},
      {"gradcheck", "compare gradients against finite differences"},
  };
  for (const auto& [name, help] : commands) common(app.add_subcommand(name, help));
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "synth") return cmd_synth(flags);
    if (command == "pretrain") return cmd_pretrain(flags);
    if (command == "finetune") return cmd_finetune(flags);
    if (command == "eval") return cmd_eval(flags);
    if (command == "decode") return cmd_decode(flags);
    return cmd_gradcheck(flags);
  } catch (const ConfigError& e) {
    log_event(LogLevel::warn, "invalid_config", {{"command", command}, {"error", e.what()}});
    std::cerr << "tie " << command << ": " << e.what() << "\n";
    return exit_bad_config;
  } catch (const std::exception& e) {
    log_event(LogLevel::warn, "failed", {{"command", command}, {"error", e.what()}});
    std::cerr << "tie " << command << ": " << e.what() << "\n";
    return exit_failed;
  }
}
