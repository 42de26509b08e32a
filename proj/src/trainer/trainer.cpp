#include "tie/trainer.hpp"

#include "tie/log.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>

namespace tie {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw std::invalid_argument(path + ": " + what);
}

std::string join_path(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

const json& member(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) config_error(join_path(path, key), "missing");
  return obj.at(key);
}

void reject_unknown(const json& obj, const json& known, const std::string& path) {
  if (!obj.is_object()) config_error(path, "expected an object");
  for (const auto& [key, value] : obj.items())
    if (!known.contains(key)) config_error(path.empty() ? key : path + "." + key, "unknown field");
}

int read_int(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_number_integer()) config_error(join_path(path, key), "expected an integer");
  return v.get<int>();
}

double read_real(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_number()) config_error(join_path(path, key), "expected a number");
  return v.get<double>();
}

bool read_bool(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_boolean()) config_error(join_path(path, key), "expected true or false");
  return v.get<bool>();
}

std::string read_string(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_string()) config_error(join_path(path, key), "expected a string");
  return v.get<std::string>();
}

}  // namespace

json merge_config(const json& base, const json& overrides) {
  if (!base.is_object() || !overrides.is_object()) return overrides;
  json out = base;
  for (const auto& [key, value] : overrides.items())
    out[key] = out.contains(key) ? merge_config(out[key], value) : value;
  return out;
}

namespace {

void validate_phase(const TrainConfig& t, const std::string& path) {
  if (t.epochs < 1) config_error(path + ".epochs", "must be >= 1");
  if (t.batch_size < 1) config_error(path + ".batch_size", "must be >= 1");
  if (!(t.lr > 0.0) || !std::isfinite(t.lr)) config_error(path + ".lr", "must be a positive finite number");
  if (t.max_steps < 0) config_error(path + ".max_steps", "must be >= 0");
}

json phase_json(const TrainConfig& t, bool pretraining) {
  json j = {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr}, {"max_steps", t.max_steps}};
  if (pretraining)
    j["gate"] = tie::to_string(t.gate);
  else
    j["reset_optimizer"] = t.reset_optimizer;
  return j;
}

TrainConfig read_phase(const json& j, const json& known, const std::string& path, bool pretraining) {
  reject_unknown(j, known, path);
  TrainConfig t;
  t.epochs = read_int(j, path, "epochs");
  t.batch_size = read_int(j, path, "batch_size");
  t.lr = read_real(j, path, "lr");
  const json& steps = member(j, path, "max_steps");
  if (!steps.is_number_integer()) config_error(path + ".max_steps", "expected an integer");
  t.max_steps = steps.get<std::int64_t>();
  if (pretraining) {
    const std::string gate = read_string(j, path, "gate");
    try {
      t.gate = parse_gate_mode(gate);
    } catch (const std::invalid_argument& e) {
      config_error(path + ".gate", e.what());
    }
  } else {
    t.reset_optimizer = read_bool(j, path, "reset_optimizer");
  }
  return t;
}

}  // namespace

void RunConfig::validate() const {
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 3;  // filled in from the vocabulary
  m.validate("model");
  validate_phase(pretrain, "pretrain");
  validate_phase(finetune, "finetune");
  if (!(threshold > 0.0 && threshold < 1.0)) config_error("threshold", "must lie in (0, 1)");
  if (data.max_len < 1) config_error("data.max_len", "must be >= 1");
  if (data.max_len > model.max_len)
    config_error("data.max_len", "exceeds model.max_len (" + std::to_string(model.max_len) + ")");
  if (data.min_count < 1) config_error("data.min_count", "must be >= 1");
}

void RunConfig::check_paths() const {
  auto need = [](const std::string& path, const std::string& field) {
    if (!path.empty() && !std::filesystem::exists(path)) config_error(field, "no such file: " + path);
  };
  for (std::size_t i = 0; i < data.sources.size(); ++i) need(data.sources[i], "data.sources[" + std::to_string(i) + "]");
  need(data.target, "data.target");
  for (const auto& [id, path] : data.instructions) need(path, "data.instructions." + id);
}

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"model", model.to_json()},
          {"pretrain", phase_json(pretrain, true)},
          {"finetune", phase_json(finetune, false)},
          {"threshold", threshold},
          {"data",
           {{"sources", data.sources},
            {"target", data.target},
            {"instructions", data.instructions},
            {"max_len", data.max_len},
            {"min_count", data.min_count},
            {"lowercase", data.lowercase}}},
          {"out", out}};
}

RunConfig RunConfig::from_json(const json& overrides) {
  const json defaults = RunConfig{}.to_json();
  reject_unknown(overrides, defaults, "");
  if (!overrides.contains("seed")) config_error("seed", "missing (a seed is mandatory)");
  const json j = merge_config(defaults, overrides);
  RunConfig c;
  const json& seed = j.at("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
    config_error("seed", "expected a non-negative integer");
  c.seed = seed.get<std::uint64_t>();

  reject_unknown(j.at("model"), defaults.at("model"), "model");
  c.model = ModelConfig::from_json(j.at("model"), "model");
  c.pretrain = read_phase(j.at("pretrain"), defaults.at("pretrain"), "pretrain", true);
  c.finetune = read_phase(j.at("finetune"), defaults.at("finetune"), "finetune", false);
  c.threshold = read_real(j, "", "threshold");

  const json& d = j.at("data");
  reject_unknown(d, defaults.at("data"), "data");
  const json& sources = member(d, "data", "sources");
  if (!sources.is_array()) config_error("data.sources", "expected an array of paths");
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (!sources[i].is_string()) config_error("data.sources[" + std::to_string(i) + "]", "expected a string");
    c.data.sources.push_back(sources[i].get<std::string>());
  }
  c.data.target = read_string(d, "data", "target");
  const json& instr = member(d, "data", "instructions");
  if (!instr.is_object()) config_error("data.instructions", "expected an object of dataset id -> path");
  for (const auto& [id, path] : instr.items()) {
    if (!path.is_string()) config_error("data.instructions." + id, "expected a string");
    c.data.instructions[id] = path.get<std::string>();
  }
  c.data.max_len = read_int(d, "data", "max_len");
  c.data.min_count = read_int(d, "data", "min_count");
  c.data.lowercase = read_bool(d, "data", "lowercase");
  c.out = read_string(j, "", "out");
  c.validate();
  return c;
}

std::string default_template(const LabelSpace& labels) {
  std::string text = "extract the following labels :";
  for (int c = 0; c < labels.size(); ++c) text += (c ? " , {" : " {") + labels.name(c) + "}";
  return text + " .";
}

TaskData load_task(const std::filesystem::path& manifest, int max_len,
                   const std::map<std::string, std::string>& instructions) {
  TaskData t;
  t.dataset = load_dataset(manifest, LoadOptions{max_len});
  if (const auto it = instructions.find(t.dataset.id); it != instructions.end()) t.dataset.instructions = it->second;
  if (t.dataset.instructions) {
    const auto file = read_instruction_file(*t.dataset.instructions);
    if (file.dataset != t.dataset.id)
      throw std::invalid_argument(t.dataset.instructions->string() + ": instructions are for dataset '" +
                                  file.dataset + "', manifest says '" + t.dataset.id + "'");
    t.templates = file.templates;
  } else {
    t.templates = {default_template(t.dataset.labels)};
  }
  InstructionPool check;
  check.add(t.dataset.id, t.dataset.labels, t.templates);
  return t;
}

json task_to_json(const TaskData& task) {
  return {{"id", task.dataset.id},
          {"task", to_string(task.dataset.task)},
          {"entity_types", task.dataset.labels.entity_types()},
          {"relation_types", task.dataset.labels.relation_types()},
          {"templates", task.templates}};
}

TaskData task_from_json(const json& j) {
  TaskData t;
  t.dataset.id = j.at("id").get<std::string>();
  t.dataset.task = parse_task_kind(j.at("task").get<std::string>());
  t.dataset.labels = LabelSpace(j.at("entity_types").get<std::vector<std::string>>(),
                                j.at("relation_types").get<std::vector<std::string>>());
  t.templates = j.at("templates").get<std::vector<std::string>>();
  return t;
}

Vocabulary build_vocabulary(const std::vector<TaskData>& tasks, int min_count, bool lowercase) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& t : tasks) {
    for (const auto& x : t.dataset.train) corpus.push_back(x.tokens);
    for (const auto& tpl : t.templates)
      corpus.push_back(parse_template(tpl, t.dataset.labels, t.dataset.id, 1 << 20).tokens);
  }
  return Vocabulary::build(corpus, min_count, lowercase);
}

Tensor pair_loss(const Tensor& logits, const GoldMatrix& gold) { return bce_with_logits(logits, gold.as_tensor()); }

namespace {

constexpr std::uint64_t instruction_stream = 11;
constexpr std::uint64_t dropout_stream = 12;
constexpr std::uint64_t plan_stream = 1000;
constexpr std::uint64_t init_stream = 1;
constexpr std::uint64_t head_stream = 2;

std::vector<std::string> channels_of(const TaskData& t) { return t.dataset.labels.channels(); }

}  // namespace

Trainer::Trainer(Model model, Vocabulary vocab, std::vector<TaskData> tasks, RunConfig config, PlanMode mode)
    : model_(std::move(model)), vocab_(std::move(vocab)), tasks_(std::move(tasks)), config_(std::move(config)),
      mode_(mode) {
  config_.model = model_.config();
  config_.validate();
  if (tasks_.empty()) throw std::invalid_argument("trainer needs at least one dataset");
  if (mode_ == PlanMode::pretrain && tasks_.size() < 2)
    throw std::invalid_argument("pretraining needs at least 2 source datasets, got " + std::to_string(tasks_.size()));
  if (mode_ == PlanMode::finetune && tasks_.size() != 1)
    throw std::invalid_argument("finetuning takes exactly 1 target dataset");
  if (model_.config().vocab_size != vocab_.size())
    throw std::invalid_argument("model vocabulary size " + std::to_string(model_.config().vocab_size) +
                                " does not match the vocabulary (" + std::to_string(vocab_.size()) + ")");
  prepare();
  optimizer_ = Adam(model_.params(), AdamConfig{phase().lr});
  state_.instruction_rng = Rng(derive_seed(config_.seed, instruction_stream));
  state_.dropout_rng = Rng(derive_seed(config_.seed, dropout_stream));
}

void Trainer::prepare() {
  std::set<std::string> ids;
  for (const auto& t : tasks_) {
    if (!ids.insert(t.dataset.id).second) throw std::invalid_argument("dataset id " + t.dataset.id + " appears twice");
    if (t.dataset.train.empty()) throw std::invalid_argument("dataset " + t.dataset.id + " has no training data");
    pools_.emplace_back();
    pools_.back().add(t.dataset.id, t.dataset.labels, t.templates, model_.config().max_instr_len);
    columns_.push_back(model_.channel_columns(channels_of(t)));
    std::vector<std::vector<int>> ids_per;
    std::vector<GoldMatrix> golds;
    int collisions = 0;
    for (const auto& x : t.dataset.train) {
      if (static_cast<int>(x.tokens.size()) > model_.config().max_len)
        throw std::invalid_argument("dataset " + t.dataset.id + " holds a sentence longer than model.max_len");
      ids_per.push_back(vocab_.encode(x.tokens));
      golds.push_back(encode(x, t.dataset.labels));
      collisions += golds.back().collisions;
    }
    if (collisions > 0)
      log_event(LogLevel::warn, "encode_collisions", {{"dataset", t.dataset.id}, {"cells", collisions}});
    token_ids_.push_back(std::move(ids_per));
    golds_.push_back(std::move(golds));
  }
}

void Trainer::make_plan() {
  if (planned_epoch_ == state_.epoch) return;
  std::vector<DatasetSize> sizes;
  for (const auto& t : tasks_) sizes.push_back({t.dataset.id, static_cast<int>(t.dataset.train.size())});
  Rng rng(derive_seed(config_.seed, plan_stream + static_cast<std::uint64_t>(state_.epoch)));
  plan_ = plan_epoch(sizes, phase().batch_size, rng, mode_, mode_ == PlanMode::pretrain ? previous_dataset_ : "");
  planned_epoch_ = state_.epoch;
}

const TrainConfig& Trainer::phase() const {
  return mode_ == PlanMode::pretrain ? config_.pretrain : config_.finetune;
}

bool Trainer::finished() const {
  if (phase().max_steps > 0 && state_.step >= phase().max_steps) return true;
  return state_.epoch >= phase().epochs;
}

StepReport Trainer::step() {
  if (finished()) throw std::logic_error("training already finished");
  make_plan();
  const Batch& batch = plan_.batches.at(static_cast<std::size_t>(state_.batch));
  std::size_t task = 0;
  while (tasks_[task].dataset.id != batch.dataset) ++task;

  auto& params = model_.params();
  params.zero_grad();
  const RunMode run{true, &state_.dropout_rng};
  Tensor total;
  for (int i : batch.indices) {
    const auto& ins = pools_[task].select(batch.dataset, state_.instruction_rng);
    const ModelInput input{token_ids_[task][static_cast<std::size_t>(i)], ins.token_ids(vocab_), ins.slot_index,
                           columns_[task]};
    const Tensor loss = pair_loss(model_.forward(input, run).logits, golds_[task][static_cast<std::size_t>(i)]);
    total = total.defined() ? add(total, loss) : loss;
  }
  const Tensor loss = scale(total, 1.0 / static_cast<double>(batch.indices.size()));
  backward(loss);
  std::vector<Matrix> grads;
  grads.reserve(params.entries().size());
  for (const auto& e : params.entries()) grads.push_back(e.tensor.grad());
  params.zero_grad();

  StepReport report = gated_step(params, snapshot_, grads, optimizer_,
                                 mode_ == PlanMode::pretrain ? phase().gate : GateMode::off);
  report.step = ++state_.step;
  report.epoch = state_.epoch;
  report.batch = state_.batch;
  report.dataset = batch.dataset;
  report.loss = loss.item();
  report.repeated_dataset = mode_ == PlanMode::pretrain && batch.dataset == previous_dataset_;
  if (report.repeated_dataset)
    log_event(LogLevel::info, "repeated_dataset", {{"step", report.step}, {"dataset", batch.dataset}});
  previous_dataset_ = batch.dataset;

  epoch_completed_ = false;
  if (++state_.batch == static_cast<int>(plan_.batches.size())) {
    state_.batch = 0;
    ++state_.epoch;
    epoch_completed_ = true;
  }
  return report;
}

CheckpointFile Trainer::checkpoint() const {
  CheckpointFile file;
  RunConfig config = config_;
  config.model = model_.config();
  config.out.clear();  // where a run was written is not part of the model
  json tasks = json::array();
  for (const auto& t : tasks_) tasks.push_back(task_to_json(t));
  file.header = {{"kind", "tie-checkpoint"},
                 {"config", config.to_json()},
                 {"head_channels", model_.head_channels()},
                 {"vocab", vocab_.to_json()},
                 {"tasks", tasks},
                 {"state",
                  {{"mode", mode_ == PlanMode::pretrain ? "pretrain" : "finetune"},
                   {"step", state_.step},
                   {"epoch", state_.epoch},
                   {"batch", state_.batch},
                   {"previous_dataset", previous_dataset_},
                   {"instruction_rng", state_.instruction_rng.state()},
                   {"dropout_rng", state_.dropout_rng.state()},
                   {"snapshot_ready", snapshot_.ready},
                   {"adam_steps", optimizer_.steps()}}}};
  const auto& entries = model_.params().entries();
  for (const auto& e : entries) file.tensors.push_back({"param/" + e.name, e.tensor.shape(), e.tensor.value()});
  for (std::size_t i = 0; i < entries.size(); ++i)
    file.tensors.push_back({"adam.m/" + entries[i].name, entries[i].tensor.shape(), optimizer_.first_moments()[i]});
  for (std::size_t i = 0; i < entries.size(); ++i)
    file.tensors.push_back({"adam.v/" + entries[i].name, entries[i].tensor.shape(), optimizer_.second_moments()[i]});
  if (snapshot_.ready)
    for (std::size_t i = 0; i < entries.size(); ++i)
      file.tensors.push_back({"snapshot/" + entries[i].name, entries[i].tensor.shape(), snapshot_.grads[i]});
  return file;
}

LoadedModel load_model(const CheckpointFile& file) {
  const json& h = file.header;
  if (h.value("kind", "") != "tie-checkpoint") throw CheckpointError("header is not a model checkpoint");
  LoadedModel out;
  out.config = RunConfig::from_json(h.at("config"));
  out.vocab = Vocabulary::from_json(h.at("vocab"));
  out.model = Model(out.config.model, h.at("head_channels").get<std::vector<std::string>>(), 0);
  for (auto& e : out.model.params().entries()) {
    const auto& t = file.tensor("param/" + e.name);
    if (t.dims != e.tensor.shape())
      throw CheckpointError("tensor " + e.name + " has dims " + to_string(t.dims) + ", expected " +
                            to_string(e.tensor.shape()));
    e.tensor.mutable_value() = t.value;
  }
  for (const auto& t : h.at("tasks")) out.tasks.push_back(task_from_json(t));
  return out;
}

Trainer Trainer::resume(const CheckpointFile& file, std::vector<TaskData> tasks) {
  LoadedModel loaded = load_model(file);
  const json& s = file.header.at("state");
  const PlanMode mode = s.at("mode") == "pretrain" ? PlanMode::pretrain : PlanMode::finetune;
  if (tasks.size() != loaded.tasks.size())
    throw std::invalid_argument("checkpoint was trained on " + std::to_string(loaded.tasks.size()) + " datasets");
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].dataset.id != loaded.tasks[i].dataset.id)
      throw std::invalid_argument("dataset " + tasks[i].dataset.id + " does not match checkpoint dataset " +
                                  loaded.tasks[i].dataset.id);
  Trainer t(std::move(loaded.model), std::move(loaded.vocab), std::move(tasks), loaded.config, mode);
  t.state_.step = s.at("step").get<std::int64_t>();
  t.state_.epoch = s.at("epoch").get<int>();
  t.state_.batch = s.at("batch").get<int>();
  t.previous_dataset_ = s.at("previous_dataset").get<std::string>();
  t.state_.instruction_rng.set_state(s.at("instruction_rng").get<std::string>());
  t.state_.dropout_rng.set_state(s.at("dropout_rng").get<std::string>());
  t.optimizer_.steps() = s.at("adam_steps").get<std::vector<std::int64_t>>();
  const auto& entries = t.model_.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    t.optimizer_.first_moments()[i] = file.tensor("adam.m/" + entries[i].name).value;
    t.optimizer_.second_moments()[i] = file.tensor("adam.v/" + entries[i].name).value;
  }
  t.snapshot_.ready = s.at("snapshot_ready").get<bool>();
  if (t.snapshot_.ready)
    for (const auto& e : entries) t.snapshot_.grads.push_back(file.tensor("snapshot/" + e.name).value);
  return t;
}

void Trainer::adopt_optimizer(const CheckpointFile& file) {
  const auto& entries = model_.params().entries();
  const json& steps = file.header.at("state").at("adam_steps");
  std::map<std::string, std::size_t> position;
  for (const auto& t : file.tensors)
    if (t.name.rfind("param/", 0) == 0) position.emplace(t.name.substr(6), position.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string& name = entries[i].name;
    if (!file.contains("adam.m/" + name) || file.tensor("adam.m/" + name).dims != entries[i].tensor.shape()) continue;
    optimizer_.first_moments()[i] = file.tensor("adam.m/" + name).value;
    optimizer_.second_moments()[i] = file.tensor("adam.v/" + name).value;
    optimizer_.steps()[i] = steps.at(position.at(name)).get<std::int64_t>();
  }
}

Evaluation evaluate(const Model& model, const Vocabulary& vocab, const TaskData& task,
                    const std::vector<Instance>& split, double threshold) {
  const auto& labels = task.dataset.labels;
  if (task.templates.empty()) throw std::invalid_argument("dataset " + task.dataset.id + " has no instruction");
  const Instruction ins = parse_template(task.templates.front(), labels, task.dataset.id, model.config().max_instr_len);
  const auto columns = model.channel_columns(labels.channels());
  const auto instr_ids = ins.token_ids(vocab);
  Evaluation ev;
  std::vector<Annotations> preds, golds;
  for (const auto& x : split) {
    const Tensor logits = model.forward({vocab.encode(x.tokens), instr_ids, ins.slot_index, columns}).logits;
    const Matrix scores = logits.value().unaryExpr([](double z) {
      return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    });
    // keep scores strictly inside (0, 1) for saturated logits
    const Matrix clamped = scores.cwiseMax(1e-12).cwiseMin(1.0 - 1e-12);
    ev.predictions.push_back(decode(ScoreMatrix(static_cast<int>(x.tokens.size()), clamped), labels,
                                    task.dataset.task, threshold));
    preds.push_back(ev.predictions.back().annotations());
    golds.push_back(annotations(x));
  }
  ev.report.add(task.dataset.id, task.dataset.task, preds, golds);
  ev.headline = headline_f1(task.dataset.task, ev.report.per_dataset[task.dataset.id]);
  return ev;
}

PretrainResult pretrain(const RunConfig& config, std::vector<TaskData> sources, const StepSink& sink) {
  config.validate();
  if (sources.size() < 2)
    throw std::invalid_argument("pretraining needs at least 2 source datasets, got " + std::to_string(sources.size()));
  const Vocabulary vocab = build_vocabulary(sources, config.data.min_count, config.data.lowercase);
  std::vector<std::string> channels;
  for (const auto& s : sources)
    for (const auto& c : channels_of(s))
      if (std::find(channels.begin(), channels.end(), c) == channels.end()) channels.push_back(c);
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  Model model(mc, channels, derive_seed(config.seed, init_stream));
  Trainer trainer(std::move(model), vocab, std::move(sources), config, PlanMode::pretrain);
  PretrainResult result;
  while (!trainer.finished()) {
    const StepReport r = trainer.step();
    if (r.gated) {
      result.gated_decisions += static_cast<std::int64_t>(r.groups.size());
      result.skipped_decisions += r.skipped();
    }
    result.repeats += r.repeated_dataset ? 1 : 0;
    if (sink) sink(r);
    if (!trainer.epoch_completed()) continue;
    for (const auto& t : trainer.tasks()) {
      if (t.dataset.dev.empty()) continue;
      const Evaluation ev = evaluate(trainer.model(), trainer.vocab(), t, t.dataset.dev, config.threshold);
      result.dev_metrics.push_back({{"epoch", trainer.state().epoch},
                                    {"dataset", t.dataset.id},
                                    {"headline", ev.headline},
                                    {"report", ev.report.to_json()}});
      log_event(LogLevel::info, "dev_eval", {{"epoch", trainer.state().epoch}, {"dataset", t.dataset.id}, {"f1", ev.headline}});
    }
  }
  result.checkpoint = trainer.checkpoint();
  log_event(LogLevel::info, "pretrain_done",
            {{"steps", trainer.state().step}, {"skip_rate", result.skip_rate()}, {"repeats", result.repeats}});
  return result;
}

FinetuneResult finetune(const RunConfig& config, const std::optional<CheckpointFile>& from, TaskData target,
                        const StepSink& sink) {
  config.validate();
  RunConfig run = config;
  Vocabulary vocab;
  Model model;
  if (from) {
    LoadedModel loaded = load_model(*from);
    vocab = std::move(loaded.vocab);
    run.model = loaded.model.config();
    model = loaded.model.with_head(channels_of(target), derive_seed(config.seed, head_stream));
  } else {
    vocab = build_vocabulary({target}, config.data.min_count, config.data.lowercase);
    run.model.vocab_size = vocab.size();
    model = Model(run.model, channels_of(target), derive_seed(config.seed, init_stream));
  }
  const std::vector<Instance> dev = target.dataset.dev;
  Trainer trainer(std::move(model), std::move(vocab), {std::move(target)}, run, PlanMode::finetune);
  if (from && !run.finetune.reset_optimizer) trainer.adopt_optimizer(*from);
  FinetuneResult result;
  auto score_epoch = [&] {
    if (dev.empty()) {
      result.best_epoch = trainer.state().epoch;
      result.checkpoint = trainer.checkpoint();
      return;
    }
    const double f1 = evaluate(trainer.model(), trainer.vocab(), trainer.tasks().front(), dev, run.threshold).headline;
    result.dev_curve.push_back(f1);
    log_event(LogLevel::info, "dev_eval", {{"epoch", trainer.state().epoch}, {"f1", f1}});
    if (result.best_epoch < 0 || f1 > result.best_dev) {
      result.best_dev = f1;
      result.best_epoch = trainer.state().epoch;
      result.checkpoint = trainer.checkpoint();
    }
  };
  while (!trainer.finished()) {
    const StepReport r = trainer.step();
    if (sink) sink(r);
    if (trainer.epoch_completed()) score_epoch();
  }
  if (!trainer.epoch_completed()) score_epoch();
  return result;
}

}  // namespace tie
