#include "tie/schema.hpp"

#include "tie/log.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace tie {

using nlohmann::json;

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::ner: return "NER";
    case TaskKind::re: return "RE";
    case TaskKind::ee: return "EE";
    case TaskKind::absa: return "ABSA";
  }
  return "NER";
}

TaskKind parse_task_kind(std::string_view text) {
  const std::string upper = [&] {
    std::string s(text);
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  }();
  if (upper == "NER") return TaskKind::ner;
  if (upper == "RE") return TaskKind::re;
  if (upper == "EE") return TaskKind::ee;
  if (upper == "ABSA") return TaskKind::absa;
  throw std::invalid_argument("unknown task kind '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// LabelSpace

LabelSpace::LabelSpace(std::vector<std::string> entity_types, std::vector<std::string> relation_types)
    : entity_types_(std::move(entity_types)), relation_types_(std::move(relation_types)) {
  names_ = entity_types_;
  names_.insert(names_.end(), relation_types_.begin(), relation_types_.end());
  if (names_.empty()) throw std::invalid_argument("label space needs at least one channel");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw std::invalid_argument("empty label name");
    if (!index_.emplace(names_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate label name '" + names_[i] + "'");
  }
}

LabelSpace LabelSpace::absa() {
  return LabelSpace({"Expression", "Aspect"}, {"Positive", "Negative", "Neutral"});
}

std::optional<int> LabelSpace::find(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int LabelSpace::channel(std::string_view name) const {
  if (auto c = find(name)) return *c;
  throw std::out_of_range("unknown label '" + std::string(name) + "'");
}

int LabelSpace::entity_channel(std::string_view name) const {
  const int c = channel(name);
  if (!is_entity_channel(c)) throw std::out_of_range("label '" + std::string(name) + "' is not an entity type");
  return c;
}

int LabelSpace::relation_channel(std::string_view name) const {
  const int c = channel(name);
  if (is_entity_channel(c)) throw std::out_of_range("label '" + std::string(name) + "' is not a relation type");
  return c;
}

void validate_label_space(TaskKind task, const LabelSpace& labels) {
  if (task == TaskKind::ner && labels.num_relation_types() != 0)
    throw std::invalid_argument("NER datasets cannot declare relation types");
  if (task == TaskKind::absa && !(labels == LabelSpace::absa()))
    throw std::invalid_argument(
        "ABSA datasets must use entity_types [Expression, Aspect] and relation_types "
        "[Positive, Negative, Neutral]");
  if ((task == TaskKind::re || task == TaskKind::ee) &&
      (labels.num_entity_types() == 0 || labels.num_relation_types() == 0))
    throw std::invalid_argument(to_string(task) + " datasets need entity and relation types");
}

// ---------------------------------------------------------------------------
// Instances

namespace {

void check_span(const Span& s, std::size_t length, const char* what) {
  if (s.start < 0 || s.end < s.start || static_cast<std::size_t>(s.end) >= length)
    throw std::out_of_range(std::string(what) + " span [" + std::to_string(s.start) + ", " +
                            std::to_string(s.end) + "] is invalid for a sentence of " +
                            std::to_string(length) + " tokens");
}

Span span_from_json(const json& j) { return Span{j.at("start").get<int>(), j.at("end").get<int>()}; }

}  // namespace

void validate(const Instance& instance, const LabelSpace& labels) {
  if (instance.tokens.empty()) throw std::invalid_argument("instance has no tokens");
  for (const auto& m : instance.entities) {
    check_span(m.span, instance.tokens.size(), "entity");
    labels.entity_channel(m.type);
  }
  const auto mentions = instance.entities.size();
  for (const auto& link : instance.links) {
    labels.relation_channel(link.type);
    if (link.subject < 0 || static_cast<std::size_t>(link.subject) >= mentions)
      throw std::out_of_range("link subject " + std::to_string(link.subject) + " is not a mention index");
    if (const int* obj = std::get_if<int>(&link.object)) {
      if (*obj < 0 || static_cast<std::size_t>(*obj) >= mentions)
        throw std::out_of_range("link object " + std::to_string(*obj) + " is not a mention index");
    } else {
      check_span(std::get<Span>(link.object), instance.tokens.size(), "link object");
    }
  }
}

Annotations annotations(const Instance& instance) {
  Annotations out;
  out.entities = instance.entities;
  for (const auto& ref : instance.links) {
    Link link;
    link.type = ref.type;
    link.subject = instance.entities.at(static_cast<std::size_t>(ref.subject));
    if (const int* obj = std::get_if<int>(&ref.object))
      link.object = instance.entities.at(static_cast<std::size_t>(*obj));
    else
      link.object = Mention{"", std::get<Span>(ref.object)};
    out.links.push_back(std::move(link));
  }
  normalize(out);
  return out;
}

void normalize(Annotations& a) {
  std::sort(a.entities.begin(), a.entities.end());
  a.entities.erase(std::unique(a.entities.begin(), a.entities.end()), a.entities.end());
  std::sort(a.links.begin(), a.links.end());
  a.links.erase(std::unique(a.links.begin(), a.links.end()), a.links.end());
}

Instance instance_from_json(const json& j) {
  Instance inst;
  inst.tokens = j.at("tokens").get<std::vector<std::string>>();
  if (j.contains("entities")) {
    for (const auto& e : j.at("entities"))
      inst.entities.push_back(Mention{e.at("type").get<std::string>(), span_from_json(e)});
  }
  if (j.contains("links")) {
    for (const auto& l : j.at("links")) {
      LinkRef ref;
      ref.type = l.at("type").get<std::string>();
      ref.subject = l.at("subject").get<int>();
      const auto& obj = l.at("object");
      if (obj.is_object())
        ref.object = span_from_json(obj);
      else
        ref.object = obj.get<int>();
      inst.links.push_back(std::move(ref));
    }
  }
  if (j.contains("dataset")) inst.dataset_id = j.at("dataset").get<std::string>();
  return inst;
}

json to_json(const Instance& instance) {
  json j;
  j["tokens"] = instance.tokens;
  j["entities"] = json::array();
  for (const auto& m : instance.entities)
    j["entities"].push_back({{"type", m.type}, {"start", m.span.start}, {"end", m.span.end}});
  j["links"] = json::array();
  for (const auto& l : instance.links) {
    json obj;
    if (const int* idx = std::get_if<int>(&l.object))
      obj = *idx;
    else
      obj = {{"start", std::get<Span>(l.object).start}, {"end", std::get<Span>(l.object).end}};
    j["links"].push_back({{"type", l.type}, {"subject", l.subject}, {"object", obj}});
  }
  return j;
}

std::vector<Instance> load_jsonl(const std::filesystem::path& path, const LabelSpace& labels,
                                 const LoadOptions& options, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Instance> out;
  LoadStats local;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++local.lines;
    Instance inst;
    try {
      inst = instance_from_json(json::parse(line));
      validate(inst, labels);
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(number) + ": malformed JSON: " + e.what());
    } catch (const std::out_of_range& e) {
      throw std::out_of_range(path.string() + " line " + std::to_string(number) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path.string() + " line " + std::to_string(number) + ": " + e.what());
    }
    if (static_cast<int>(inst.tokens.size()) > options.max_len) {
      ++local.dropped_too_long;
      continue;
    }
    out.push_back(std::move(inst));
  }
  if (local.dropped_too_long > 0)
    log_event(LogLevel::warn, "dropped_long_sentences",
              {{"path", path.string()}, {"count", local.dropped_too_long}, {"max_len", options.max_len}});
  if (stats) *stats = local;
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Instance> instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& inst : instances) out << to_json(inst).dump() << '\n';
}

const std::vector<Instance>& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

Dataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest.string() + ": malformed JSON: " + e.what());
  }
  Dataset ds;
  ds.id = j.at("id").get<std::string>();
  ds.task = parse_task_kind(j.at("task").get<std::string>());
  ds.labels = LabelSpace(j.value("entity_types", std::vector<std::string>{}),
                         j.value("relation_types", std::vector<std::string>{}));
  validate_label_space(ds.task, ds.labels);
  const auto base = manifest.parent_path();
  auto load_split = [&](const char* key) {
    std::vector<Instance> v;
    if (!j.contains(key)) return v;
    v = load_jsonl(base / j.at(key).get<std::string>(), ds.labels, options);
    for (auto& inst : v) inst.dataset_id = ds.id;
    return v;
  };
  ds.train = load_split("train");
  ds.dev = load_split("dev");
  ds.test = load_split("test");
  if (j.contains("instructions")) ds.instructions = base / j.at("instructions").get<std::string>();
  return ds;
}

// ---------------------------------------------------------------------------
// Tokens and vocabulary

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string to_lower(std::string_view text) {
  std::string s(text);
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>", "<slot>"} {
  for (int i = 0; i < 3; ++i) ids_.emplace(tokens_[static_cast<std::size_t>(i)], i);
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> corpus, int min_count,
                             bool lowercase) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  std::unordered_map<std::string, int> counts;
  for (const auto& sentence : corpus)
    for (const auto& tok : sentence) ++counts[lowercase ? to_lower(tok) : tok];
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  v.lowercase_ = lowercase;
  for (auto& [tok, n] : kept) {
    if (v.ids_.contains(tok)) continue;
    v.ids_.emplace(tok, v.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_json(const json& j) {
  Vocabulary v;
  v.lowercase_ = j.at("lowercase").get<bool>();
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<unk>" || tokens[2] != "<slot>")
    throw std::invalid_argument("vocabulary must start with <pad>, <unk>, <slot>");
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    if (!v.ids_.emplace(tokens[i], static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token '" + tokens[i] + "'");
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

json Vocabulary::to_json() const { return {{"lowercase", lowercase_}, {"tokens", tokens_}}; }

bool Vocabulary::contains(std::string_view token) const {
  const std::string key = lowercase_ ? to_lower(token) : std::string(token);
  return ids_.find(key) != ids_.end();
}

int Vocabulary::id(std::string_view token) const {
  const std::string key = lowercase_ ? to_lower(token) : std::string(token);
  const auto it = ids_.find(key);
  return it == ids_.end() ? unk_id : it->second;
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

}  // namespace tie
