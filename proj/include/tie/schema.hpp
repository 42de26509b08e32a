#ifndef TIE_SCHEMA_HPP
#define TIE_SCHEMA_HPP

#include <json.hpp>

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tie {

enum class TaskKind { ner, re, ee, absa };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

/// Ordered entity and relation channels of one dataset. Entity channels come
/// first, so channel c < num_entity_types() is an entity (or trigger) type.
class LabelSpace {
 public:
  LabelSpace() = default;
  LabelSpace(std::vector<std::string> entity_types, std::vector<std::string> relation_types);

  /// Expression, Aspect | Positive, Negative, Neutral.
  static LabelSpace absa();

  int size() const { return static_cast<int>(names_.size()); }
  int num_entity_types() const { return static_cast<int>(entity_types_.size()); }
  int num_relation_types() const { return static_cast<int>(relation_types_.size()); }
  bool is_entity_channel(int channel) const { return channel < num_entity_types(); }

  /// Channel index of a label; throws std::out_of_range naming the label.
  int channel(std::string_view name) const;
  std::optional<int> find(std::string_view name) const;
  int entity_channel(std::string_view name) const;
  int relation_channel(std::string_view name) const;
  const std::string& name(int channel) const { return names_.at(static_cast<std::size_t>(channel)); }

  const std::vector<std::string>& entity_types() const { return entity_types_; }
  const std::vector<std::string>& relation_types() const { return relation_types_; }
  const std::vector<std::string>& channels() const { return names_; }

  friend bool operator==(const LabelSpace& a, const LabelSpace& b) {
    return a.entity_types_ == b.entity_types_ && a.relation_types_ == b.relation_types_;
  }

 private:
  std::vector<std::string> entity_types_;
  std::vector<std::string> relation_types_;
  std::vector<std::string> names_;
  std::map<std::string, int, std::less<>> index_;
};

/// Inclusive token range.
struct Span {
  int start = 0;
  int end = 0;
  auto operator<=>(const Span&) const = default;
};

struct Mention {
  std::string type;
  Span span;
  auto operator<=>(const Mention&) const = default;
};

/// Link as stored in the corpus: the subject is a mention index, the object
/// is a mention index or (for event arguments) a raw span.
struct LinkRef {
  std::string type;
  int subject = 0;
  std::variant<int, Span> object;
  bool operator==(const LinkRef&) const = default;
};

/// Link with both ends resolved. `object.type` is empty for untyped
/// argument spans.
struct Link {
  std::string type;
  Mention subject;
  Mention object;
  auto operator<=>(const Link&) const = default;
};

struct Instance {
  std::vector<std::string> tokens;
  std::vector<Mention> entities;
  std::vector<LinkRef> links;
  std::string dataset_id;
  bool operator==(const Instance&) const = default;
};

/// Typed structures of one sentence, sorted and deduplicated.
struct Annotations {
  std::vector<Mention> entities;
  std::vector<Link> links;
  bool operator==(const Annotations&) const = default;
};

Annotations annotations(const Instance& instance);
void normalize(Annotations& a);

/// Throws std::invalid_argument / std::out_of_range on any invariant breach.
void validate(const Instance& instance, const LabelSpace& labels);

struct LoadOptions {
  int max_len = 128;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t dropped_too_long = 0;
};

Instance instance_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Instance& instance);

/// One JSON object per line; blank lines are skipped. Over-long sentences are
/// dropped and counted. Parse and validation failures carry the line number.
std::vector<Instance> load_jsonl(const std::filesystem::path& path, const LabelSpace& labels,
                                 const LoadOptions& options = {}, LoadStats* stats = nullptr);
void write_jsonl(const std::filesystem::path& path, std::span<const Instance> instances);

struct Dataset {
  std::string id;
  TaskKind task = TaskKind::ner;
  LabelSpace labels;
  std::vector<Instance> train;
  std::vector<Instance> dev;
  std::vector<Instance> test;
  /// Instruction file named by the manifest, if any.
  std::optional<std::filesystem::path> instructions;

  const std::vector<Instance>& split(std::string_view name) const;
};

/// Checks task/label-space consistency (NER has no relation channels; ABSA
/// uses the fixed five-channel layout).
void validate_label_space(TaskKind task, const LabelSpace& labels);

/// Loads a dataset manifest; split paths resolve relative to the manifest.
Dataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options = {});

/// Whitespace tokenizer.
std::vector<std::string> split_whitespace(std::string_view text);
std::string to_lower(std::string_view text);

/// Token <-> id map. Ids 0..2 are reserved for <pad>, <unk> and <slot>;
/// the rest are ordered by descending frequency, then lexicographically.
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int slot_id = 2;

  Vocabulary();
  static Vocabulary build(std::span<const std::vector<std::string>> corpus, int min_count,
                          bool lowercase);
  static Vocabulary from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  int size() const { return static_cast<int>(tokens_.size()); }
  bool lowercase() const { return lowercase_; }
  bool contains(std::string_view token) const;
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::vector<int> encode(std::span<const std::string> tokens) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.lowercase_ == b.lowercase_;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> ids_;
  bool lowercase_ = false;
};

}  // namespace tie

#endif  // TIE_SCHEMA_HPP
