#include "tie/instruction.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace tie {

namespace {

bool splits_off(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '\'';
}

}  // namespace

std::vector<std::string> tokenize_instruction(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& word : split_whitespace(text)) {
    std::string current;
    for (char c : word) {
      if (splits_off(c)) {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
        out.emplace_back(1, c);
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
  }
  return out;
}

std::string surface_form(std::string_view label) {
  std::string s = to_lower(label);
  for (auto& c : s)
    if (c == '_') c = ' ';
  return s;
}

Instruction parse_template(std::string_view source, const LabelSpace& labels, std::string dataset_id,
                           int max_instr_len) {
  Instruction ins;
  ins.dataset_id = std::move(dataset_id);
  ins.source = std::string(source);
  ins.slot_index.assign(static_cast<std::size_t>(labels.size()), -1);

  std::size_t pos = 0;
  while (pos < source.size()) {
    const std::size_t open = source.find('{', pos);
    const std::string_view text = source.substr(pos, open == std::string_view::npos ? open : open - pos);
    for (auto& t : tokenize_instruction(text)) ins.tokens.push_back(std::move(t));
    if (open == std::string_view::npos) break;
    const std::size_t close = source.find('}', open);
    if (close == std::string_view::npos)
      throw std::invalid_argument("unterminated placeholder in instruction: " + std::string(source));
    const std::string_view name = source.substr(open + 1, close - open - 1);
    const auto channel = labels.find(name);
    if (!channel) throw std::invalid_argument("unknown placeholder {" + std::string(name) + "}");
    auto& slot = ins.slot_index[static_cast<std::size_t>(*channel)];
    if (slot != -1) throw std::invalid_argument("duplicate placeholder {" + std::string(name) + "}");
    const auto surface = tokenize_instruction(surface_form(name));
    if (surface.empty()) throw std::invalid_argument("label '" + std::string(name) + "' has no surface tokens");
    slot = static_cast<int>(ins.tokens.size());
    ins.tokens.insert(ins.tokens.end(), surface.begin(), surface.end());
    pos = close + 1;
  }

  std::string missing;
  for (int c = 0; c < labels.size(); ++c)
    if (ins.slot_index[static_cast<std::size_t>(c)] == -1) missing += (missing.empty() ? "" : ", ") + labels.name(c);
  if (!missing.empty()) throw std::invalid_argument("instruction is missing placeholders for: " + missing);
  if (static_cast<int>(ins.tokens.size()) > max_instr_len)
    throw std::invalid_argument("instruction has " + std::to_string(ins.tokens.size()) +
                                " tokens, more than max_instr_len " + std::to_string(max_instr_len));
  return ins;
}

InstructionFile read_instruction_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open instruction file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed JSON: " + e.what());
  }
  return {j.at("dataset").get<std::string>(), j.at("templates").get<std::vector<std::string>>()};
}

void write_instruction_file(const std::filesystem::path& path, const InstructionFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json{{"dataset", file.dataset}, {"templates", file.templates}}.dump(2) << '\n';
}

void InstructionPool::add(const std::string& dataset_id, const LabelSpace& labels,
                          const std::vector<std::string>& templates, int max_instr_len) {
  if (templates.empty()) throw std::invalid_argument("dataset '" + dataset_id + "' has no instructions");
  std::vector<Instruction> parsed;
  for (const auto& t : templates) {
    try {
      parsed.push_back(parse_template(t, labels, dataset_id, max_instr_len));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("dataset '" + dataset_id + "': " + e.what());
    }
  }
  pool_[dataset_id] = std::move(parsed);
}

bool InstructionPool::contains(std::string_view dataset_id) const { return pool_.find(dataset_id) != pool_.end(); }

const std::vector<Instruction>& InstructionPool::instructions(std::string_view dataset_id) const {
  const auto it = pool_.find(dataset_id);
  if (it == pool_.end() || it->second.empty())
    throw std::out_of_range("no instructions for dataset '" + std::string(dataset_id) + "'");
  return it->second;
}

const Instruction& InstructionPool::select(std::string_view dataset_id, Rng& rng) const {
  const auto& list = instructions(dataset_id);
  return list[rng.below(list.size())];
}

std::vector<std::string> InstructionPool::datasets() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : pool_) out.push_back(k);
  return out;
}

std::vector<std::string> InstructionPool::templates(std::string_view dataset_id) const {
  std::vector<std::string> out;
  for (const auto& ins : instructions(dataset_id)) out.push_back(ins.source);
  return out;
}

}  // namespace tie
