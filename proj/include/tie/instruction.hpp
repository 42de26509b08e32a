#ifndef TIE_INSTRUCTION_HPP
#define TIE_INSTRUCTION_HPP

#include "tie/rng.hpp"
#include "tie/schema.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tie {

/// A rendered instruction: tokens plus, for each label channel, the position
/// of the first token of that label's surface form.
struct Instruction {
  std::string dataset_id;
  std::string source;
  std::vector<std::string> tokens;
  std::vector<int> slot_index;

  std::vector<int> token_ids(const Vocabulary& vocab) const { return vocab.encode(tokens); }
};

/// Whitespace split with ASCII punctuation (other than - _ ') as separate tokens.
std::vector<std::string> tokenize_instruction(std::string_view text);

/// Lowercased label name with underscores turned into spaces.
std::string surface_form(std::string_view label);

/// Renders a template holding exactly one {NAME} placeholder per channel.
Instruction parse_template(std::string_view source, const LabelSpace& labels,
                           std::string dataset_id = {}, int max_instr_len = 64);

struct InstructionFile {
  std::string dataset;
  std::vector<std::string> templates;
};

InstructionFile read_instruction_file(const std::filesystem::path& path);
void write_instruction_file(const std::filesystem::path& path, const InstructionFile& file);

/// Validated instructions per dataset.
class InstructionPool {
 public:
  void add(const std::string& dataset_id, const LabelSpace& labels,
           const std::vector<std::string>& templates, int max_instr_len = 64);

  bool contains(std::string_view dataset_id) const;
  const std::vector<Instruction>& instructions(std::string_view dataset_id) const;
  /// Uniform draw from the dataset's instructions.
  const Instruction& select(std::string_view dataset_id, Rng& rng) const;

  std::vector<std::string> datasets() const;
  std::vector<std::string> templates(std::string_view dataset_id) const;

 private:
  std::map<std::string, std::vector<Instruction>, std::less<>> pool_;
};

}  // namespace tie

#endif  // TIE_INSTRUCTION_HPP
