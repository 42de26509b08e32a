#ifndef TIE_SYNTH_HPP
#define TIE_SYNTH_HPP

#include "tie/schema.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tie {

/// A generated dataset with its instruction templates.
struct SynthTask {
  Dataset dataset;
  std::vector<std::string> templates;
};

/// Kinds understood by synth_bundle.
const std::vector<std::string>& synth_kinds();

/// Generates datasets of one kind:
///   ner, re, ee, absa   one dataset of that task shape
///   all                 the four above
///   aligned             two NER sources that agree on every label, plus a small target
///   conflict            two NER sources that type the same venue phrases differently
///                       (ORG in one, LOC in the other), plus the same small target
/// `size` is the training size of each full dataset; dev and test get size/5
/// (at least 20). The target gets max(8, size/20) training sentences.
std::vector<SynthTask> synth_bundle(const std::string& kind, int size, std::uint64_t seed);

/// Writes <dir>/<id>/{manifest.json, train.jsonl, dev.jsonl, test.jsonl,
/// instructions.json} per task and returns the manifest paths.
std::vector<std::filesystem::path> write_synth(const std::filesystem::path& dir, const std::vector<SynthTask>& tasks);

}  // namespace tie

#endif  // TIE_SYNTH_HPP
