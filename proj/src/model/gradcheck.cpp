#include "tie/gradcheck.hpp"

#include "tie/codec.hpp"
#include "tie/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace tie {

nlohmann::json GradcheckReport::to_json() const {
  return {{"max_error", max_error}, {"worst_parameter", worst_parameter}, {"checked", checked}, {"passed", passed}};
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.d = 8;
  c.layers_enc = 1;
  c.layers_dec = 1;
  c.heads = 2;
  c.d_ff = 16;
  c.vocab_size = 24;
  c.max_len = 16;
  c.max_instr_len = 16;
  return c;
}

GradcheckReport gradcheck(const ModelConfig& config, const GradcheckOptions& options) {
  ModelConfig c = config;
  c.dropout = 0.0;  // the check needs a deterministic forward pass
  c.validate();
  if (options.length < 1 || options.length > c.max_len) throw std::invalid_argument("gradcheck length out of range");
  if (options.channels < 1 || options.channels > options.instruction_length ||
      options.instruction_length > c.max_instr_len)
    throw std::invalid_argument("gradcheck needs 1 <= channels <= instruction_length <= max_instr_len");

  Rng rng(options.seed);
  std::vector<std::string> names;
  for (int k = 0; k < options.channels; ++k) names.push_back("C" + std::to_string(k));
  Model model(c, names, derive_seed(options.seed, 1));
  // Spread the initial weights so the check is not dominated by near-zero activations.
  for (auto& e : model.params().entries())
    for (Index i = 0; i < e.tensor.size(); ++i) e.tensor.mutable_value().data()[i] += rng.uniform(-0.1, 0.1);

  ModelInput input;
  for (int i = 0; i < options.length; ++i) input.tokens.push_back(3 + static_cast<int>(rng.below(c.vocab_size - 3)));
  for (int i = 0; i < options.instruction_length; ++i)
    input.instruction.push_back(3 + static_cast<int>(rng.below(c.vocab_size - 3)));
  for (int k = 0; k < options.channels; ++k) input.slot_index.push_back(k);
  GoldMatrix gold(options.length, options.channels);
  for (Index i = 0; i < gold.cells.size(); ++i) gold.cells.data()[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;

  auto loss = [&] { return pair_loss(model.forward(input).logits, gold); };
  model.params().zero_grad();
  backward(loss());
  GradcheckReport report;
  for (auto& e : model.params().entries()) {
    const Matrix analytic = e.tensor.grad();
    for (Index i = 0; i < e.tensor.size(); ++i) {
      double* slot = e.tensor.mutable_value().data() + i;
      const double saved = *slot;
      *slot = saved + options.step;
      const double up = loss().item();
      *slot = saved - options.step;
      const double down = loss().item();
      *slot = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic.data()[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      if (err > report.max_error) {
        report.max_error = err;
        report.worst_parameter = e.name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  model.params().zero_grad();
  report.passed = report.max_error <= options.tolerance;
  return report;
}

}  // namespace tie
