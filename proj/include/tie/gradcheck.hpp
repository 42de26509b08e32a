#ifndef TIE_GRADCHECK_HPP
#define TIE_GRADCHECK_HPP

#include "tie/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace tie {

struct GradcheckOptions {
  int length = 6;
  int channels = 5;
  int instruction_length = 12;
  double step = 1e-5;
  /// Denominator floor for the relative error.
  double floor = 1e-6;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  double max_error = 0.0;
  std::string worst_parameter;
  Index checked = 0;
  bool passed = false;

  nlohmann::json to_json() const;
};

/// The toy model the gradient check runs on by default: d = 8, one layer
/// each side, two heads.
ModelConfig gradcheck_model_config();

/// Compares backward() against central differences for every parameter
/// scalar of a randomly initialised model on a random sentence, instruction
/// and gold cube, with the loss used in training.
GradcheckReport gradcheck(const ModelConfig& config, const GradcheckOptions& options = {});

}  // namespace tie

#endif  // TIE_GRADCHECK_HPP
