#ifndef TIE_OPTIM_HPP
#define TIE_OPTIM_HPP

#include "tie/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace tie {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with a step count per tensor, so a frozen group's bias correction
/// resumes where it stopped.
class Adam {
 public:
  Adam() = default;
  Adam(const Parameters& params, AdamConfig config);

  void update(Parameters& params, std::size_t entry, const Matrix& grad);

  const AdamConfig& config() const { return config_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  std::vector<std::int64_t>& steps() { return steps_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  const std::vector<std::int64_t>& steps() const { return steps_; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::vector<std::int64_t> steps_;
};

enum class GateMode { off, group, global };

std::string to_string(GateMode mode);
GateMode parse_gate_mode(std::string_view text);

/// Gradients of the previous batch, one matrix per parameter tensor.
struct GradientSnapshot {
  bool ready = false;
  std::vector<Matrix> grads;
};

struct GroupDecision {
  std::string group;
  double dot = 0.0;
  bool updated = true;

  int sign() const { return dot > 0.0 ? 1 : (dot < 0.0 ? -1 : 0); }
};

struct StepReport {
  std::int64_t step = 0;
  int epoch = 0;
  int batch = 0;
  std::string dataset;
  double loss = 0.0;
  /// This batch shares its dataset with the previous one (unavoidable tail).
  bool repeated_dataset = false;
  /// False on the first step and whenever the gate is off.
  bool gated = false;
  std::vector<GroupDecision> groups;

  int skipped() const;
  nlohmann::json to_json() const;
};

/// One optimiser step under the gradient-sign gate.
///
/// A group is updated iff the inner product of its current gradient with the
/// snapshot is strictly positive (all groups share the global product in
/// GateMode::global). Without a snapshot, or with the gate off, every group
/// is updated. The snapshot then holds `grads` for every group, updated or
/// not. Skipped groups keep their values and optimiser moments untouched.
/// Non-finite gradients throw NumericError before anything changes.
StepReport gated_step(Parameters& params, GradientSnapshot& snapshot, const std::vector<Matrix>& grads,
                      Adam& optimizer, GateMode mode);

}  // namespace tie

#endif  // TIE_OPTIM_HPP
