#include "tie/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tie {

Adam::Adam(const Parameters& params, AdamConfig config) : config_(config) {
  for (const auto& e : params.entries()) {
    m_.push_back(Matrix::Zero(e.tensor.rows(), e.tensor.cols()));
    v_.push_back(Matrix::Zero(e.tensor.rows(), e.tensor.cols()));
    steps_.push_back(0);
  }
}

void Adam::update(Parameters& params, std::size_t entry, const Matrix& grad) {
  Matrix& value = params.entries().at(entry).tensor.mutable_value();
  Matrix& m = m_.at(entry);
  Matrix& v = v_.at(entry);
  const auto t = static_cast<double>(++steps_[entry]);
  m = config_.beta1 * m + (1.0 - config_.beta1) * grad;
  v = config_.beta2 * v + (1.0 - config_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  value.array() -= config_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.eps);
}

std::string to_string(GateMode mode) {
  switch (mode) {
    case GateMode::off: return "off";
    case GateMode::group: return "group";
    case GateMode::global: return "global";
  }
  return "?";
}

GateMode parse_gate_mode(std::string_view text) {
  if (text == "off") return GateMode::off;
  if (text == "group") return GateMode::group;
  if (text == "global") return GateMode::global;
  throw std::invalid_argument("unknown gate mode '" + std::string(text) + "' (expected off, group or global)");
}

int StepReport::skipped() const {
  int n = 0;
  for (const auto& g : groups) n += g.updated ? 0 : 1;
  return n;
}

nlohmann::json StepReport::to_json() const {
  nlohmann::json groups_json = nlohmann::json::object();
  for (const auto& g : groups) groups_json[g.group] = {{"dot", g.dot}, {"sign", g.sign()}, {"updated", g.updated}};
  return {{"step", step},         {"epoch", epoch},   {"batch", batch},
          {"dataset", dataset},   {"loss", loss},     {"repeated_dataset", repeated_dataset},
          {"gated", gated},       {"skipped", skipped()}, {"groups", groups_json}};
}

StepReport gated_step(Parameters& params, GradientSnapshot& snapshot, const std::vector<Matrix>& grads,
                      Adam& optimizer, GateMode mode) {
  const auto& entries = params.entries();
  if (grads.size() != entries.size())
    throw std::invalid_argument("gated_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(entries.size()) + " parameters");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (grads[i].rows() != entries[i].tensor.rows() || grads[i].cols() != entries[i].tensor.cols())
      throw ShapeError("gated_step: gradient of " + entries[i].name + " has the wrong shape");
    if (!grads[i].allFinite())
      throw NumericError("non-finite gradient in " + entries[i].name + " (group " + entries[i].group + ")");
  }

  StepReport report;
  report.gated = mode != GateMode::off && snapshot.ready;
  const auto groups = params.groups();
  double global_dot = 0.0;
  for (const auto& name : groups) {
    GroupDecision g{name, 0.0, true};
    if (snapshot.ready)
      for (std::size_t i : params.members(name)) g.dot += grads[i].cwiseProduct(snapshot.grads[i]).sum();
    global_dot += g.dot;
    report.groups.push_back(g);
  }
  if (report.gated)
    for (auto& g : report.groups) g.updated = (mode == GateMode::global ? global_dot : g.dot) > 0.0;

  for (const auto& g : report.groups)
    if (g.updated)
      for (std::size_t i : params.members(g.group)) optimizer.update(params, i, grads[i]);

  snapshot.grads = grads;
  snapshot.ready = true;
  return report;
}

}  // namespace tie
