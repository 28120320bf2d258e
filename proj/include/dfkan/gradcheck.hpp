#pragma once

#include "dfkan/model.hpp"
#include "dfkan/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dfkan {

struct GradcheckOptions {
  Mode mode = Mode::Train;
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tolerance = 1e-5;
  // Error = |a - n| / max(floor, |a|, |n|).
  double floor = 1.0;
  // Negative-control hook forwarded to Tape::inject_fault.
  std::optional<std::string> fault_op;
  int fault_input = -1;
  double fault_scale = 1.5;
};

struct GradcheckGroup {
  std::string group;
  long long scalars = 0;
  double worst_rel = 0.0;
  double worst_abs = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;  // walk order
  double worst_rel = 0.0;
  bool pass = true;
  std::vector<std::string> failing() const;
};

// Loss = mean((model(X) - y)^2); an empty y means the mean squared output.
// Compares reverse-mode gradients with central differences for every
// learnable scalar. Batch-norm running statistics are restored afterwards.
GradcheckReport gradcheck(Model& model, const Tensor& X, const Tensor& y, const GradcheckOptions& options = {});

}  // namespace dfkan
