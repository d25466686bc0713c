#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "godp/tensor.hpp"

namespace godp {

struct GradcheckOptions {
  double step = 1e-3;
  // Coordinates probed per input tensor (all of them if the tensor is smaller).
  int probes_per_input = 16;
  // Denominator floor of the relative error, so vanishing gradients are
  // compared absolutely.
  double floor = 1e-3;
  // Skip probes whose central difference disagrees with the half-step one;
  // such probes straddle a kink (relu zero, max-pool tie, argmax switch).
  bool skip_kinks = true;
  double kink_tolerance = 1e-3;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  double max_relative_error = 0.0;
  int probes = 0;
  int skipped = 0;
  std::string worst;  // "input#i[flat]" of the worst probe
};

// Compares analytic gradients of `loss` with respect to `inputs` against
// central finite differences. `loss` must read the current values of the
// input leaves on every call; the leaves are perturbed in place and restored.
GradcheckResult gradcheck(const std::function<Tensor<double>()>& loss, const std::vector<Tensor<double>>& inputs,
                          const GradcheckOptions& options = {});

}  // namespace godp
