#include "godp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "godp/errors.hpp"

namespace godp {

GradcheckResult gradcheck(const std::function<Tensor<double>()>& loss, const std::vector<Tensor<double>>& inputs,
                          const GradcheckOptions& options) {
  for (const auto& in : inputs) {
    if (!in.defined() || !in.is_leaf() || !in.requires_grad()) {
      throw UsageError("gradcheck: inputs must be grad-requiring leaves");
    }
  }
  std::vector<Tensor<double>> leaves = inputs;
  for (auto& in : leaves) in.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& in : leaves) {
    analytic.emplace_back(in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                        : std::vector<double>(in.numel(), 0.0));
  }

  auto eval = [&] {
    NoGradGuard guard;
    return loss().item();
  };
  auto central = [&](double& v, double h) {
    const double saved = v;
    v = saved + h;
    const double up = eval();
    v = saved - h;
    const double down = eval();
    v = saved;
    return (up - down) / (2.0 * h);
  };

  std::mt19937_64 rng(options.seed);
  GradcheckResult result;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto values = leaves[t].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > static_cast<std::size_t>(options.probes_per_input)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.probes_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double numeric = central(values[i], options.step);
      if (options.skip_kinks) {
        const double half = central(values[i], options.step / 2.0);
        const double scale = std::max({std::abs(numeric), std::abs(half), options.floor});
        if (std::abs(numeric - half) > options.kink_tolerance * scale) {
          ++result.skipped;
          continue;
        }
      }
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++result.probes;
      if (err > result.max_relative_error || result.worst.empty()) {
        result.max_relative_error = std::max(result.max_relative_error, err);
        if (err >= result.max_relative_error) result.worst = "input#" + std::to_string(t) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace godp
