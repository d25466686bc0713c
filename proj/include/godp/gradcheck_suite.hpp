#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "godp/gradcheck.hpp"

namespace godp {

struct GradcheckCase {
  std::string name;
  GradcheckResult result;
  double seconds = 0.0;
  bool passed = false;
};

inline constexpr double kGradcheckTolerance = 1e-4;

// Finite-difference checks at 64-bit precision of every differentiable op,
// the loss, and a composed desk-scale forward + total loss.
// scope: "ops", "loss", "network" or "all".
std::vector<GradcheckCase> run_gradcheck_suite(std::string_view scope, std::uint64_t seed = 1,
                                               double tolerance = kGradcheckTolerance);

}  // namespace godp
