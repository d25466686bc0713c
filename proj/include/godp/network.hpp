#pragma once

// Encoder/decoder landmark networks: GoDP with its decision pathway, plus the
// DeconvNet and hourglass-connection (HGN) baselines.
//
// Resolution ladder for input size S (five pooling levels):
//   encoder G1..G5 : conv,conv at S/2^i then maxpool        -> S/2 .. S/32
//   decoder G6..G9 : unpool (switches of G5..G2) then deconv,deconv
//                    -> S/16, S/8, S/4, S/2
//   G10 (baselines): deconv,deconv at S/2, 1x1 head onto K*L+1 channels
//
// GoDP decision pathway (score stacks carry K*L+1 channels, background last):
//   psi0 = G14(G7 out ++ G4 pre-pool)          at S/8   (G4->G8 hyperlink)
//   psi1 = U1(psi0) + G12(G2 out ++ U1(psi0))  at S/4   P-DSL1
//   psi2 = psi1 + G15(G8 out ++ psi1)          at S/4   R-DSL1
//   psi3 = U2(psi2) + G13(G1 out ++ U2(psi2))  at S/2   P-DSL2
//   psi4 = psi3 + G16(G9 out ++ psi3)          at S/2   R-DSL2

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "godp/ops.hpp"
#include "godp/param_set.hpp"
#include "godp/tensor.hpp"

namespace godp {

enum class Variant { kGodp, kDeconvNet, kHgn };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct NetworkSpec {
  Variant variant = Variant::kGodp;
  int landmarks = 5;   // L
  int subspaces = 1;   // K
  int input_size = 64;
  int base_width = 8;
  int width_cap = 64;
  int converter_width = 0;  // 0 selects 2 * base_width
  Precision precision = Precision::kFloat32;
  std::uint64_t seed = 0;

  int score_channels() const { return subspaces * landmarks + 1; }
  int output_size() const { return input_size / 2; }
  int effective_converter_width() const { return converter_width > 0 ? converter_width : 2 * base_width; }
  // Channels of encoder group i (0-based).
  int group_width(int i) const;
  // Throws ConfigError on an inconsistent spec.
  void validate() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline constexpr int kSupervisionPoints = 5;
inline constexpr std::array<const char*, kSupervisionPoints> kSupervisionNames = {"SL", "P-DSL1", "R-DSL1",
                                                                                  "P-DSL2", "R-DSL2"};

// One convolution (or transposed convolution) with its optional batch norm
// and relu. Indices refer to the owning ParamSet.
struct ConvUnit {
  std::string name;
  bool transposed = false;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int pad = 1;
  bool batch_norm = true;
  bool relu = true;
  std::size_t weight = 0;
  std::size_t bias = SIZE_MAX;  // only without batch norm
  std::size_t bn_scale = 0, bn_shift = 0, bn_mean = 0, bn_var = 0;
};

struct Group {
  std::string name;
  std::vector<ConvUnit> units;
  std::string note;  // human-readable wiring summary
};

enum class ForwardMode { kTrain, kEval };

struct ForwardOptions {
  ForwardMode mode = ForwardMode::kEval;
  // The refinement updates (psi2, psi4) are skipped while only the proposal
  // losses train; skipped updates pass the stack through unchanged.
  bool refinement_active = true;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
};

template <typename T>
struct ForwardRecord {
  // Logit stacks psi0..psi4 for godp, a single stack for the baselines.
  std::vector<Tensor<T>> supervision;
  // Corrections added by each decision update (godp only; undefined when skipped).
  std::vector<Tensor<T>> deltas;
  // Softmax of the last stack merged over pose subspaces: (n, L, h, w).
  Tensor<T> merged;
};

template <typename T>
class Network {
 public:
  Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const std::vector<Group>& groups() const { return groups_; }
  const Group& group(std::string_view name) const;

  int supervision_count() const { return spec_.variant == Variant::kGodp ? kSupervisionPoints : 1; }
  int decision_updates() const { return spec_.variant == Variant::kGodp ? 4 : 0; }

 private:
  template <typename U>
  friend Network<U> build_network(const NetworkSpec& spec);
  template <typename U>
  friend ForwardRecord<U> forward(Network<U>& net, const Tensor<U>& images, const ForwardOptions& options);

  NetworkSpec spec_;
  ParamSet<T> params_;
  std::vector<Group> groups_;
};

// Fan-in scaled Gaussian weights (std sqrt(2 / fan_in)), zero biases, unit
// batch-norm scale, drawn from a stream derived from spec.seed.
template <typename T>
Network<T> build_network(const NetworkSpec& spec);

// images: (n, 1, S, S) with values in [0, 1].
template <typename T>
ForwardRecord<T> forward(Network<T>& net, const Tensor<T>& images, const ForwardOptions& options = {});

// Applies a converter group to concat(info, psi) and adds the correction.
// Returns {psi + delta, delta}.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> decision_update(const Tensor<T>& psi_prev, const Tensor<T>& info_features,
                                                const Group& converter, ParamSet<T>& params,
                                                const ForwardOptions& options);

// Runs one group's units in order.
template <typename T>
Tensor<T> run_group(const Tensor<T>& input, const Group& group, ParamSet<T>& params, const ForwardOptions& options);

// Sums the K subspace probability maps of every landmark; the background
// channel is dropped. probabilities: (n, K*L+1, h, w) -> (n, L, h, w).
template <typename T>
Tensor<T> merge_pose_subspaces(const Tensor<T>& probabilities, int subspaces, int landmarks);

// Wiring table, supervision points and parameter count as plain text.
template <typename T>
std::string describe(const Network<T>& net);

// Stable string of layer names and shapes; equal strings mean equal graphs.
template <typename T>
std::string topology_signature(const Network<T>& net);

}  // namespace godp
