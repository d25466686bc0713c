#pragma once

// Target maps, sampling masks and the SL/DSL loss family.
//
// Score stacks carry K*L+1 channels: channel k*L+l is landmark l in pose
// subspace k, the last channel is background. For a sampled pixel with label
// t the loss term is -w * log softmax_t, where
//   foreground:          w = alpha
//   background, SL:      w = beta
//   background, DSL:     w = beta * log10(d + 1)
// and d is the distance from the pixel to the ground-truth key-point of the
// foreground class it most resembles. Terms are summed over sampled pixels
// and divided by the sampled count; w is a constant for backprop.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "godp/landmarks.hpp"
#include "godp/network.hpp"
#include "godp/rng.hpp"
#include "godp/tensor.hpp"

namespace godp {

enum class LossVariant { kOff, kSL, kDSL };
enum class TargetMode { kVisibleOnly, kAll };

std::string_view loss_variant_name(LossVariant v);
LossVariant parse_loss_variant(std::string_view name);
std::string_view target_mode_name(TargetMode m);
TargetMode parse_target_mode(std::string_view name);

// Per-pixel class labels of n images at one supervision resolution.
struct TargetMaps {
  int n = 0;
  int classes = 0;  // K*L+1
  int h = 0;
  int w = 0;
  TargetMode mode = TargetMode::kVisibleOnly;
  std::vector<std::int32_t> labels;    // n*h*w, background = classes-1
  std::vector<std::int32_t> keypoint;  // n*(classes-1): flat pixel y*w+x, -1 if absent

  int background() const { return classes - 1; }
  std::int32_t label(int i, int y, int x) const { return labels[(static_cast<std::size_t>(i) * h + y) * w + x]; }
  std::int32_t keypoint_of(int i, int cls) const { return keypoint[static_cast<std::size_t>(i) * (classes - 1) + cls]; }
};

// Labels one image. Coordinates are input-image pixels; each landmark lands
// on (round(x*s), round(y*s)) with s = map_size / input_size in the map of
// its pose bucket (zero-based). Out-of-map points are dropped. If two
// classes round onto the same pixel the lower class keeps it.
// Throws DataError when the bucket is out of range.
TargetMaps build_targets(const LandmarkSet& landmarks, int subspaces, int input_size, int map_size, TargetMode mode);

// Stacks per-image targets of equal geometry.
TargetMaps stack_targets(const std::vector<TargetMaps>& parts);

struct SampleMask {
  int n = 0, h = 0, w = 0;
  std::vector<std::uint8_t> m;  // n*h*w
  double far_ratio = 0.0;
  double near_ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t count() const;
};

// Key-point pixels always; background within Chebyshev distance
// <= near_threshold of a key-point with near_ratio, the rest with far_ratio.
// One Bernoulli draw per background pixel in raster order.
SampleMask sample_mask(const TargetMaps& targets, double far_ratio, double near_ratio, std::uint64_t seed,
                       int near_threshold = 3);

// Distance (score-map pixels) from background pixel (x, y) of image i to the
// key-point of the most probable foreground class. Falls back to the most
// probable class that has a key-point, then to the map diagonal.
template <typename T>
double misleading_distance(const Tensor<T>& probabilities, const TargetMaps& targets, int i, int y, int x);

double dsl_weight(bool foreground, double d, double alpha, double beta, LossVariant variant);

struct LossParams {
  double far_ratio = 0.005;
  double near_ratio = 0.1;
  double alpha = 1.0;
  double beta = 0.2;
  LossVariant variant = LossVariant::kSL;

  bool active() const { return variant != LossVariant::kOff; }
  friend bool operator==(const LossParams&, const LossParams&) = default;
};

template <typename T>
struct DslLossValue {
  double loss = 0.0;
  std::vector<T> grad;  // d loss / d logits
  std::size_t sampled = 0;
  bool empty_mask = false;
};

// Loss value and logit gradient without touching the tape.
template <typename T>
DslLossValue<T> dsl_loss_values(const Tensor<T>& logits, const TargetMaps& targets, const SampleMask& mask,
                                double alpha, double beta, LossVariant variant);

// Taped scalar loss; backward adds the analytic gradient to the logits.
template <typename T>
Tensor<T> dsl_loss(const Tensor<T>& logits, const TargetMaps& targets, const SampleMask& mask, double alpha,
                   double beta, LossVariant variant, bool* empty_mask = nullptr);

// Stage is one-based. Stage 3 DSL points ramp linearly from base/2 on the
// first epoch of the stage to base on its last; everything else is constant.
double beta_schedule(int stage, int epoch_in_stage, int stage_epochs, double base_beta, LossVariant variant);

struct PointSpec {
  LossParams params;
  TargetMode targets = TargetMode::kVisibleOnly;
  friend bool operator==(const PointSpec&, const PointSpec&) = default;
};

struct StageSpec {
  int epochs = 3;
  std::array<PointSpec, kSupervisionPoints> points;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

// Loss parameters per supervision point and stage.
struct LossSpec {
  std::vector<StageSpec> stages;

  int total_epochs() const;
  // Throws ConfigError on ratios outside (0, 1], non-positive alpha/beta or
  // a stage without any active point.
  void validate() const;
  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

// The built-in three-stage table.
LossSpec default_loss_spec();

// Proposal points must keep alpha above every background weight up to the
// map diagonal; refinement points must punish distant background harder
// than the proposal point of the same resolution. Returns an empty string
// when both hold, otherwise the first violation.
std::string check_policy_asymmetry(const LossSpec& spec, double map_diagonal);

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  std::array<double, kSupervisionPoints> per_point{};  // 0 for inactive points
  std::array<bool, kSupervisionPoints> active{};
  int terms = 0;
  bool all_masks_empty = true;
};

// Sums the active supervision losses of one stage. targets[i] belongs to
// record.supervision[i]; a single-stack record (baselines) uses point 0.
// Masks derive from mask_seed and the point index. Call backward() on
// .total to propagate.
template <typename T>
TotalLoss<T> total_loss(const ForwardRecord<T>& record, const std::vector<TargetMaps>& targets,
                        const LossSpec& spec, int stage, int epoch_in_stage, std::uint64_t mask_seed);

// Targets for every supervision point of a record, honoring each point's
// target mode in the given stage.
template <typename T>
std::vector<TargetMaps> targets_for_record(const ForwardRecord<T>& record, const std::vector<LandmarkSet>& batch,
                                           const LossSpec& spec, int stage, int subspaces, int input_size);

}  // namespace godp
