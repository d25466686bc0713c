#include "godp/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "godp/errors.hpp"
#include "godp/ops.hpp"

namespace godp {

std::string_view loss_variant_name(LossVariant v) {
  switch (v) {
    case LossVariant::kOff: return "off";
    case LossVariant::kSL: return "SL";
    case LossVariant::kDSL: return "DSL";
  }
  return "?";
}

LossVariant parse_loss_variant(std::string_view name) {
  if (name == "off" || name == "-") return LossVariant::kOff;
  if (name == "SL" || name == "sl") return LossVariant::kSL;
  if (name == "DSL" || name == "dsl") return LossVariant::kDSL;
  throw ConfigError("unknown loss variant '" + std::string(name) + "' (expected off, SL or DSL)");
}

std::string_view target_mode_name(TargetMode m) { return m == TargetMode::kAll ? "all" : "visible"; }

TargetMode parse_target_mode(std::string_view name) {
  if (name == "visible" || name == "visible_only") return TargetMode::kVisibleOnly;
  if (name == "all") return TargetMode::kAll;
  throw ConfigError("unknown target mode '" + std::string(name) + "' (expected visible or all)");
}

TargetMaps build_targets(const LandmarkSet& landmarks, int subspaces, int input_size, int map_size, TargetMode mode) {
  const int L = static_cast<int>(landmarks.size());
  if (subspaces < 1 || input_size < 1 || map_size < 1) throw ConfigError("build_targets: bad geometry");
  if (landmarks.pose_bucket < 0 || landmarks.pose_bucket >= subspaces) {
    throw DataError("pose bucket " + std::to_string(landmarks.pose_bucket + 1) + " outside 1.." +
                    std::to_string(subspaces));
  }
  if (landmarks.visible.size() != landmarks.points.size()) throw DataError("visibility flags do not match points");
  TargetMaps t;
  t.n = 1;
  t.classes = subspaces * L + 1;
  t.h = t.w = map_size;
  t.mode = mode;
  t.labels.assign(static_cast<std::size_t>(map_size) * map_size, t.background());
  t.keypoint.assign(static_cast<std::size_t>(t.classes - 1), -1);
  const double s = static_cast<double>(map_size) / input_size;
  for (int l = 0; l < L; ++l) {
    if (mode == TargetMode::kVisibleOnly && !landmarks.visible[l]) continue;
    const auto& p = landmarks.points[l];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
    const double fx = std::round(p.x * s);
    const double fy = std::round(p.y * s);
    if (fx < 0 || fy < 0 || fx >= map_size || fy >= map_size) continue;
    const int x = static_cast<int>(fx), y = static_cast<int>(fy);
    const int cls = landmarks.pose_bucket * L + l;
    auto& label = t.labels[static_cast<std::size_t>(y) * map_size + x];
    if (label != t.background()) continue;
    label = cls;
    t.keypoint[cls] = y * map_size + x;
  }
  return t;
}

TargetMaps stack_targets(const std::vector<TargetMaps>& parts) {
  if (parts.empty()) throw DimensionError("stack_targets: nothing to stack");
  TargetMaps out = parts.front();
  out.n = 0;
  out.labels.clear();
  out.keypoint.clear();
  for (const auto& p : parts) {
    if (p.classes != out.classes || p.h != out.h || p.w != out.w) {
      throw DimensionError("stack_targets: geometry differs between images");
    }
    out.n += p.n;
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.keypoint.insert(out.keypoint.end(), p.keypoint.begin(), p.keypoint.end());
  }
  return out;
}

std::size_t SampleMask::count() const {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

SampleMask sample_mask(const TargetMaps& targets, double far_ratio, double near_ratio, std::uint64_t seed,
                       int near_threshold) {
  if (!(far_ratio > 0.0 && far_ratio <= 1.0) || !(near_ratio > 0.0 && near_ratio <= 1.0)) {
    throw ConfigError("sample_mask: ratios must lie in (0, 1]");
  }
  SampleMask mask;
  mask.n = targets.n;
  mask.h = targets.h;
  mask.w = targets.w;
  mask.far_ratio = far_ratio;
  mask.near_ratio = near_ratio;
  mask.seed = seed;
  const std::size_t plane = static_cast<std::size_t>(targets.h) * targets.w;
  mask.m.assign(plane * targets.n, 0);
  std::vector<std::uint8_t> near(plane);
  Rng rng(seed);
  for (int i = 0; i < targets.n; ++i) {
    std::fill(near.begin(), near.end(), std::uint8_t{0});
    for (int c = 0; c < targets.classes - 1; ++c) {
      const int kp = targets.keypoint_of(i, c);
      if (kp < 0) continue;
      const int ky = kp / targets.w, kx = kp % targets.w;
      for (int y = std::max(0, ky - near_threshold); y <= std::min(targets.h - 1, ky + near_threshold); ++y) {
        for (int x = std::max(0, kx - near_threshold); x <= std::min(targets.w - 1, kx + near_threshold); ++x) {
          near[static_cast<std::size_t>(y) * targets.w + x] = 1;
        }
      }
    }
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t flat = i * plane + p;
      if (targets.labels[flat] != targets.background()) {
        mask.m[flat] = 1;
        continue;
      }
      const double ratio = near[p] ? near_ratio : far_ratio;
      mask.m[flat] = uniform01(rng) < ratio ? 1 : 0;
    }
  }
  return mask;
}

template <typename T>
double misleading_distance(const Tensor<T>& probabilities, const TargetMaps& targets, int i, int y, int x) {
  const Shape& s = probabilities.shape();
  const int fg = targets.classes - 1;
  // Highest-probability foreground class with a key-point; ties go to the
  // smaller class index.
  int best = -1;
  T best_p = T(0);
  for (int c = 0; c < fg; ++c) {
    if (targets.keypoint_of(i, c) < 0) continue;
    const T p = probabilities.data()[s.index(i, c, y, x)];
    if (best < 0 || p > best_p) {
      best = c;
      best_p = p;
    }
  }
  if (best < 0) return std::hypot(static_cast<double>(targets.h), static_cast<double>(targets.w));
  const int kp = targets.keypoint_of(i, best);
  return std::hypot(static_cast<double>(kp % targets.w - x), static_cast<double>(kp / targets.w - y));
}

double dsl_weight(bool foreground, double d, double alpha, double beta, LossVariant variant) {
  if (variant == LossVariant::kOff) return 0.0;
  if (foreground) return alpha;
  if (variant == LossVariant::kSL) return beta;
  return beta * std::log10(d + 1.0);
}

namespace {

void check_loss_shapes(const Shape& s, const TargetMaps& targets, const SampleMask& mask) {
  if (s.n != targets.n || s.c != targets.classes || s.h != targets.h || s.w != targets.w) {
    throw DimensionError("dsl_loss: logits " + s.str() + " do not match targets (" + std::to_string(targets.n) +
                         "," + std::to_string(targets.classes) + "," + std::to_string(targets.h) + "," +
                         std::to_string(targets.w) + ")");
  }
  if (mask.n != targets.n || mask.h != targets.h || mask.w != targets.w) {
    throw DimensionError("dsl_loss: mask geometry does not match targets");
  }
}

}  // namespace

template <typename T>
DslLossValue<T> dsl_loss_values(const Tensor<T>& logits, const TargetMaps& targets, const SampleMask& mask,
                                double alpha, double beta, LossVariant variant) {
  const Shape& s = logits.shape();
  check_loss_shapes(s, targets, mask);
  DslLossValue<T> out;
  out.grad.assign(logits.numel(), T(0));
  out.sampled = mask.count();
  if (out.sampled == 0 || variant == LossVariant::kOff) {
    out.empty_mask = out.sampled == 0;
    return out;
  }
  const std::size_t plane = s.plane();
  const auto z = logits.data();
  std::vector<double> prob(static_cast<std::size_t>(s.c));
  const double inv = 1.0 / static_cast<double>(out.sampled);
  const int fg = s.c - 1;
  double total = 0.0;
  for (int i = 0; i < s.n; ++i) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * s.w + x;
        if (!mask.m[i * plane + p]) continue;
        const std::size_t base = static_cast<std::size_t>(i) * s.c * plane + p;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(z[base + c * plane]));
        double denom = 0.0;
        for (int c = 0; c < s.c; ++c) {
          prob[c] = std::exp(static_cast<double>(z[base + c * plane]) - mx);
          denom += prob[c];
        }
        for (int c = 0; c < s.c; ++c) prob[c] /= denom;
        const int t = targets.labels[i * plane + p];
        double w;
        if (t != fg) {
          w = alpha;
        } else if (variant == LossVariant::kSL) {
          w = beta;
        } else {
          // Same rule as misleading_distance, on the freshly computed softmax.
          int best = -1;
          for (int c = 0; c < fg; ++c) {
            if (targets.keypoint_of(i, c) < 0) continue;
            if (best < 0 || prob[c] > prob[best]) best = c;
          }
          double d;
          if (best < 0) {
            d = std::hypot(static_cast<double>(s.h), static_cast<double>(s.w));
          } else {
            const int kp = targets.keypoint_of(i, best);
            d = std::hypot(static_cast<double>(kp % s.w - x), static_cast<double>(kp / s.w - y));
          }
          w = beta * std::log10(d + 1.0);
        }
        const double log_pt = static_cast<double>(z[base + t * plane]) - mx - std::log(denom);
        total -= w * log_pt;
        const double g = w * inv;
        for (int c = 0; c < s.c; ++c) {
          out.grad[base + c * plane] = static_cast<T>(g * (prob[c] - (c == t ? 1.0 : 0.0)));
        }
      }
    }
  }
  out.loss = total * inv;
  return out;
}

template <typename T>
Tensor<T> dsl_loss(const Tensor<T>& logits, const TargetMaps& targets, const SampleMask& mask, double alpha,
                   double beta, LossVariant variant, bool* empty_mask) {
  DslLossValue<T> v = dsl_loss_values(logits, targets, mask, alpha, beta, variant);
  if (empty_mask) *empty_mask = v.empty_mask;
  auto x_impl = logits.impl_ptr();
  auto grad = std::make_shared<std::vector<T>>(std::move(v.grad));
  return autograd::make_result<T>(
      Shape{1, 1, 1, 1}, {static_cast<T>(v.loss)}, {logits},
      [x_impl, grad](detail::TensorImpl<T>& self) {
        const T g = self.grad[0];
        auto& dst = x_impl->ensure_grad();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g * (*grad)[k];
      },
      "dsl_loss");
}

double beta_schedule(int stage, int epoch_in_stage, int stage_epochs, double base_beta, LossVariant variant) {
  if (stage != 3 || variant != LossVariant::kDSL || stage_epochs <= 1) return base_beta;
  const int e = std::clamp(epoch_in_stage, 0, stage_epochs - 1);
  return base_beta * (0.5 + 0.5 * static_cast<double>(e) / static_cast<double>(stage_epochs - 1));
}

int LossSpec::total_epochs() const {
  int total = 0;
  for (const auto& s : stages) total += s.epochs;
  return total;
}

void LossSpec::validate() const {
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const auto& st = stages[si];
    if (st.epochs < 0) throw ConfigError("stage " + std::to_string(si + 1) + ": negative epoch count");
    bool any = false;
    for (int p = 0; p < kSupervisionPoints; ++p) {
      const auto& lp = st.points[p].params;
      if (!lp.active()) continue;
      any = true;
      const std::string where = std::string("stage ") + std::to_string(si + 1) + " " + kSupervisionNames[p];
      if (!(lp.far_ratio > 0 && lp.far_ratio <= 1) || !(lp.near_ratio > 0 && lp.near_ratio <= 1)) {
        throw ConfigError(where + ": ratios must lie in (0, 1]");
      }
      if (!(lp.alpha > 0)) throw ConfigError(where + ": alpha must be positive");
      if (!(lp.beta > 0)) throw ConfigError(where + ": beta must be positive");
    }
    if (!any) throw ConfigError("stage " + std::to_string(si + 1) + " has no active loss");
  }
}

LossSpec default_loss_spec() {
  const LossParams sl{0.005, 0.1, 1.0, 0.2, LossVariant::kSL};
  const LossParams off{0.005, 0.1, 1.0, 0.2, LossVariant::kOff};
  LossSpec spec;
  spec.stages.resize(3);
  // Stage 1: SL, P-DSL1, P-DSL2.
  spec.stages[0].points = {PointSpec{sl}, PointSpec{sl}, PointSpec{off}, PointSpec{sl}, PointSpec{off}};
  // Stage 2: all five, SL form.
  const LossParams p2{0.001, 0.2, 3.0, 0.1, LossVariant::kSL};
  const LossParams r2{0.01, 0.05, 1.0, 0.3, LossVariant::kSL};
  spec.stages[1].points = {PointSpec{sl}, PointSpec{p2}, PointSpec{r2}, PointSpec{p2}, PointSpec{r2}};
  // Stage 3: decision-pathway points switch to DSL.
  const LossParams p3{0.001, 0.15, 3.0, 0.6, LossVariant::kDSL};
  const LossParams r3{0.01, 0.05, 1.5, 1.0, LossVariant::kDSL};
  spec.stages[2].points = {PointSpec{sl}, PointSpec{p3}, PointSpec{r3}, PointSpec{p3}, PointSpec{r3}};
  for (auto& s : spec.stages) s.epochs = 3;
  return spec;
}

std::string check_policy_asymmetry(const LossSpec& spec, double map_diagonal) {
  auto max_background = [&](const LossParams& lp, double beta) {
    return lp.variant == LossVariant::kDSL ? beta * std::log10(map_diagonal + 1.0) : beta;
  };
  for (std::size_t si = 0; si < spec.stages.size(); ++si) {
    const auto& st = spec.stages[si];
    const int stage = static_cast<int>(si) + 1;
    for (int p : {1, 3}) {
      const auto& lp = st.points[p].params;
      if (!lp.active()) continue;
      // The ramp never exceeds the base value, so the base bounds every epoch.
      if (!(lp.alpha > max_background(lp, lp.beta))) {
        return "stage " + std::to_string(stage) + " " + kSupervisionNames[p] +
               ": alpha does not dominate the background weight";
      }
      const auto& rp = st.points[p + 1].params;
      if (!rp.active()) continue;
      for (int e = 0; e < std::max(1, st.epochs); ++e) {
        const double pb = max_background(lp, beta_schedule(stage, e, st.epochs, lp.beta, lp.variant));
        const double rb = max_background(rp, beta_schedule(stage, e, st.epochs, rp.beta, rp.variant));
        if (!(rb > pb)) {
          return "stage " + std::to_string(stage) + " " + kSupervisionNames[p + 1] +
                 ": distant background is not punished harder than by " + kSupervisionNames[p];
        }
      }
    }
  }
  return {};
}

template <typename T>
std::vector<TargetMaps> targets_for_record(const ForwardRecord<T>& record, const std::vector<LandmarkSet>& batch,
                                           const LossSpec& spec, int stage, int subspaces, int input_size) {
  if (stage < 1 || stage > static_cast<int>(spec.stages.size())) throw ConfigError("stage out of range");
  const auto& st = spec.stages[stage - 1];
  std::vector<TargetMaps> out;
  for (std::size_t p = 0; p < record.supervision.size(); ++p) {
    const Shape& s = record.supervision[p].shape();
    if (s.h != s.w) throw DimensionError("supervision maps must be square");
    std::vector<TargetMaps> parts;
    parts.reserve(batch.size());
    for (const auto& lm : batch) parts.push_back(build_targets(lm, subspaces, input_size, s.h, st.points[p].targets));
    out.push_back(stack_targets(parts));
  }
  return out;
}

template <typename T>
TotalLoss<T> total_loss(const ForwardRecord<T>& record, const std::vector<TargetMaps>& targets,
                        const LossSpec& spec, int stage, int epoch_in_stage, std::uint64_t mask_seed) {
  const std::size_t points = record.supervision.size();
  if (points != 1 && points != static_cast<std::size_t>(kSupervisionPoints)) {
    throw ConfigError("total_loss: record has " + std::to_string(points) + " supervision stacks");
  }
  if (targets.size() != points) {
    throw ConfigError("total_loss: " + std::to_string(targets.size()) + " target sets for " +
                      std::to_string(points) + " supervision stacks");
  }
  if (stage < 1 || stage > static_cast<int>(spec.stages.size())) {
    throw ConfigError("total_loss: stage " + std::to_string(stage) + " is not in the loss spec");
  }
  const auto& st = spec.stages[stage - 1];
  TotalLoss<T> out;
  for (std::size_t p = 0; p < points; ++p) {
    const LossParams& lp = st.points[p].params;
    if (!lp.active()) continue;
    if (!record.supervision[p].defined()) {
      throw ConfigError(std::string("total_loss: ") + kSupervisionNames[p] + " is active but was not computed");
    }
    const SampleMask mask = sample_mask(targets[p], lp.far_ratio, lp.near_ratio,
                                        substream_seed(mask_seed, "mask", {p}));
    const double beta = beta_schedule(stage, epoch_in_stage, st.epochs, lp.beta, lp.variant);
    bool empty = false;
    Tensor<T> term = dsl_loss(record.supervision[p], targets[p], mask, lp.alpha, beta, lp.variant, &empty);
    out.per_point[p] = static_cast<double>(term.item());
    out.active[p] = true;
    out.all_masks_empty = out.all_masks_empty && empty;
    out.total = out.total.defined() ? add(out.total, term) : term;
    ++out.terms;
  }
  if (!out.total.defined()) throw ConfigError("total_loss: no active supervision point");
  return out;
}

#define GODP_INSTANTIATE_LOSS(T)                                                                              \
  template double misleading_distance(const Tensor<T>&, const TargetMaps&, int, int, int);                  \
  template DslLossValue<T> dsl_loss_values(const Tensor<T>&, const TargetMaps&, const SampleMask&, double,   \
                                           double, LossVariant);                                            \
  template Tensor<T> dsl_loss(const Tensor<T>&, const TargetMaps&, const SampleMask&, double, double,        \
                              LossVariant, bool*);                                                          \
  template TotalLoss<T> total_loss(const ForwardRecord<T>&, const std::vector<TargetMaps>&, const LossSpec&, \
                                   int, int, std::uint64_t);                                                \
  template std::vector<TargetMaps> targets_for_record(const ForwardRecord<T>&, const std::vector<LandmarkSet>&, \
                                                      const LossSpec&, int, int, int);

GODP_INSTANTIATE_LOSS(float)
GODP_INSTANTIATE_LOSS(double)

#undef GODP_INSTANTIATE_LOSS

}  // namespace godp
