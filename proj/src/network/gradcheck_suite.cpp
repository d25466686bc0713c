#include "godp/gradcheck_suite.hpp"

#include <chrono>
#include <functional>

#include "godp/errors.hpp"
#include "godp/loss.hpp"
#include "godp/network.hpp"
#include "godp/ops.hpp"
#include "godp/rng.hpp"

namespace godp {

namespace {

using TD = Tensor<double>;

TD random_leaf(Shape s, Rng& rng, double scale = 1.0) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = scale * (2.0 * uniform01(rng) - 1.0);
  return TD::from(s, std::move(v), true);
}

// Projection onto a fixed random direction turns any op into a scalar loss
// that exercises every output element.
std::function<TD(const TD&)> projector(Rng& rng) {
  auto dir = std::make_shared<std::vector<double>>();
  auto seed = rng();
  return [dir, seed](const TD& y) {
    if (dir->size() != y.numel()) {
      Rng r(seed);
      dir->resize(y.numel());
      for (auto& v : *dir) v = 2.0 * uniform01(r) - 1.0;
    }
    return weighted_sum(y, std::span<const double>(*dir));
  };
}

struct Runner {
  std::vector<GradcheckCase> cases;
  double tolerance;
  GradcheckOptions opts;

  void run(const std::string& name, const std::function<TD()>& loss, const std::vector<TD>& inputs,
           int probes = 16) {
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckOptions o = opts;
    o.probes_per_input = probes;
    GradcheckCase c;
    c.name = name;
    c.result = gradcheck(loss, inputs, o);
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.passed = c.result.probes > 0 && c.result.max_relative_error <= tolerance;
    cases.push_back(std::move(c));
  }
};

void op_cases(Runner& r, Rng& rng) {
  {
    TD x = random_leaf({2, 3, 6, 5}, rng), k = random_leaf({4, 3, 3, 3}, rng), b = random_leaf({1, 4, 1, 1}, rng);
    auto proj = projector(rng);
    r.run("conv2d stride1 pad1", [=] { return proj(conv2d(x, k, b, 1, 1)); }, {x, k, b});
  }
  {
    TD x = random_leaf({1, 2, 7, 7}, rng), k = random_leaf({3, 2, 3, 3}, rng);
    auto proj = projector(rng);
    r.run("conv2d stride2 pad0", [=] { return proj(conv2d(x, k, TD(), 2, 0)); }, {x, k});
  }
  {
    TD x = random_leaf({2, 3, 5, 4}, rng), k = random_leaf({3, 2, 3, 3}, rng), b = random_leaf({1, 2, 1, 1}, rng);
    auto proj = projector(rng);
    r.run("deconv2d stride1 pad1", [=] { return proj(deconv2d(x, k, b, 1, 1)); }, {x, k, b});
  }
  {
    TD x = random_leaf({1, 2, 3, 3}, rng), k = random_leaf({2, 3, 2, 2}, rng);
    auto proj = projector(rng);
    r.run("deconv2d stride2 pad0", [=] { return proj(deconv2d(x, k, TD(), 2, 0)); }, {x, k});
  }
  {
    TD x = random_leaf({2, 2, 6, 4}, rng);
    auto proj = projector(rng);
    r.run("maxpool2", [=] { return proj(maxpool2(x).value); }, {x}, 32);
  }
  {
    TD src = TD::from({1, 2, 4, 6}, [&] {
      std::vector<double> v(48);
      for (auto& e : v) e = uniform01(rng);
      return v;
    }());
    const SwitchMap sw = maxpool2(src).switches;
    TD x = random_leaf({1, 2, 2, 3}, rng);
    auto proj = projector(rng);
    r.run("unpool2", [=] { return proj(unpool2(x, sw)); }, {x});
  }
  for (bool train : {true, false}) {
    TD x = random_leaf({3, 2, 3, 3}, rng), g = random_leaf({1, 2, 1, 1}, rng), b = random_leaf({1, 2, 1, 1}, rng);
    auto mean = std::make_shared<TD>(TD::from({1, 2, 1, 1}, {0.1, -0.2}));
    auto var = std::make_shared<TD>(TD::from({1, 2, 1, 1}, {0.8, 1.3}));
    auto proj = projector(rng);
    const BatchNormOptions o{train ? BatchNormMode::kTrain : BatchNormMode::kEval, 0.9, 1e-5};
    r.run(std::string("batchnorm ") + (train ? "train" : "eval"),
          [=] { return proj(batchnorm(x, g, b, *mean, *var, o)); }, {x, g, b});
  }
  {
    TD x = random_leaf({2, 3, 4, 4}, rng);
    auto proj = projector(rng);
    r.run("relu", [=] { return proj(relu(x)); }, {x}, 32);
  }
  {
    TD a = random_leaf({1, 2, 3, 3}, rng), b = random_leaf({1, 2, 3, 3}, rng);
    auto proj = projector(rng);
    r.run("add", [=] { return proj(add(a, b)); }, {a, b});
  }
  {
    TD a = random_leaf({2, 1, 3, 2}, rng), b = random_leaf({2, 3, 3, 2}, rng);
    auto proj = projector(rng);
    r.run("concat_channels", [=] { return proj(concat_channels<double>({a, b})); }, {a, b});
  }
  {
    TD x = random_leaf({2, 5, 3, 2}, rng);
    auto proj = projector(rng);
    r.run("slice_channels", [=] { return proj(slice_channels(x, 1, 3)); }, {x});
  }
  {
    TD x = random_leaf({1, 2, 4, 3}, rng);
    auto proj = projector(rng);
    r.run("bilinear_upsample2", [=] { return proj(bilinear_upsample2(x)); }, {x});
  }
  {
    TD x = random_leaf({2, 4, 3, 3}, rng, 3.0);
    auto proj = projector(rng);
    r.run("channel_softmax", [=] { return proj(channel_softmax(x)); }, {x});
  }
  {
    TD x = random_leaf({1, 2, 3, 3}, rng);
    r.run("sum", [=] { return sum(x); }, {x});
  }
  {
    TD x = random_leaf({2, 5, 3, 3}, rng);
    auto proj = projector(rng);
    r.run("merge_pose_subspaces", [=] { return proj(merge_pose_subspaces(channel_softmax(x), 2, 2)); }, {x});
  }
}

void loss_cases(Runner& r, Rng& rng) {
  LandmarkSet lm;
  lm.points = {{3.0, 4.0}, {10.0, 2.0}, {6.0, 12.0}};
  lm.visible = {1, 1, 1};
  lm.pose_bucket = 1;
  const TargetMaps t = stack_targets({build_targets(lm, 2, 16, 8, TargetMode::kVisibleOnly),
                                      build_targets(lm, 2, 16, 8, TargetMode::kVisibleOnly)});
  const SampleMask m = sample_mask(t, 0.5, 0.8, 7);
  for (LossVariant v : {LossVariant::kSL, LossVariant::kDSL}) {
    TD z = random_leaf({2, 7, 8, 8}, rng, 2.0);
    r.run(std::string("dsl_loss ") + std::string(loss_variant_name(v)),
          [=] { return dsl_loss(z, t, m, 2.0, 0.7, v); }, {z}, 48);
  }
}

void network_cases(Runner& r, Rng& rng, std::uint64_t seed) {
  NetworkSpec spec;
  spec.variant = Variant::kGodp;
  spec.input_size = 32;
  spec.base_width = 2;
  spec.width_cap = 8;
  spec.converter_width = 3;
  spec.landmarks = 2;
  spec.subspaces = 2;
  spec.precision = Precision::kFloat64;
  spec.seed = seed;
  auto net = std::make_shared<Network<double>>(build_network<double>(spec));
  std::vector<double> px(2 * 32 * 32);
  for (auto& v : px) v = uniform01(rng);
  TD images = TD::from({2, 1, 32, 32}, px, true);
  std::vector<LandmarkSet> batch(2);
  for (int i = 0; i < 2; ++i) {
    batch[i].points = {{8.0 + 3 * i, 10.0}, {20.0, 22.0 - 4 * i}};
    batch[i].visible = {1, 1};
    batch[i].pose_bucket = i;
  }
  const LossSpec losses = default_loss_spec();
  // Stage three drives every decision update and the DSL weights.
  auto loss = [net, images, batch, losses] {
    ForwardOptions fo;
    fo.mode = ForwardMode::kTrain;
    ForwardRecord<double> rec = forward(*net, images, fo);
    auto targets = targets_for_record(rec, batch, losses, 3, 2, 32);
    return total_loss(rec, targets, losses, 3, 1, 11).total;
  };
  std::vector<TD> inputs{images};
  for (std::size_t i = 0; i < net->params().size(); ++i) {
    if (net->params().entry(i).learnable) inputs.push_back(net->params().at(i));
  }
  r.run("godp forward + total_loss", loss, inputs, 4);
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(std::string_view scope, std::uint64_t seed, double tolerance) {
  const bool all = scope == "all";
  if (!all && scope != "ops" && scope != "loss" && scope != "network") {
    throw UsageError("gradcheck scope must be ops, loss, network or all");
  }
  Runner r{{}, tolerance, {}};
  r.opts.step = 1e-5;
  r.opts.floor = 1e-6;
  r.opts.kink_tolerance = 1e-4;
  r.opts.seed = seed;
  Rng rng = make_rng(seed, "gradcheck");
  if (all || scope == "ops") op_cases(r, rng);
  if (all || scope == "loss") loss_cases(r, rng);
  if (all || scope == "network") network_cases(r, rng, seed);
  return r.cases;
}

}  // namespace godp
