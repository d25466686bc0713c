#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "godp/checkpoint.hpp"
#include "godp/errors.hpp"
#include "godp/trainer.hpp"

using namespace godp;
namespace fs = std::filesystem;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.landmarks = 5;
  s.input_size = 32;
  s.base_width = 4;
  s.precision = Precision::kFloat64;
  s.seed = 3;
  return s;
}

std::vector<DatasetRecord> tiny_data(int n, std::uint64_t seed) {
  SynthOptions o;
  o.count = n;
  o.seed = seed;
  o.image_size = 48;
  return synth_render(o).records;
}

TrainSchedule quick(int e1, int e2, int e3) {
  TrainSchedule s = default_schedule(Profile::kGodp);
  s.losses.stages[0].epochs = e1;
  s.losses.stages[1].epochs = e2;
  s.losses.stages[2].epochs = e3;
  s.lr_start = 0.05;
  s.lr_end = 5e-4;
  s.momentum = 0.9;
  s.batch_size = 4;
  s.seed = 1;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("godp_test_trainer_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("profiles adjust the built-in table") {
  const auto g = default_schedule(Profile::kGodp);
  CHECK(g.losses == default_loss_spec());
  CHECK(g.total_epochs() == 9);
  CHECK(g.lr_start == 1e-3);
  CHECK(g.lr_end == 1e-7);

  const auto a = default_schedule(Profile::kGodpA);
  CHECK(a.losses.stages[2].points[3].targets == TargetMode::kAll);
  CHECK(a.losses.stages[2].points[4].targets == TargetMode::kAll);
  CHECK(a.losses.stages[2].points[1].targets == TargetMode::kVisibleOnly);
  CHECK(a.losses.stages[1].points[4].targets == TargetMode::kVisibleOnly);

  const auto d = default_schedule(Profile::kGodpDsl);
  for (const auto& p : d.losses.stages[2].points) CHECK(p.params.variant == LossVariant::kSL);
  CHECK(d.losses.stages[2].points[1].params.alpha == 3.0);

  const auto pr = default_schedule(Profile::kGodpDslPr);
  const LossParams sl = default_loss_spec().stages[0].points[0].params;
  for (const auto& st : pr.losses.stages)
    for (const auto& p : st.points)
      if (p.params.active()) CHECK(p.params == sl);
  CHECK(pr.losses.stages[0].points[2].params.variant == LossVariant::kOff);
  CHECK(pr.losses.stages[1].points[2].params.variant == LossVariant::kSL);

  const auto b = default_schedule(Profile::kBaseline);
  for (const auto& st : b.losses.stages) {
    CHECK(st.points[0].params.active());
    for (int p = 1; p < 5; ++p) CHECK_FALSE(st.points[p].params.active());
  }
  for (auto p : {Profile::kGodp, Profile::kGodpA, Profile::kGodpDsl, Profile::kGodpDslPr, Profile::kBaseline}) {
    CHECK(parse_profile(profile_name(p)) == p);
  }
  CHECK_THROWS_AS(parse_profile("nope"), ConfigError);
}

TEST_CASE("stages, learning rate and schedule checks") {
  const auto s = quick(2, 1, 3);
  CHECK(stage_of_epoch(s.losses, 0) == std::pair{1, 0});
  CHECK(stage_of_epoch(s.losses, 1) == std::pair{1, 1});
  CHECK(stage_of_epoch(s.losses, 2) == std::pair{2, 0});
  CHECK(stage_of_epoch(s.losses, 5) == std::pair{3, 2});
  CHECK_THROWS_AS(stage_of_epoch(s.losses, 6), ConfigError);

  TrainSchedule g = default_schedule(Profile::kGodp);
  CHECK(lr_at(g, 0.0) == 1e-3);
  CHECK(lr_at(g, 1.0) == 1e-7);
  CHECK(lr_at(g, 0.5) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_at(g, 0.25) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(g, 2.0) == 1e-7);

  TrainSchedule bad = g;
  bad.lr_end = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = g;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = g;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(g.signature() == default_schedule(Profile::kGodp).signature());
  CHECK(g.signature() != default_schedule(Profile::kGodpA).signature());
  CHECK(g.signature() != quick(3, 3, 3).signature());
}

TEST_CASE("sgd recurrence with momentum") {
  ParamSet<double> ps;
  ps.add("p", Tensor<double>::from({1, 1, 1, 2}, {1.0, 2.0}, true), true);
  ps.add("buf", Tensor<double>::from({1, 1, 1, 1}, {5.0}), false);
  SgdState<double> st;
  // Constant gradient g: v1 = g, v2 = m g + g; p2 = p0 - lr (v1 + v2).
  for (int k = 0; k < 2; ++k) {
    ps.zero_grads();
    auto g = ps.at(0).mutable_grad();
    g[0] = 0.5;
    g[1] = -1.0;
    sgd_step(ps, st, 0.1, 0.9);
  }
  CHECK(ps.at(0).data()[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 1.9 * 0.5)));
  CHECK(ps.at(0).data()[1] == doctest::Approx(2.0 + 0.1 * (1.0 + 1.9)));
  CHECK(ps.at(1).data()[0] == 5.0);
  // Without momentum it is plain gradient descent.
  SgdState<double> plain;
  ps.zero_grads();
  ps.at(0).mutable_grad()[0] = 1.0;
  const double before = ps.at(0).data()[0];
  sgd_step(ps, plain, 0.25, 0.0);
  CHECK(ps.at(0).data()[0] == doctest::Approx(before - 0.25));
}

TEST_CASE("metrics lines are stable text") {
  EpochLog l;
  l.epoch = 2;
  l.stage = 1;
  l.iteration = 16;
  l.lr = 0.001;
  l.loss_total = 1.5;
  l.train_nme = 12.25;
  CHECK(metrics_header().rfind("epoch,stage,iteration,lr,loss_total", 0) == 0);
  CHECK(metrics_line(l) == "2,1,16,0.001,1.5,0,0,0,0,0,12.25\n");
}

TEST_CASE("one image is overfit") {
  const auto data = tiny_data(1, 5);
  TrainSchedule s = quick(15, 15, 20);
  s.batch_size = 1;
  TrainOptions o;
  o.log_train_nme = true;
  auto r = train(build_network<double>(tiny_spec()), s, data, o);
  CHECK(r.iterations == 50);
  REQUIRE(r.iteration_loss.size() == 50);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) first += r.iteration_loss[i];
  for (int i = 45; i < 50; ++i) last += r.iteration_loss[i];
  CHECK(last < 0.5 * first);
  CHECK(r.epochs.back().train_nme < r.epochs.front().train_nme);
  CHECK(r.epochs.back().iteration == 50);
}

TEST_CASE("training is deterministic and writes the documented outputs") {
  const auto data = tiny_data(6, 9);
  const auto s = quick(1, 1, 1);
  const fs::path a = fresh_dir("a"), b = fresh_dir("b");
  TrainOptions oa, ob;
  oa.out_dir = a;
  ob.out_dir = b;
  ob.threads = 3;
  train(build_network<double>(tiny_spec()), s, data, oa);
  train(build_network<double>(tiny_spec()), s, data, ob);
  for (const char* f : {"initial.ckpt", "stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt", "metrics.csv"}) {
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK_FALSE(fs::exists(a / "diverged.ckpt"));
  // Header plus one line per epoch.
  const std::string m = slurp(a / "metrics.csv");
  CHECK(std::count(m.begin(), m.end(), '\n') == 4);
}

TEST_CASE("zero-epoch schedule writes only the initial checkpoint") {
  const auto data = tiny_data(2, 1);
  const fs::path d = fresh_dir("zero");
  TrainOptions o;
  o.out_dir = d;
  auto r = train(build_network<double>(tiny_spec()), quick(0, 0, 0), data, o);
  CHECK(r.iterations == 0);
  CHECK(fs::exists(d / "initial.ckpt"));
  CHECK_FALSE(fs::exists(d / "final.ckpt"));
  CHECK_FALSE(fs::exists(d / "metrics.csv"));
}

TEST_CASE("a resumed run matches an uninterrupted one bit for bit") {
  const auto data = tiny_data(5, 2);
  const auto s = quick(1, 2, 1);
  const fs::path full = fresh_dir("full"), part = fresh_dir("part"), rest = fresh_dir("rest");
  TrainOptions of;
  of.out_dir = full;
  train(build_network<double>(tiny_spec()), s, data, of);

  TrainOptions op;
  op.out_dir = part;
  op.stop_after_epoch = 2;  // inside stage 2
  auto r1 = train(build_network<double>(tiny_spec()), s, data, op);
  CHECK(r1.epochs.size() == 2);
  REQUIRE(fs::exists(part / "epoch2.ckpt"));
  CHECK_FALSE(fs::exists(part / "final.ckpt"));

  TrainOptions orr;
  orr.out_dir = rest;
  orr.resume_from = part / "epoch2.ckpt";
  auto r2 = train(build_network<double>(tiny_spec()), s, data, orr);
  CHECK(r2.epochs.size() == 2);
  CHECK(slurp(full / "final.ckpt") == slurp(rest / "final.ckpt"));
  CHECK(slurp(full / "metrics.csv") == slurp(rest / "metrics.csv"));

  TrainOptions wrong;
  wrong.resume_from = part / "epoch2.ckpt";
  CHECK_THROWS_AS(train(build_network<double>(tiny_spec()), quick(1, 2, 2), data, wrong), CheckpointError);
}

TEST_CASE("a diverging run aborts with a checkpoint") {
  const auto data = tiny_data(2, 4);
  TrainSchedule s = quick(2, 0, 0);
  s.lr_start = s.lr_end = 1e250;
  s.momentum = 0;
  const fs::path d = fresh_dir("nan");
  TrainOptions o;
  o.out_dir = d;
  o.log_train_nme = false;
  CHECK_THROWS_AS(train(build_network<double>(tiny_spec()), s, data, o), TrainingError);
  CHECK(fs::exists(d / "diverged.ckpt"));
}

TEST_CASE("inconsistent datasets are rejected") {
  auto data = tiny_data(2, 4);
  CHECK_THROWS_AS(train(build_network<double>(tiny_spec()), quick(1, 0, 0), {}), DataError);
  data[1].landmarks.pose_bucket = 1;
  CHECK_THROWS_AS(train(build_network<double>(tiny_spec()), quick(1, 0, 0), data), DataError);
}
