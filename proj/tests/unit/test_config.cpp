#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "godp/config.hpp"
#include "godp/errors.hpp"

using namespace godp;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text, ".");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("minimal config uses the defaults") {
  const RunConfig c = parse_run_config("seed = 12\n", ".");
  CHECK(c.seed == 12);
  CHECK(c.seed_from_file);
  CHECK(c.network.seed == 12);
  CHECK(c.schedule.seed == 12);
  CHECK(c.data.synth.seed == 12);
  CHECK(c.profile == Profile::kGodp);
  CHECK(c.schedule.losses == default_loss_spec());
  CHECK(c.network.input_size == default_run_config().network.input_size);
}

TEST_CASE("full config") {
  const std::string text =
      "# a comment\n"
      "seed = 4\n"
      "[network]\n"
      "variant = hgn\n"
      "landmarks = 3\n"
      "subspaces = 2\n"
      "input_size = 32\n"
      "base_width = 4\n"
      "precision = float64\n"
      "[schedule]\n"
      "profile = godp_dsl\n"
      "lr_start = 0.05\n"
      "lr_end = 0.0005\n"
      "momentum = 0.9\n"
      "batch_size = 4\n"
      "epochs = 2, 3, 4\n"
      "[losses]\n"
      "R-DSL2.stage3.beta = 0.75\n"
      "PDSL1.stage2.variant = DSL\n"
      "PDSL2.stage3.targets = all\n"
      "[data]\n"
      "train_manifest = data/train.txt\n"
      "count = 10\n"
      "occlusion_rate = 0.25\n"
      "[eval]\n"
      "normalization = iod\n"
      "face_size = max\n"
      "sigmas = 0, 10, 20\n"
      "trials = 2\n"
      "centroid_refinement = true\n";
  const RunConfig c = parse_run_config(text, "/tmp/base");
  CHECK(c.network.variant == Variant::kHgn);
  CHECK(c.network.landmarks == 3);
  CHECK(c.network.precision == Precision::kFloat64);
  CHECK(c.profile == Profile::kGodpDsl);
  CHECK(c.schedule.lr_start == 0.05);
  CHECK(c.schedule.momentum == 0.9);
  CHECK(c.schedule.losses.stages[2].epochs == 4);
  CHECK(c.schedule.losses.stages[2].points[4].params.beta == 0.75);
  // The profile applies first, overrides after.
  CHECK(c.schedule.losses.stages[2].points[1].params.variant == LossVariant::kSL);
  CHECK(c.schedule.losses.stages[1].points[1].params.variant == LossVariant::kDSL);
  CHECK(c.schedule.losses.stages[2].points[3].targets == TargetMode::kAll);
  CHECK(c.data.train_manifest == fs::path("/tmp/base/data/train.txt"));
  CHECK(c.data.synth.count == 10);
  CHECK(c.eval.nme.normalization == Normalization::kIod);
  CHECK(c.eval.nme.face_size == FaceSizeRule::kMaxSide);
  CHECK(c.eval.sigmas == std::vector<double>{0, 10, 20});
  CHECK(c.eval.decode.centroid_refinement);
}

TEST_CASE("errors name the line and key") {
  CHECK(error_of("[network]\nlandmarks = 5\n").find("seed") != std::string::npos);
  const std::string unknown = error_of("seed = 1\n[network]\nwidht = 3\n");
  CHECK(unknown.find("line 3") != std::string::npos);
  CHECK(unknown.find("widht") != std::string::npos);
  CHECK(error_of("seed = 1\n[nope]\n").find("nope") != std::string::npos);
  CHECK(error_of("seed = 1\nseed = 2\n").find("duplicate") != std::string::npos);
  CHECK(error_of("seed = 1\n[network]\nlandmarks = five\n").find("landmarks") != std::string::npos);
  CHECK(error_of("seed = 1\n[losses]\nQ.stage1.alpha = 2\n").find("Q.stage1.alpha") != std::string::npos);
  CHECK(error_of("seed = 1\n[losses]\nSL.stage4.alpha = 2\n").find("stage4") != std::string::npos);
  CHECK(error_of("seed = 1\n[losses]\nSL.stage1.gamma = 2\n").find("gamma") != std::string::npos);
  CHECK_FALSE(error_of("seed = 1\n[schedule]\nepochs = 1,2\n").empty());
  CHECK_FALSE(error_of("seed = 1\n[network]\ninput_size = 50\n").empty());
  CHECK_FALSE(error_of("seed = 1\njunk\n").empty());
  CHECK_FALSE(error_of("seed = -3\n").empty());
  CHECK_FALSE(error_of("seed = 1\n[losses]\nSL.stage1.far_ratio = 0\n").empty());
  CHECK(error_of("seed = 1\n").empty());
}

TEST_CASE("seed precedence: flag over environment over file") {
  RunConfig c = parse_run_config("seed = 5\n", ".");
  unsetenv("GODP_SEED");
  CHECK(resolve_seed(c, std::nullopt) == 5);
  setenv("GODP_SEED", "77", 1);
  CHECK(resolve_seed(c, std::nullopt) == 77);
  CHECK(resolve_seed(c, 9) == 9);
  setenv("GODP_SEED", "bad", 1);
  CHECK_THROWS_AS(resolve_seed(c, std::nullopt), ConfigError);
  unsetenv("GODP_SEED");
  apply_seed(c, 123);
  CHECK(c.network.seed == 123);
  CHECK(c.schedule.seed == 123);
}

TEST_CASE("load_run_config resolves paths against the file") {
  const fs::path d = fs::temp_directory_path() / "godp_test_config";
  fs::create_directories(d);
  std::ofstream(d / "run.cfg") << "seed = 2\n[data]\neval_manifest = held/manifest.txt\n";
  const RunConfig c = load_run_config(d / "run.cfg");
  CHECK(c.data.eval_manifest == d / "held/manifest.txt");
  CHECK_THROWS_AS(load_run_config(d / "missing.cfg"), ConfigError);
}

TEST_CASE("config_keys lists every section") {
  const auto keys = config_keys();
  for (const char* k : {"seed", "network.variant", "schedule.epochs", "data.count", "eval.sigmas"}) {
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
  }
}
