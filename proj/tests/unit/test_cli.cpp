#include <filesystem>
#include <fstream>
#include <sstream>

#include "../../tools/cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using godp::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int c = run(args, o, e);
  return {c, o.str(), e.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("godp_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Body of the README section "### godp <sub>" up to the next heading.
std::string readme_section(const std::string& readme, const std::string& sub) {
  const std::string head = "### godp " + sub;
  const auto a = readme.find(head + "\n");
  if (a == std::string::npos) return {};
  const auto b = readme.find("\n#", a + head.size());
  return readme.substr(a, b == std::string::npos ? std::string::npos : b - a);
}

}  // namespace

TEST_CASE("help enumerates every flag and the README documents them") {
  const std::string readme = slurp(fs::path(GODP_SOURCE_DIR) / "README.md");
  REQUIRE_FALSE(readme.empty());
  for (const auto& sub : godp::cli::subcommands()) {
    const auto help = call({sub, "--help"});
    CHECK(help.code == 0);
    const std::string section = readme_section(readme, sub);
    CHECK_MESSAGE(!section.empty(), "README lacks a section for " << sub);
    const auto flags = godp::cli::flags_of(sub);
    CHECK_FALSE(flags.empty());
    for (const auto& flag : flags) {
      CHECK_MESSAGE(help.out.find(flag) != std::string::npos, sub << " --help misses " << flag);
      if (flag == "--help" || flag == "--help-all") continue;
      CHECK_MESSAGE(section.find("`" + flag) != std::string::npos, "README misses " << sub << " " << flag);
    }
    // And nothing documented is missing from the binary.
    std::istringstream in(section);
    for (std::string line; std::getline(in, line);) {
      const auto p = line.find("`--");
      if (p == std::string::npos || line.rfind("- ", 0) != 0) continue;
      const auto q = line.find_first_of(" `", p + 1);
      const std::string flag = line.substr(p + 1, q - p - 1);
      CHECK_MESSAGE(std::find(flags.begin(), flags.end(), flag) != flags.end(), "README documents unknown " << flag);
    }
  }
  CHECK(call({"--help-all"}).code == 0);
}

TEST_CASE("usage errors exit 1") {
  CHECK(call({}).code == 1);
  CHECK(call({"frobnicate"}).code == 1);
  CHECK(call({"train"}).code == 1);
  CHECK(call({"gradcheck", "--scope", "everything"}).code == 1);
  const fs::path d = fresh_dir("badcfg");
  std::ofstream(d / "bad.cfg") << "seed = 1\n[network]\nbogus_key = 3\n";
  const auto r = call({"describe", "--config", (d / "bad.cfg").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("bogus_key") != std::string::npos);
  std::ofstream(d / "noseed.cfg") << "[network]\nlandmarks = 5\n";
  CHECK(call({"describe", "--config", (d / "noseed.cfg").string()}).code == 1);
  CHECK(call({"eval", "--manifest", "x", "--out", "y"}).code == 1);
}

TEST_CASE("data errors exit 2") {
  const fs::path d = fresh_dir("missing");
  const auto r = call({"train", "--data", (d / "nope.txt").string(), "--out", (d / "o").string()});
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
  CHECK(call({"describe", "--checkpoint", (d / "nope.ckpt").string()}).code == 2);
}

TEST_CASE("gradcheck exits 0") {
  const auto r = call({"gradcheck", "--scope", "ops"});
  CHECK(r.code == 0);
  CHECK(r.out.find("passed") != std::string::npos);
}

TEST_CASE("describe reports the decision pathway") {
  const auto g = call({"describe"});
  REQUIRE(g.code == 0);
  CHECK(g.out.find("supervision_points 5") != std::string::npos);
  CHECK(g.out.find("decision_updates 4") != std::string::npos);
  CHECK(g.out.find("policy_asymmetry ok") != std::string::npos);
  const auto b = call({"describe", "--variant", "hgn"});
  CHECK(b.out.find("supervision_points 1") != std::string::npos);
}

TEST_CASE("synth, train, predict, eval and robustness run end to end on defaults") {
  const fs::path d = fresh_dir("pipeline");
  std::ofstream(d / "run.cfg") << "seed = 3\n[data]\ncount = 8\n[schedule]\nepochs = 1,1,1\n[eval]\nsigmas = 0,30\ntrials = 2\n";
  const std::string cfg = (d / "run.cfg").string();
  REQUIRE(call({"synth", "--config", cfg, "--out", (d / "data").string()}).code == 0);
  REQUIRE(fs::exists(d / "data/manifest.txt"));
  CHECK(fs::exists(d / "data/images/000000.pgm"));
  // Synthesis is idempotent.
  REQUIRE(call({"synth", "--config", cfg, "--out", (d / "data2").string()}).code == 0);
  CHECK(slurp(d / "data/manifest.txt") == slurp(d / "data2/manifest.txt"));

  const auto t = call({"train", "--config", cfg, "--data", (d / "data/manifest.txt").string(), "--out",
                       (d / "run").string()});
  REQUIRE(t.code == 0);
  for (const char* f : {"initial.ckpt", "stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt", "metrics.csv"}) {
    CHECK(fs::exists(d / "run" / f));
  }
  const std::string ckpt = (d / "run/final.ckpt").string(), man = (d / "data/manifest.txt").string();
  REQUIRE(call({"predict", "--config", cfg, "--checkpoint", ckpt, "--manifest", man, "--out",
                (d / "pred.txt").string()})
              .code == 0);
  const auto e1 = call({"eval", "--config", cfg, "--checkpoint", ckpt, "--manifest", man, "--out", (d / "ev1").string()});
  REQUIRE(e1.code == 0);
  const auto e2 = call({"eval", "--config", cfg, "--predictions", (d / "pred.txt").string(), "--manifest", man,
                        "--out", (d / "ev2").string()});
  REQUIRE(e2.code == 0);
  for (const char* f : {"eval_report.csv", "eval_summary.csv", "ced.csv", "ced.svg"}) {
    CHECK(fs::exists(d / "ev1" / f));
    CHECK(fs::exists(d / "ev2" / f));
  }
  CHECK(slurp(d / "ev1/eval_report.csv") == slurp(d / "ev2/eval_report.csv"));
  CHECK(e1.out.find("mpk") != std::string::npos);
  const auto r = call({"robustness", "--config", cfg, "--checkpoint", ckpt, "--manifest", man, "--out",
                       (d / "rob").string(), "--threads", "2"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(d / "rob/robustness.csv"));
  const auto d2 = call({"describe", "--checkpoint", ckpt});
  CHECK(d2.code == 0);

  // Same seed, same outputs; a different seed changes them.
  REQUIRE(call({"train", "--config", cfg, "--data", man, "--out", (d / "run2").string(), "--threads", "2"}).code == 0);
  CHECK(slurp(d / "run/final.ckpt") == slurp(d / "run2/final.ckpt"));
  CHECK(slurp(d / "run/metrics.csv") == slurp(d / "run2/metrics.csv"));
  REQUIRE(call({"train", "--config", cfg, "--seed", "4", "--data", man, "--out", (d / "run3").string(),
                "--stop-after", "1", "--no-train-nme"})
              .code == 0);
  CHECK(fs::exists(d / "run3/epoch1.ckpt"));
  CHECK(slurp(d / "run/stage1.ckpt") != slurp(d / "run3/epoch1.ckpt"));
}
