#pragma once

// Run configuration: `key = value` lines grouped under [network],
// [schedule], [losses], [data] and [eval]; `seed` sits before the first
// section. '#' starts a comment. Unknown sections or keys are rejected.
//
//   seed = 7
//   [network]   variant landmarks subspaces input_size base_width width_cap
//               converter_width precision
//   [schedule]  profile lr_start lr_end batch_size momentum grad_clip epochs
//   [losses]    <point>.stage<N>.<field>, point in SL P-DSL1 R-DSL1 P-DSL2
//               R-DSL2, field in far_ratio near_ratio alpha beta variant targets
//   [data]      train_manifest eval_manifest count image_size occlusion_rate
//               noise_sigma
//   [eval]      normalization face_size iod_left iod_right
//               visibility_threshold centroid_refinement ced_max ced_steps
//               sigmas trials batch_size
//
// Relative paths resolve against the directory of the config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "godp/data.hpp"
#include "godp/metrics.hpp"
#include "godp/network.hpp"
#include "godp/trainer.hpp"

namespace godp {

struct DataConfig {
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;
  SynthOptions synth;
};

struct EvalConfig {
  NmeOptions nme;
  DecodeOptions decode;
  double ced_max = 20.0;
  int ced_steps = 41;
  std::vector<double> sigmas = {0, 5, 10, 15, 20, 25, 30};
  int trials = 5;
  int batch_size = 8;
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_from_file = false;
  NetworkSpec network;
  Profile profile = Profile::kGodp;
  TrainSchedule schedule;
  DataConfig data;
  EvalConfig eval;
  std::filesystem::path base_dir = ".";
};

RunConfig default_run_config();

// Throws ConfigError naming the offending line and key.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Propagates one seed to every consumer (init, data, mask, noise, shuffle).
void apply_seed(RunConfig& config, std::uint64_t seed);

// Seed precedence: flag, then GODP_SEED, then the config file.
std::uint64_t resolve_seed(const RunConfig& config, std::optional<std::uint64_t> flag_seed);

// Every accepted key as "section.key", for documentation.
std::vector<std::string> config_keys();

}  // namespace godp
