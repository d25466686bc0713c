#pragma once

// Staged SGD training.
//
// One iteration: forward (train mode) -> total_loss -> backward -> sgd_step.
// All randomness of iteration i derives from (seed, i) and the epoch number,
// so a run resumed from a checkpoint continues bit-for-bit.
//
// Output directory layout:
//   initial.ckpt, stage<N>.ckpt, final.ckpt, diverged.ckpt (on NaN abort),
//   epoch<N>.ckpt when stop_after_epoch ends the run early
//   metrics.csv  epoch,stage,iteration,lr,loss_total,loss_SL,loss_PDSL1,
//                loss_RDSL1,loss_PDSL2,loss_RDSL2,train_nme

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "godp/data.hpp"
#include "godp/loss.hpp"
#include "godp/network.hpp"

namespace godp {

enum class Profile { kGodp, kGodpA, kGodpDsl, kGodpDslPr, kBaseline };

std::string_view profile_name(Profile p);
Profile parse_profile(std::string_view name);

struct TrainSchedule {
  LossSpec losses;
  double lr_start = 1e-3;
  double lr_end = 1e-7;
  int batch_size = 8;
  double momentum = 0.0;
  double grad_clip = 0.0;  // global L2 norm bound; 0 disables
  std::uint64_t seed = 0;

  int total_epochs() const { return losses.total_epochs(); }
  // Throws ConfigError.
  void validate() const;
  // Canonical text of every field; equal strings mean equal schedules.
  std::string signature() const;
};

// Three stages of three epochs with the built-in loss table, adjusted per
// profile:
//   godp         as tabled
//   godp_a       stage-3 P-DSL2/R-DSL2 train on all landmarks
//   godp_dsl     stage-3 decision-pathway points keep the SL form
//   godp_dsl_pr  every active point uses the stage-1 SL parameters
//   baseline     only the SL point (for single-output networks)
TrainSchedule default_schedule(Profile profile);

// 1-based stage containing a 0-based global epoch and the epoch within it.
std::pair<int, int> stage_of_epoch(const LossSpec& losses, int epoch);

// Geometric interpolation lr_start * (lr_end / lr_start)^f, f clamped to [0, 1].
double lr_at(const TrainSchedule& schedule, double fraction);

template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;  // per ParamSet entry; empty for buffers
};

// v <- momentum * v + g; p <- p - lr * v for every learnable entry.
// Entries that received no gradient are treated as zero gradient.
template <typename T>
void sgd_step(ParamSet<T>& params, SgdState<T>& state, double lr, double momentum);

struct EpochLog {
  int epoch = 0;      // 1-based
  int stage = 0;      // 1-based
  long iteration = 0; // iterations completed so far
  double lr = 0.0;
  double loss_total = 0.0;
  std::array<double, kSupervisionPoints> loss_points{};
  double train_nme = 0.0;
};

std::string metrics_header();
std::string metrics_line(const EpochLog& log);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: write nothing
  std::filesystem::path resume_from;
  // Stop after this many epochs in total (for interrupted runs); -1 runs all.
  int stop_after_epoch = -1;
  bool log_train_nme = true;
  int threads = 1;  // preprocessing only; the optimization loop is sequential
  std::function<void(const EpochLog&)> on_epoch;
};

template <typename T>
struct TrainResult {
  Network<T> network;
  std::vector<EpochLog> epochs;
  std::vector<double> iteration_loss;  // total loss of every iteration run in this call
  long iterations = 0;
};

// Trains `network` in place of a fresh one unless options.resume_from is set,
// in which case network and progress come from that checkpoint.
// Throws DataError on an empty or inconsistent dataset, TrainingError on a
// non-finite loss (after writing diverged.ckpt).
template <typename T>
TrainResult<T> train(Network<T> network, const TrainSchedule& schedule, const std::vector<DatasetRecord>& dataset,
                     const TrainOptions& options = {});

}  // namespace godp
