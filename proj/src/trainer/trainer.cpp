#include "godp/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "godp/checkpoint.hpp"
#include "godp/errors.hpp"
#include "godp/inference.hpp"
#include "godp/metrics.hpp"
#include "godp/rng.hpp"

namespace godp {

std::string_view profile_name(Profile p) {
  switch (p) {
    case Profile::kGodp: return "godp";
    case Profile::kGodpA: return "godp_a";
    case Profile::kGodpDsl: return "godp_dsl";
    case Profile::kGodpDslPr: return "godp_dsl_pr";
    case Profile::kBaseline: return "baseline";
  }
  return "?";
}

Profile parse_profile(std::string_view name) {
  for (Profile p : {Profile::kGodp, Profile::kGodpA, Profile::kGodpDsl, Profile::kGodpDslPr, Profile::kBaseline}) {
    if (profile_name(p) == name) return p;
  }
  throw ConfigError("unknown training profile '" + std::string(name) +
                    "' (expected godp, godp_a, godp_dsl, godp_dsl_pr or baseline)");
}

void TrainSchedule::validate() const {
  losses.validate();
  if (!(lr_start >= lr_end && lr_end > 0)) throw ConfigError("schedule: need lr_start >= lr_end > 0");
  if (batch_size < 1) throw ConfigError("schedule: batch_size must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("schedule: momentum must lie in [0, 1)");
  if (!(grad_clip >= 0)) throw ConfigError("schedule: grad_clip must be non-negative");
}

namespace {

std::string exact(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string TrainSchedule::signature() const {
  std::ostringstream s;
  s << "lr=" << exact(lr_start) << ":" << exact(lr_end) << ";batch=" << batch_size << ";momentum=" << exact(momentum)
    << ";clip=" << exact(grad_clip) << ";seed=" << seed;
  for (const auto& st : losses.stages) {
    s << ";stage(" << st.epochs;
    for (const auto& p : st.points) {
      s << "," << loss_variant_name(p.params.variant) << ":" << exact(p.params.far_ratio) << ":"
        << exact(p.params.near_ratio) << ":" << exact(p.params.alpha) << ":" << exact(p.params.beta) << ":"
        << target_mode_name(p.targets);
    }
    s << ")";
  }
  return s.str();
}

TrainSchedule default_schedule(Profile profile) {
  TrainSchedule s;
  s.losses = default_loss_spec();
  auto& st = s.losses.stages;
  switch (profile) {
    case Profile::kGodp:
      break;
    case Profile::kGodpA:
      st[2].points[3].targets = TargetMode::kAll;
      st[2].points[4].targets = TargetMode::kAll;
      break;
    case Profile::kGodpDsl:
      for (auto& p : st[2].points) {
        if (p.params.variant == LossVariant::kDSL) p.params.variant = LossVariant::kSL;
      }
      break;
    case Profile::kGodpDslPr: {
      const LossParams sl = st[0].points[0].params;
      for (auto& stage : st) {
        for (auto& p : stage.points) {
          if (p.params.active()) p.params = sl;
        }
      }
      break;
    }
    case Profile::kBaseline:
      for (auto& stage : st) {
        for (int p = 1; p < kSupervisionPoints; ++p) stage.points[p].params.variant = LossVariant::kOff;
      }
      break;
  }
  return s;
}

std::pair<int, int> stage_of_epoch(const LossSpec& losses, int epoch) {
  int start = 0;
  for (std::size_t s = 0; s < losses.stages.size(); ++s) {
    if (epoch < start + losses.stages[s].epochs) return {static_cast<int>(s) + 1, epoch - start};
    start += losses.stages[s].epochs;
  }
  throw ConfigError("epoch " + std::to_string(epoch) + " lies beyond the schedule");
}

double lr_at(const TrainSchedule& schedule, double fraction) {
  const double f = std::clamp(fraction, 0.0, 1.0);
  if (f == 0.0) return schedule.lr_start;
  if (f == 1.0) return schedule.lr_end;
  return schedule.lr_start * std::pow(schedule.lr_end / schedule.lr_start, f);
}

template <typename T>
void sgd_step(ParamSet<T>& params, SgdState<T>& state, double lr, double momentum) {
  state.velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).learnable) continue;
    Tensor<T>& p = params.at(i);
    auto& v = state.velocity[i];
    if (v.empty()) v.assign(p.numel(), T(0));
    const auto g = p.grad();
    auto data = p.mutable_data();
    const T m = static_cast<T>(momentum), step = static_cast<T>(lr);
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = m * v[k] + (g.empty() ? T(0) : g[k]);
      data[k] -= step * v[k];
    }
  }
}

std::string metrics_header() {
  return "epoch,stage,iteration,lr,loss_total,loss_SL,loss_PDSL1,loss_RDSL1,loss_PDSL2,loss_RDSL2,train_nme\n";
}

std::string metrics_line(const EpochLog& log) {
  auto g = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  std::string s = std::to_string(log.epoch) + "," + std::to_string(log.stage) + "," + std::to_string(log.iteration) +
                  "," + g(log.lr) + "," + g(log.loss_total);
  for (double v : log.loss_points) s += "," + g(v);
  s += "," + g(log.train_nme) + "\n";
  return s;
}

namespace {

template <typename T>
void write_checkpoint(const Network<T>& net, const std::filesystem::path& path, const SgdState<T>& sgd,
                      int next_epoch, long iteration, const std::string& schedule_sig, const std::string& log_text) {
  CheckpointExtras<T> extras;
  extras.state["next_epoch"] = std::to_string(next_epoch);
  extras.state["iteration"] = std::to_string(iteration);
  extras.state["schedule"] = schedule_sig;
  extras.state["metrics"] = log_text;
  const auto& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i < sgd.velocity.size() && !sgd.velocity[i].empty()) {
      extras.tensors.emplace_back("velocity/" + params.entry(i).name,
                                  Tensor<T>::from(params.at(i).shape(), sgd.velocity[i]));
    }
  }
  save_checkpoint(net, path.string(), extras);
}

void check_dataset(const NetworkSpec& spec, const std::vector<DatasetRecord>& dataset) {
  if (dataset.empty()) throw DataError("train: dataset is empty");
  for (const auto& r : dataset) {
    if (static_cast<int>(r.landmarks.size()) != spec.landmarks) {
      throw DataError(r.id + ": " + std::to_string(r.landmarks.size()) + " landmarks, network expects " +
                      std::to_string(spec.landmarks));
    }
    if (r.landmarks.pose_bucket < 0 || r.landmarks.pose_bucket >= spec.subspaces) {
      throw DataError(r.id + ": pose bucket outside the network's " + std::to_string(spec.subspaces) + " subspaces");
    }
  }
}

template <typename T>
double clip_gradients(ParamSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).learnable) continue;
    for (T g : params.at(i).grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params.entry(i).learnable || !params.at(i).has_grad()) continue;
      for (T& g : params.at(i).mutable_grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace

template <typename T>
TrainResult<T> train(Network<T> network, const TrainSchedule& schedule, const std::vector<DatasetRecord>& dataset,
                     const TrainOptions& options) {
  schedule.validate();
  TrainResult<T> result;
  SgdState<T> sgd;
  int start_epoch = 0;
  long iteration = 0;
  std::string log_text = metrics_header();
  const std::string sig = schedule.signature();

  if (!options.resume_from.empty()) {
    auto loaded = load_checkpoint<T>(options.resume_from.string());
    auto& st = loaded.extras.state;
    if (!st.count("schedule") || st["schedule"] != sig) {
      throw CheckpointError(options.resume_from.string() + ": was written under a different schedule");
    }
    network = std::move(loaded.network);
    start_epoch = std::stoi(st["next_epoch"]);
    iteration = std::stol(st["iteration"]);
    log_text = st["metrics"];
    sgd.velocity.resize(network.params().size());
    for (auto& [name, t] : loaded.extras.tensors) {
      if (name.rfind("velocity/", 0) != 0) continue;
      const std::string pname = name.substr(9);
      for (std::size_t i = 0; i < network.params().size(); ++i) {
        if (network.params().entry(i).name == pname) sgd.velocity[i].assign(t.data().begin(), t.data().end());
      }
    }
  }
  const NetworkSpec& spec = network.spec();
  check_dataset(spec, dataset);

  const bool write = !options.out_dir.empty();
  if (write) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir.string());
    if (options.resume_from.empty()) write_checkpoint(network, options.out_dir / "initial.ckpt", sgd, 0, 0, sig, log_text);
  }

  // Preprocessing is deterministic, so it happens once.
  std::vector<Preprocessed> pre(dataset.size());
  {
    const int threads = std::max(1, options.threads);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = static_cast<std::size_t>(t); i < dataset.size(); i += static_cast<std::size_t>(threads)) {
            pre[i] = preprocess(dataset[i], spec.input_size, spec.output_size());
          }
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const int total_epochs = schedule.total_epochs();
  const long per_epoch = static_cast<long>((dataset.size() + schedule.batch_size - 1) / schedule.batch_size);
  const long total_iterations = per_epoch * total_epochs;
  const int end_epoch = options.stop_after_epoch >= 0 ? std::min(total_epochs, options.stop_after_epoch) : total_epochs;

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const auto [stage, epoch_in_stage] = stage_of_epoch(schedule.losses, epoch);
    const auto& stage_spec = schedule.losses.stages[stage - 1];
    ForwardOptions fo;
    fo.mode = ForwardMode::kTrain;
    fo.refinement_active = stage_spec.points[2].params.active() || stage_spec.points[4].params.active();

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng(schedule.seed, "shuffle", {static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle() % i);
      std::swap(order[i - 1], order[j]);
    }

    EpochLog log;
    log.epoch = epoch + 1;
    log.stage = stage;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(schedule.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(schedule.batch_size));
      std::vector<const Preprocessed*> items;
      std::vector<LandmarkSet> lms;
      for (std::size_t k = b; k < e; ++k) {
        items.push_back(&pre[order[k]]);
        lms.push_back(pre[order[k]].landmarks);
      }
      const double lr = lr_at(schedule, total_iterations > 1 ? static_cast<double>(iteration) /
                                                                  static_cast<double>(total_iterations - 1)
                                                            : 0.0);
      ForwardRecord<T> rec = forward(network, batch_tensor<T>(items), fo);
      const auto targets = targets_for_record(rec, lms, schedule.losses, stage, spec.subspaces, spec.input_size);
      const TotalLoss<T> loss = total_loss(rec, targets, schedule.losses, stage, epoch_in_stage,
                                           substream_seed(schedule.seed, "mask", {static_cast<std::uint64_t>(iteration)}));
      const double value = static_cast<double>(loss.total.item());
      if (!std::isfinite(value)) {
        if (write) write_checkpoint(network, options.out_dir / "diverged.ckpt", sgd, epoch, iteration, sig, log_text);
        throw TrainingError("loss became non-finite at iteration " + std::to_string(iteration + 1) + " (epoch " +
                            std::to_string(epoch + 1) + ", stage " + std::to_string(stage) + ")");
      }
      network.params().zero_grads();
      backward(loss.total);
      if (schedule.grad_clip > 0) clip_gradients(network.params(), schedule.grad_clip);
      sgd_step(network.params(), sgd, lr, schedule.momentum);
      ++iteration;
      ++batches;
      log.lr = lr;
      log.loss_total += value;
      for (int p = 0; p < kSupervisionPoints; ++p) log.loss_points[p] += loss.per_point[p];
      result.iteration_loss.push_back(value);
    }
    log.loss_total /= batches;
    for (double& v : log.loss_points) v /= batches;
    log.iteration = iteration;
    if (options.log_train_nme) {
      InferenceOptions io;
      io.compute_maps = false;
      io.batch_size = schedule.batch_size;
      const auto inf = run_inference(network, dataset, io);
      NmeOptions no;
      const auto report = evaluate_predictions(dataset, landmarks_of(inf.decoded), no, {0.0, 1.0});
      log.train_nme = report.nme_visible;
    }
    log_text += metrics_line(log);
    result.epochs.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
    if (write) {
      write_text_file(options.out_dir / "metrics.csv", log_text);
      if (epoch_in_stage + 1 == stage_spec.epochs) {
        write_checkpoint(network, options.out_dir / ("stage" + std::to_string(stage) + ".ckpt"), sgd, epoch + 1,
                         iteration, sig, log_text);
      }
    }
  }
  // A zero-epoch schedule leaves only the initial checkpoint behind.
  if (write && total_epochs > 0) {
    write_text_file(options.out_dir / "metrics.csv", log_text);
    if (end_epoch == total_epochs) {
      write_checkpoint(network, options.out_dir / "final.ckpt", sgd, end_epoch, iteration, sig, log_text);
    } else if (end_epoch > start_epoch) {
      // Interrupted runs leave a resumable point even mid-stage.
      write_checkpoint(network, options.out_dir / ("epoch" + std::to_string(end_epoch) + ".ckpt"), sgd, end_epoch,
                       iteration, sig, log_text);
    }
  }
  result.iterations = iteration;
  result.network = std::move(network);
  return result;
}

template void sgd_step(ParamSet<float>&, SgdState<float>&, double, double);
template void sgd_step(ParamSet<double>&, SgdState<double>&, double, double);
template TrainResult<float> train(Network<float>, const TrainSchedule&, const std::vector<DatasetRecord>&,
                                  const TrainOptions&);
template TrainResult<double> train(Network<double>, const TrainSchedule&, const std::vector<DatasetRecord>&,
                                   const TrainOptions&);

}  // namespace godp
