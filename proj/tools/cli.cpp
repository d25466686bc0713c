#include "cli.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "godp/checkpoint.hpp"
#include "godp/config.hpp"
#include "godp/errors.hpp"
#include "godp/gradcheck_suite.hpp"
#include "godp/inference.hpp"
#include "godp/metrics.hpp"
#include "godp/trainer.hpp"

namespace godp::cli {

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string data;
  std::string manifest;
  std::string checkpoint;
  std::string predictions;
  std::string resume;
  std::string scope = "all";
  std::string sigmas;
  std::string variant;
  std::string profile;
  std::string normalization;
  std::string face_size;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  int count = -1;
  int trials = -1;
  int stop_after = -1;
  double occlusion = -1.0;
  bool no_train_nme = false;
};

std::string exact(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

RunConfig load_config(const Flags& f) {
  RunConfig c = f.config.empty() ? default_run_config() : load_run_config(f.config);
  apply_seed(c, resolve_seed(c, f.seed));
  if (!f.variant.empty()) c.network.variant = parse_variant(f.variant);
  if (!f.profile.empty()) {
    const std::uint64_t seed = c.schedule.seed;
    const TrainSchedule old = c.schedule;
    c.profile = parse_profile(f.profile);
    c.schedule = default_schedule(c.profile);
    c.schedule.seed = seed;
    c.schedule.lr_start = old.lr_start;
    c.schedule.lr_end = old.lr_end;
    c.schedule.batch_size = old.batch_size;
    c.schedule.momentum = old.momentum;
    c.schedule.grad_clip = old.grad_clip;
    for (std::size_t s = 0; s < c.schedule.losses.stages.size(); ++s) {
      c.schedule.losses.stages[s].epochs = old.losses.stages[s].epochs;
    }
  }
  if (!f.normalization.empty()) c.eval.nme.normalization = parse_normalization(f.normalization);
  if (!f.face_size.empty()) c.eval.nme.face_size = parse_face_size_rule(f.face_size);
  if (f.trials > 0) c.eval.trials = f.trials;
  if (f.threads < 1) throw UsageError("--threads must be at least 1");
  return c;
}

template <typename F>
auto with_precision(Precision p, F&& fn) {
  if (p == Precision::kFloat64) return fn(double{});
  return fn(float{});
}

InferenceOptions inference_options(const RunConfig& c, const Flags& f) {
  InferenceOptions o;
  o.batch_size = c.eval.batch_size;
  o.threads = f.threads;
  o.decode = c.eval.decode;
  return o;
}

std::filesystem::path require_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  return dir;
}

int cmd_synth(const Flags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  SynthOptions o = c.data.synth;
  if (f.count >= 0) o.count = f.count;
  if (f.occlusion >= 0) o.occlusion_rate = f.occlusion;
  const Manifest m = synth_generate(o, f.out);
  out << "wrote " << m.records.size() << " images and " << (std::filesystem::path(f.out) / "manifest.txt").string()
      << "\n";
  return 0;
}

int cmd_train(const Flags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  std::filesystem::path data = f.data.empty() ? c.data.train_manifest : std::filesystem::path(f.data);
  if (data.empty()) throw UsageError("train: pass --data or set [data] train_manifest");
  const Manifest m = load_manifest(data);
  if (m.landmarks != c.network.landmarks || m.subspaces != c.network.subspaces) {
    throw DataError("manifest has L=" + std::to_string(m.landmarks) + " K=" + std::to_string(m.subspaces) +
                    ", the network is configured for L=" + std::to_string(c.network.landmarks) +
                    " K=" + std::to_string(c.network.subspaces));
  }
  TrainOptions to;
  to.out_dir = require_dir(f.out);
  to.resume_from = f.resume;
  to.stop_after_epoch = f.stop_after;
  to.threads = f.threads;
  to.log_train_nme = !f.no_train_nme;
  to.on_epoch = [&out](const EpochLog& log) {
    out << "epoch " << log.epoch << " stage " << log.stage << " iter " << log.iteration << " loss "
        << format_number(log.loss_total) << " train_nme " << format_number(log.train_nme) << "\n";
  };
  return with_precision(c.network.precision, [&](auto tag) {
    using T = decltype(tag);
    auto result = train<T>(build_network<T>(c.network), c.schedule, m.records, to);
    out << "trained " << result.iterations << " iterations; checkpoints in " << f.out << "\n";
    return 0;
  });
}

template <typename T>
Network<T> load_model(const std::string& path) {
  return std::move(load_checkpoint<T>(path).network);
}

std::string prediction_lines(const std::vector<DatasetRecord>& records, const std::vector<DecodedLandmarks>& decoded) {
  std::ostringstream s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    s << records[i].id;
    for (std::size_t l = 0; l < decoded[i].landmarks.size(); ++l) {
      s << " " << exact(decoded[i].landmarks.points[l].x) << " " << exact(decoded[i].landmarks.points[l].y) << " "
        << exact(decoded[i].confidence[l]);
    }
    s << "\n";
  }
  return s.str();
}

std::vector<LandmarkSet> read_predictions(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                                          int landmarks) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path.string());
  std::map<std::string, LandmarkSet> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 1 + 3 * static_cast<std::size_t>(landmarks)) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(1 + 3 * landmarks) + " fields");
    }
    LandmarkSet lm;
    for (int l = 0; l < landmarks; ++l) {
      double x = 0, y = 0;
      const std::string& tx = tok[1 + 3 * l];
      const std::string& ty = tok[2 + 3 * l];
      auto rx = std::from_chars(tx.data(), tx.data() + tx.size(), x);
      auto ry = std::from_chars(ty.data(), ty.data() + ty.size(), y);
      if (rx.ec != std::errc() || ry.ec != std::errc()) {
        throw DataError(path.string() + " line " + std::to_string(line_no) + ": bad coordinate");
      }
      lm.points.push_back({x, y});
      lm.visible.push_back(1);
    }
    by_id[tok[0]] = std::move(lm);
  }
  std::vector<LandmarkSet> out;
  for (const auto& r : records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw DataError(path.string() + ": no prediction for " + r.id);
    out.push_back(it->second);
  }
  return out;
}

int cmd_predict(const Flags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  const Manifest m = load_manifest(f.manifest);
  const NetworkSpec spec = read_checkpoint_spec(f.checkpoint);
  return with_precision(spec.precision, [&](auto tag) {
    using T = decltype(tag);
    Network<T> net = load_model<T>(f.checkpoint);
    InferenceOptions io = inference_options(c, f);
    io.compute_maps = false;
    const auto inf = run_inference(net, m.records, io);
    const std::filesystem::path p(f.out);
    if (p.has_parent_path()) require_dir(p.parent_path().string());
    write_text_file(p, prediction_lines(m.records, inf.decoded));
    out << "wrote " << m.records.size() << " predictions to " << f.out << "\n";
    return 0;
  });
}

int cmd_eval(const Flags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  const Manifest m = load_manifest(f.manifest);
  const auto grid = threshold_grid(c.eval.ced_max, c.eval.ced_steps);
  EvalReport report;
  if (!f.checkpoint.empty()) {
    const NetworkSpec spec = read_checkpoint_spec(f.checkpoint);
    report = with_precision(spec.precision, [&](auto tag) {
      using T = decltype(tag);
      Network<T> net = load_model<T>(f.checkpoint);
      const auto inf = run_inference(net, m.records, inference_options(c, f));
      EvalReport r = evaluate_predictions(m.records, landmarks_of(inf.decoded), c.eval.nme, grid);
      r.has_maps = true;
      r.maps = inf.mean_maps;
      return r;
    });
  } else {
    report = evaluate_predictions(m.records, read_predictions(f.predictions, m.records, m.landmarks), c.eval.nme, grid);
  }
  write_eval_reports(require_dir(f.out), report);
  out << "nme_visible " << format_number(report.nme_visible) << "\nnme_all " << format_number(report.nme_all) << "\n";
  if (report.has_maps) out << "mpk " << format_number(report.maps.mpk) << "\nmpb " << format_number(report.maps.mpb) << "\n";
  return 0;
}

int cmd_robustness(const Flags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  if (!f.sigmas.empty()) {
    c.eval.sigmas.clear();
    std::istringstream in(f.sigmas);
    for (std::string t; std::getline(in, t, ',');) {
      double v = 0;
      auto r = std::from_chars(t.data(), t.data() + t.size(), v);
      if (r.ec != std::errc() || r.ptr != t.data() + t.size() || v < 0) throw UsageError("--sigmas: bad value '" + t + "'");
      c.eval.sigmas.push_back(v);
    }
  }
  const Manifest m = load_manifest(f.manifest);
  const NetworkSpec spec = read_checkpoint_spec(f.checkpoint);
  const RobustnessGrid grid = with_precision(spec.precision, [&](auto tag) {
    using T = decltype(tag);
    Network<T> net = load_model<T>(f.checkpoint);
    return bbox_noise_eval(make_predictor(net, inference_options(c, f)), m.records, c.eval.sigmas, c.eval.trials,
                           c.seed, c.eval.nme);
  });
  const std::string csv = robustness_csv(grid);
  write_text_file(require_dir(f.out) / "robustness.csv", csv);
  out << csv;
  return 0;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = run_gradcheck_suite(f.scope, f.seed.value_or(1));
  bool ok = true;
  for (const auto& c : cases) {
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-28s max_rel_err %.3e  probes %d  skipped %d  %.2fs\n",
                  c.passed ? "ok" : "FAIL", c.name.c_str(), c.result.max_relative_error, c.result.probes,
                  c.result.skipped, c.seconds);
    out << line;
    ok = ok && c.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << (ok ? "all " : "some ") << cases.size() << " checks " << (ok ? "passed" : "FAILED") << " in "
      << format_number(secs) << "s (tolerance " << kGradcheckTolerance << ")\n";
  return ok ? 0 : 2;
}

std::string schedule_table(const TrainSchedule& s) {
  std::ostringstream o;
  o << "schedule lr " << exact(s.lr_start) << " -> " << exact(s.lr_end) << "  batch " << s.batch_size << "  momentum "
    << exact(s.momentum) << "  epochs " << s.total_epochs() << "\n";
  for (std::size_t st = 0; st < s.losses.stages.size(); ++st) {
    const auto& stage = s.losses.stages[st];
    o << "  stage " << st + 1 << " (" << stage.epochs << " epochs)\n";
    for (int p = 0; p < kSupervisionPoints; ++p) {
      const auto& ps = stage.points[p];
      o << "    " << kSupervisionNames[p] << "  ";
      if (!ps.params.active()) {
        o << "off\n";
        continue;
      }
      o << loss_variant_name(ps.params.variant) << "  far " << exact(ps.params.far_ratio) << "  near "
        << exact(ps.params.near_ratio) << "  alpha " << exact(ps.params.alpha) << "  beta " << exact(ps.params.beta)
        << "  targets " << target_mode_name(ps.targets) << "\n";
    }
  }
  return o.str();
}

int cmd_describe(const Flags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  NetworkSpec spec = f.checkpoint.empty() ? c.network : read_checkpoint_spec(f.checkpoint);
  return with_precision(spec.precision, [&](auto tag) {
    using T = decltype(tag);
    Network<T> net = build_network<T>(spec);
    out << describe(net);
    out << "profile " << profile_name(c.profile) << "\n" << schedule_table(c.schedule);
    const double diag = std::hypot(spec.output_size(), spec.output_size());
    const std::string asym = check_policy_asymmetry(c.schedule.losses, diag);
    out << "policy_asymmetry " << (asym.empty() ? "ok" : asym) << "\n";
    out << "topology " << topology_signature(net) << "\n";
    return 0;
  });
}

struct App {
  CLI::App app{"Dual-pathway landmark localization: synthesis, training, evaluation"};
  Flags f;
  std::map<std::string, CLI::App*> subs;

  App() {
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Print help for every subcommand");
    auto add_config = [&](CLI::App* s) { s->add_option("--config", f.config, "Run config file"); };
    auto add_seed = [&](CLI::App* s) { s->add_option("--seed", f.seed, "Seed (overrides GODP_SEED and the config)"); };
    auto add_threads = [&](CLI::App* s) {
      s->add_option("--threads", f.threads, "Worker threads for preprocessing/evaluation (1 = sequential)")
          ->check(CLI::PositiveNumber);
    };

    auto* synth = subs["synth"] = app.add_subcommand("synth", "Generate a synthetic face dataset");
    add_config(synth);
    add_seed(synth);
    synth->add_option("--out", f.out, "Output directory (manifest.txt + images/)")->required();
    synth->add_option("--count", f.count, "Number of images (overrides [data] count)");
    synth->add_option("--occlusion", f.occlusion, "Per-landmark occlusion rate (overrides [data] occlusion_rate)");

    auto* tr = subs["train"] = app.add_subcommand("train", "Run staged training");
    add_config(tr);
    add_seed(tr);
    add_threads(tr);
    tr->add_option("--data", f.data, "Training manifest (overrides [data] train_manifest)");
    tr->add_option("--out", f.out, "Output directory for checkpoints and metrics.csv")->required();
    tr->add_option("--resume", f.resume, "Continue from a checkpoint written by train");
    tr->add_option("--stop-after", f.stop_after, "Stop after this many epochs in total");
    tr->add_option("--profile", f.profile, "Training profile: godp, godp_a, godp_dsl, godp_dsl_pr, baseline");
    tr->add_option("--variant", f.variant, "Network variant: godp, deconvnet, hgn");
    tr->add_flag("--no-train-nme", f.no_train_nme, "Skip the per-epoch training-set NME");

    auto* pr = subs["predict"] = app.add_subcommand("predict", "Write landmark predictions");
    add_config(pr);
    add_threads(pr);
    pr->add_option("--checkpoint", f.checkpoint, "Trained checkpoint")->required();
    pr->add_option("--manifest", f.manifest, "Records to predict")->required();
    pr->add_option("--out", f.out, "Predictions file: id x1 y1 conf1 ... xL yL confL")->required();

    auto* ev = subs["eval"] = app.add_subcommand("eval", "NME, MPK/MPB and CED reports");
    add_config(ev);
    add_threads(ev);
    auto* ck = ev->add_option("--checkpoint", f.checkpoint, "Evaluate a checkpoint (adds MPK/MPB)");
    auto* pd = ev->add_option("--predictions", f.predictions, "Evaluate a predictions file");
    ck->excludes(pd);
    pd->excludes(ck);
    ev->add_option("--manifest", f.manifest, "Ground-truth manifest")->required();
    ev->add_option("--out", f.out, "Report directory")->required();
    ev->add_option("--normalization", f.normalization, "face_size or iod");
    ev->add_option("--face-size", f.face_size, "Face size rule: geometric or max");

    auto* rb = subs["robustness"] = app.add_subcommand("robustness", "Bounding-box noise grid");
    add_config(rb);
    add_seed(rb);
    add_threads(rb);
    rb->add_option("--checkpoint", f.checkpoint, "Trained checkpoint")->required();
    rb->add_option("--manifest", f.manifest, "Evaluation manifest")->required();
    rb->add_option("--out", f.out, "Directory for robustness.csv")->required();
    rb->add_option("--sigmas", f.sigmas, "Comma-separated noise levels in percent");
    rb->add_option("--trials", f.trials, "Noise draws per grid cell");

    auto* gc = subs["gradcheck"] = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    add_seed(gc);
    gc->add_option("--scope", f.scope, "ops, loss, network or all")->check(CLI::IsMember({"ops", "loss", "network", "all"}));

    auto* ds = subs["describe"] = app.add_subcommand("describe", "Print network wiring and loss schedule");
    add_config(ds);
    ds->add_option("--checkpoint", f.checkpoint, "Describe the network stored in a checkpoint");
    ds->add_option("--variant", f.variant, "Network variant: godp, deconvnet, hgn");
    ds->add_option("--profile", f.profile, "Training profile: godp, godp_a, godp_dsl, godp_dsl_pr, baseline");
  }
};

}  // namespace

std::vector<std::string> subcommands() {
  return {"synth", "train", "predict", "eval", "robustness", "gradcheck", "describe"};
}

std::vector<std::string> flags_of(const std::string& subcommand) {
  App a;
  auto it = a.subs.find(subcommand);
  if (it == a.subs.end()) return {};
  std::vector<std::string> out;
  for (const CLI::Option* o : it->second->get_options()) {
    for (const auto& name : o->get_lnames()) out.push_back("--" + name);
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  App a;
  std::vector<const char*> argv{"godp"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    a.app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = a.app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    const std::string cmd = a.app.get_subcommands().front()->get_name();
    if (cmd == "eval" && a.f.checkpoint.empty() && a.f.predictions.empty()) {
      throw UsageError("eval: pass --checkpoint or --predictions");
    }
    if (cmd == "synth") return cmd_synth(a.f, out);
    if (cmd == "train") return cmd_train(a.f, out);
    if (cmd == "predict") return cmd_predict(a.f, out);
    if (cmd == "eval") return cmd_eval(a.f, out);
    if (cmd == "robustness") return cmd_robustness(a.f, out);
    if (cmd == "gradcheck") return cmd_gradcheck(a.f, out);
    if (cmd == "describe") return cmd_describe(a.f, out);
    throw UsageError("unknown subcommand " + cmd);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace godp::cli
