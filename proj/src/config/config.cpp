#include "godp/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "godp/errors.hpp"

namespace godp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  std::string value;
  int line = 0;
};

class Reader {
 public:
  Reader(std::string section, const std::map<std::string, Entry>& entries) : section_(std::move(section)), entries_(entries) {}

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  template <typename F>
  void with(const std::string& key, F&& fn) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    try {
      fn(it->second.value);
    } catch (const ConfigError& e) {
      throw ConfigError(where(key, it->second) + ": " + e.what());
    }
  }

  std::string where(const std::string& key, const Entry& e) const {
    return "config line " + std::to_string(e.line) + " [" + section_ + "] " + key;
  }

 private:
  std::string section_;
  const std::map<std::string, Entry>& entries_;
};

int to_int(const std::string& v) {
  int out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

const std::vector<std::string>& keys_of(const std::string& section) {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"", {"seed"}},
      {"network",
       {"variant", "landmarks", "subspaces", "input_size", "base_width", "width_cap", "converter_width", "precision"}},
      {"schedule", {"profile", "lr_start", "lr_end", "batch_size", "momentum", "grad_clip", "epochs"}},
      {"losses", {}},
      {"data", {"train_manifest", "eval_manifest", "count", "image_size", "occlusion_rate", "noise_sigma"}},
      {"eval",
       {"normalization", "face_size", "iod_left", "iod_right", "visibility_threshold", "centroid_refinement",
        "ced_max", "ced_steps", "sigmas", "trials", "batch_size"}},
  };
  auto it = keys.find(section);
  if (it == keys.end()) throw ConfigError("unknown section [" + section + "]");
  return it->second;
}

const std::vector<std::string> kLossFields = {"far_ratio", "near_ratio", "alpha", "beta", "variant", "targets"};

int point_index(const std::string& name) {
  for (int p = 0; p < kSupervisionPoints; ++p) {
    std::string plain = kSupervisionNames[p];
    plain.erase(std::remove(plain.begin(), plain.end(), '-'), plain.end());
    if (name == kSupervisionNames[p] || name == plain) return p;
  }
  return -1;
}

// "<point>.stage<N>.<field>" -> (point, stage index, field) or throws.
std::tuple<int, int, std::string> parse_loss_key(const std::string& key, std::size_t stages) {
  const auto d1 = key.find('.');
  const auto d2 = d1 == std::string::npos ? std::string::npos : key.find('.', d1 + 1);
  if (d2 == std::string::npos) throw ConfigError("unknown key '" + key + "'");
  const int p = point_index(key.substr(0, d1));
  const std::string st = key.substr(d1 + 1, d2 - d1 - 1);
  const std::string field = key.substr(d2 + 1);
  if (p < 0 || st.rfind("stage", 0) != 0 ||
      std::find(kLossFields.begin(), kLossFields.end(), field) == kLossFields.end()) {
    throw ConfigError("unknown key '" + key + "'");
  }
  int s = 0;
  try {
    s = to_int(st.substr(5));
  } catch (const ConfigError&) {
    throw ConfigError("unknown key '" + key + "'");
  }
  if (s < 1 || static_cast<std::size_t>(s) > stages) throw ConfigError("unknown key '" + key + "' (no such stage)");
  return {p, s - 1, field};
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.schedule = default_schedule(c.profile);
  apply_seed(c, 0);
  return c;
}

void apply_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.network.seed = seed;
  config.schedule.seed = seed;
  config.data.synth.seed = seed;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  std::map<std::string, std::map<std::string, Entry>> sections;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      try {
        keys_of(section);
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (section == "losses") {
      try {
        parse_loss_key(key, 3);
      } catch (const ConfigError& e) {
        throw ConfigError(where + "[losses] " + e.what());
      }
    } else {
      const auto& allowed = keys_of(section);
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        throw ConfigError(where + "unknown key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]"));
      }
    }
    auto& sec = sections[section];
    if (sec.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    sec[key] = Entry{value, line_no};
  }

  RunConfig c = default_run_config();
  c.base_dir = base_dir;
  auto resolve = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };

  const Reader top("", sections[""]);
  if (!top.has("seed")) throw ConfigError("config: 'seed' is mandatory");
  top.with("seed", [&](const std::string& v) { apply_seed(c, to_u64(v)); });
  c.seed_from_file = true;

  const Reader net("network", sections["network"]);
  net.with("variant", [&](const std::string& v) { c.network.variant = parse_variant(v); });
  net.with("landmarks", [&](const std::string& v) { c.network.landmarks = to_int(v); });
  net.with("subspaces", [&](const std::string& v) { c.network.subspaces = to_int(v); });
  net.with("input_size", [&](const std::string& v) { c.network.input_size = to_int(v); });
  net.with("base_width", [&](const std::string& v) { c.network.base_width = to_int(v); });
  net.with("width_cap", [&](const std::string& v) { c.network.width_cap = to_int(v); });
  net.with("converter_width", [&](const std::string& v) { c.network.converter_width = to_int(v); });
  net.with("precision", [&](const std::string& v) { c.network.precision = parse_precision(v); });
  c.network.validate();

  const Reader sch("schedule", sections["schedule"]);
  sch.with("profile", [&](const std::string& v) { c.profile = parse_profile(v); });
  c.schedule = default_schedule(c.profile);
  c.schedule.seed = c.seed;
  sch.with("lr_start", [&](const std::string& v) { c.schedule.lr_start = to_double(v); });
  sch.with("lr_end", [&](const std::string& v) { c.schedule.lr_end = to_double(v); });
  sch.with("batch_size", [&](const std::string& v) { c.schedule.batch_size = to_int(v); });
  sch.with("momentum", [&](const std::string& v) { c.schedule.momentum = to_double(v); });
  sch.with("grad_clip", [&](const std::string& v) { c.schedule.grad_clip = to_double(v); });
  sch.with("epochs", [&](const std::string& v) {
    const auto parts = split_list(v);
    if (parts.size() != c.schedule.losses.stages.size()) {
      throw ConfigError("expected " + std::to_string(c.schedule.losses.stages.size()) + " comma-separated epoch counts");
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
      c.schedule.losses.stages[i].epochs = to_int(parts[i]);
      if (c.schedule.losses.stages[i].epochs < 0) throw ConfigError("epoch counts must be non-negative");
    }
  });

  for (const auto& [key, entry] : sections["losses"]) {
    const auto [p, s, field] = parse_loss_key(key, c.schedule.losses.stages.size());
    auto& ps = c.schedule.losses.stages[s].points[p];
    try {
      if (field == "far_ratio") ps.params.far_ratio = to_double(entry.value);
      if (field == "near_ratio") ps.params.near_ratio = to_double(entry.value);
      if (field == "alpha") ps.params.alpha = to_double(entry.value);
      if (field == "beta") ps.params.beta = to_double(entry.value);
      if (field == "variant") ps.params.variant = parse_loss_variant(entry.value);
      if (field == "targets") ps.targets = parse_target_mode(entry.value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(entry.line) + " [losses] " + key + ": " + e.what());
    }
  }
  try {
    c.schedule.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const Reader data("data", sections["data"]);
  data.with("train_manifest", [&](const std::string& v) { c.data.train_manifest = resolve(v); });
  data.with("eval_manifest", [&](const std::string& v) { c.data.eval_manifest = resolve(v); });
  data.with("count", [&](const std::string& v) { c.data.synth.count = to_int(v); });
  data.with("image_size", [&](const std::string& v) { c.data.synth.image_size = to_int(v); });
  data.with("occlusion_rate", [&](const std::string& v) { c.data.synth.occlusion_rate = to_double(v); });
  data.with("noise_sigma", [&](const std::string& v) { c.data.synth.noise_sigma = to_double(v); });
  c.data.synth.landmarks = c.network.landmarks;
  c.data.synth.subspaces = c.network.subspaces;

  const Reader ev("eval", sections["eval"]);
  ev.with("normalization", [&](const std::string& v) { c.eval.nme.normalization = parse_normalization(v); });
  ev.with("face_size", [&](const std::string& v) { c.eval.nme.face_size = parse_face_size_rule(v); });
  ev.with("iod_left", [&](const std::string& v) { c.eval.nme.iod_left = to_int(v); });
  ev.with("iod_right", [&](const std::string& v) { c.eval.nme.iod_right = to_int(v); });
  ev.with("visibility_threshold", [&](const std::string& v) { c.eval.decode.visibility_threshold = to_double(v); });
  ev.with("centroid_refinement", [&](const std::string& v) { c.eval.decode.centroid_refinement = to_bool(v); });
  ev.with("ced_max", [&](const std::string& v) { c.eval.ced_max = to_double(v); });
  ev.with("ced_steps", [&](const std::string& v) { c.eval.ced_steps = to_int(v); });
  ev.with("sigmas", [&](const std::string& v) {
    c.eval.sigmas.clear();
    for (const auto& s : split_list(v)) c.eval.sigmas.push_back(to_double(s));
    if (c.eval.sigmas.empty()) throw ConfigError("need at least one sigma");
  });
  ev.with("trials", [&](const std::string& v) { c.eval.trials = to_int(v); });
  ev.with("batch_size", [&](const std::string& v) { c.eval.batch_size = to_int(v); });
  if (c.eval.trials < 1 || c.eval.batch_size < 1 || c.eval.ced_steps < 2 || !(c.eval.ced_max > 0)) {
    throw ConfigError("config: [eval] trials, batch_size must be positive, ced_steps >= 2, ced_max > 0");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_run_config(ss.str(), dir);
}

std::uint64_t resolve_seed(const RunConfig& config, std::optional<std::uint64_t> flag_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("GODP_SEED"); env != nullptr && *env != '\0') {
    try {
      return to_u64(env);
    } catch (const ConfigError&) {
      throw ConfigError(std::string("GODP_SEED: expected a non-negative integer, got '") + env + "'");
    }
  }
  return config.seed;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const char* s : {"", "network", "schedule", "data", "eval"}) {
    for (const auto& k : keys_of(s)) out.push_back(std::string(*s ? s : "") + (*s ? "." : "") + k);
  }
  out.push_back("losses.<point>.stage<N>.<field>");
  return out;
}

}  // namespace godp
