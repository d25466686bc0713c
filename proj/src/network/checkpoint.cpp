#include "godp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "godp/errors.hpp"
#include "json.hpp"

namespace godp {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename V>
void append_le(std::string& out, V v) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(V));
}

template <typename V>
V read_le(const char* p) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, p, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  V v;
  std::memcpy(&v, bytes, sizeof(V));
  return v;
}

json spec_to_json(const NetworkSpec& s) {
  return json{{"variant", std::string(variant_name(s.variant))},
              {"landmarks", s.landmarks},
              {"subspaces", s.subspaces},
              {"input_size", s.input_size},
              {"base_width", s.base_width},
              {"width_cap", s.width_cap},
              {"converter_width", s.converter_width},
              {"precision", std::string(precision_name(s.precision))},
              {"seed", s.seed}};
}

NetworkSpec spec_from_json(const json& j) {
  try {
    NetworkSpec s;
    s.variant = parse_variant(j.at("variant").get<std::string>());
    s.landmarks = j.at("landmarks").get<int>();
    s.subspaces = j.at("subspaces").get<int>();
    s.input_size = j.at("input_size").get<int>();
    s.base_width = j.at("base_width").get<int>();
    s.width_cap = j.at("width_cap").get<int>();
    s.converter_width = j.at("converter_width").get<int>();
    s.precision = parse_precision(j.at("precision").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: bad network spec: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
}

struct RawCheckpoint {
  json meta;
  std::string payload;
};

RawCheckpoint read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string magic = std::string(kCheckpointMagic) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw CheckpointError(path + ": not a GODP1 checkpoint");
  const std::size_t eol = bytes.find('\n', magic.size());
  if (eol == std::string::npos) throw CheckpointError(path + ": truncated header");
  std::size_t meta_len = 0;
  try {
    meta_len = std::stoull(bytes.substr(magic.size(), eol - magic.size()));
  } catch (const std::exception&) {
    throw CheckpointError(path + ": bad metadata length");
  }
  const std::size_t meta_begin = eol + 1;
  if (bytes.size() < meta_begin + meta_len) throw CheckpointError(path + ": truncated metadata");
  RawCheckpoint raw;
  try {
    raw.meta = json::parse(bytes.substr(meta_begin, meta_len));
  } catch (const json::exception& e) {
    throw CheckpointError(path + ": unreadable metadata: " + e.what());
  }
  if (raw.meta.value("version", 0) != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version");
  }
  raw.payload = bytes.substr(meta_begin + meta_len);
  const std::size_t expected = raw.meta.value("payload_bytes", std::size_t{0});
  if (raw.payload.size() != expected) {
    throw CheckpointError(path + ": payload is " + std::to_string(raw.payload.size()) + " bytes, expected " +
                          std::to_string(expected) + " (truncated or corrupt)");
  }
  return raw;
}

template <typename T, typename Stored>
std::vector<T> decode_values(const std::string& payload, std::size_t offset, std::size_t count) {
  std::vector<T> out(count);
  const char* p = payload.data() + offset;
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<T>(read_le<Stored>(p + i * sizeof(Stored)));
  return out;
}

}  // namespace

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path, const CheckpointExtras<T>& extras) {
  std::string payload;
  json dir = json::array();
  auto put = [&](const std::string& name, const std::string& kind, const Tensor<T>& t) {
    const Shape s = t.shape();
    dir.push_back({{"name", name},
                   {"kind", kind},
                   {"shape", {s.n, s.c, s.h, s.w}},
                   {"offset", payload.size()},
                   {"count", t.numel()}});
    for (T v : t.data()) append_le(payload, v);
  };
  for (const auto& e : net.params().entries()) put(e.name, e.learnable ? "param" : "buffer", e.value);
  for (const auto& [name, t] : extras.tensors) put(name, "extra", t);
  json meta{{"version", kCheckpointVersion},
            {"precision", std::string(precision_name(precision_of<T>()))},
            {"spec", spec_to_json(net.spec())},
            {"tensors", dir},
            {"state", extras.state},
            {"payload_bytes", payload.size()}};
  const std::string meta_text = meta.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out << kCheckpointMagic << "\n" << meta_text.size() << "\n" << meta_text;
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("short write on checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot finalize checkpoint " + path);
}

NetworkSpec read_checkpoint_spec(const std::string& path) {
  return spec_from_json(read_raw(path).meta.at("spec"));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_raw(path);
  NetworkSpec spec = spec_from_json(raw.meta.at("spec"));
  Precision stored;
  try {
    stored = parse_precision(raw.meta.at("precision").get<std::string>());
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": bad precision field");
  }
  const std::size_t width = stored == Precision::kFloat32 ? sizeof(float) : sizeof(double);
  spec.precision = precision_of<T>();

  struct Item {
    std::string name, kind;
    Shape shape;
    std::vector<T> values;
  };
  std::vector<Item> items;
  try {
    for (const auto& d : raw.meta.at("tensors")) {
      Item it;
      it.name = d.at("name").get<std::string>();
      it.kind = d.at("kind").get<std::string>();
      const auto sh = d.at("shape");
      it.shape = Shape{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>(), sh.at(3).get<int>()};
      const std::size_t offset = d.at("offset").get<std::size_t>();
      const std::size_t count = d.at("count").get<std::size_t>();
      if (count != it.shape.numel() || offset + count * width > raw.payload.size()) {
        throw CheckpointError(path + ": tensor '" + it.name + "' lies outside the payload");
      }
      it.values = stored == Precision::kFloat32 ? decode_values<T, float>(raw.payload, offset, count)
                                                : decode_values<T, double>(raw.payload, offset, count);
      items.push_back(std::move(it));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": bad tensor directory: " + e.what());
  }

  LoadedCheckpoint<T> out{build_network<T>(spec), {}};
  auto& params = out.network.params();
  std::vector<bool> used(items.size(), false);
  // Validate everything before touching the network.
  std::vector<std::size_t> match(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& e = params.entry(p);
    bool found = false;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].kind != "extra" && items[i].name == e.name) {
        if (!(items[i].shape == e.value.shape())) {
          throw CheckpointError(path + ": tensor '" + e.name + "' has shape " + items[i].shape.str() +
                                " but the stored network spec requires " + e.value.shape().str());
        }
        match[p] = i;
        used[i] = found = true;
        break;
      }
    }
    if (!found) throw CheckpointError(path + ": missing tensor '" + e.name + "'");
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!used[i] && items[i].kind != "extra") {
      throw CheckpointError(path + ": tensor '" + items[i].name + "' is not part of the stored network spec");
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& v = items[match[p]].values;
    auto dst = params.at(p).mutable_data();
    std::copy(v.begin(), v.end(), dst.begin());
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].kind == "extra") {
      out.extras.tensors.emplace_back(items[i].name, Tensor<T>::from(items[i].shape, std::move(items[i].values)));
    }
  }
  if (raw.meta.contains("state")) {
    for (auto it = raw.meta["state"].begin(); it != raw.meta["state"].end(); ++it) {
      out.extras.state[it.key()] = it.value().get<std::string>();
    }
  }
  return out;
}

template void save_checkpoint(const Network<float>&, const std::string&, const CheckpointExtras<float>&);
template void save_checkpoint(const Network<double>&, const std::string&, const CheckpointExtras<double>&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace godp
