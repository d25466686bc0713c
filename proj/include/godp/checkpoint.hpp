#pragma once

// Checkpoint container:
//   "GODP1\n"
//   <metadata byte length>\n
//   <UTF-8 JSON metadata: version, precision, network spec, tensor directory
//    (name, kind, shape, byte offset, count), optional trainer state>
//   <little-endian raw value arrays at the directory offsets>

#include <map>
#include <string>
#include <vector>

#include "godp/network.hpp"

namespace godp {

inline constexpr const char* kCheckpointMagic = "GODP1";
inline constexpr int kCheckpointVersion = 1;

// Optional extras carried alongside the network (trainer resume state).
template <typename T>
struct CheckpointExtras {
  std::map<std::string, std::string> state;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;
};

template <typename T>
struct LoadedCheckpoint {
  Network<T> network;
  CheckpointExtras<T> extras;
};

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path, const CheckpointExtras<T>& extras = {});

// Values are converted when the stored precision differs from T. Throws
// CheckpointError on bad magic/version, truncation, or any tensor whose shape
// disagrees with the network the stored spec builds.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

// Reads only the stored network spec.
NetworkSpec read_checkpoint_spec(const std::string& path);

}  // namespace godp
