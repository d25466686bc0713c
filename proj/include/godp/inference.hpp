#pragma once

#include <vector>

#include "godp/data.hpp"
#include "godp/metrics.hpp"
#include "godp/network.hpp"

namespace godp {

struct InferenceOptions {
  int batch_size = 8;
  int threads = 1;
  DecodeOptions decode;
  bool compute_maps = true;  // MPK/MPB against visible ground truth
};

struct InferenceResult {
  std::vector<DecodedLandmarks> decoded;
  std::vector<MpkMpb> maps;  // per image, when requested
  MpkMpb mean_maps;
};

// Eval-mode forward over records in order. With threads > 1 chunks of
// records run concurrently; results do not depend on the thread count.
template <typename T>
InferenceResult run_inference(Network<T>& net, const std::vector<DatasetRecord>& records,
                              const InferenceOptions& options = {});

// Landmark key-point pixels on merged maps of the given size.
std::vector<std::int32_t> merged_keypoints(const LandmarkSet& input_space_landmarks, int input_size, int map_size);

template <typename T>
LandmarkPredictor make_predictor(Network<T>& net, const InferenceOptions& options = {});

std::vector<LandmarkSet> landmarks_of(const std::vector<DecodedLandmarks>& decoded);

}  // namespace godp
