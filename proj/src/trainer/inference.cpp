#include "godp/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "godp/errors.hpp"
#include "godp/loss.hpp"

namespace godp {

std::vector<std::int32_t> merged_keypoints(const LandmarkSet& input_space_landmarks, int input_size, int map_size) {
  LandmarkSet lm = input_space_landmarks;
  lm.pose_bucket = 0;
  const TargetMaps t = build_targets(lm, 1, input_size, map_size, TargetMode::kVisibleOnly);
  return t.keypoint;
}

std::vector<LandmarkSet> landmarks_of(const std::vector<DecodedLandmarks>& decoded) {
  std::vector<LandmarkSet> out;
  out.reserve(decoded.size());
  for (const auto& d : decoded) out.push_back(d.landmarks);
  return out;
}

namespace {

template <typename T>
void infer_range(Network<T>& net, const std::vector<DatasetRecord>& records, std::size_t begin, std::size_t end,
                 const InferenceOptions& options, InferenceResult& out) {
  NoGradGuard no_grad;
  const NetworkSpec& spec = net.spec();
  const ForwardOptions fo{ForwardMode::kEval, true};
  for (std::size_t b = begin; b < end; b += static_cast<std::size_t>(options.batch_size)) {
    const std::size_t e = std::min(end, b + static_cast<std::size_t>(options.batch_size));
    std::vector<Preprocessed> pre;
    pre.reserve(e - b);
    for (std::size_t i = b; i < e; ++i) pre.push_back(preprocess(records[i], spec.input_size, spec.output_size()));
    std::vector<const Preprocessed*> ptrs;
    std::vector<BboxTransform> transforms;
    for (const auto& p : pre) {
      ptrs.push_back(&p);
      transforms.push_back(p.transform);
    }
    ForwardRecord<T> rec = forward(net, batch_tensor<T>(ptrs), fo);
    auto decoded = decode_landmarks(rec.merged, transforms, options.decode);
    for (std::size_t i = 0; i < decoded.size(); ++i) out.decoded[b + i] = std::move(decoded[i]);
    if (options.compute_maps) {
      std::vector<std::vector<std::int32_t>> kps;
      for (const auto& p : pre) kps.push_back(merged_keypoints(p.landmarks, spec.input_size, rec.merged.shape().h));
      auto maps = mpk_mpb_per_image(rec.merged, kps);
      for (std::size_t i = 0; i < maps.size(); ++i) out.maps[b + i] = maps[i];
    }
  }
}

}  // namespace

template <typename T>
InferenceResult run_inference(Network<T>& net, const std::vector<DatasetRecord>& records,
                              const InferenceOptions& options) {
  if (options.batch_size < 1) throw ConfigError("inference: batch_size must be positive");
  for (const auto& r : records) {
    if (static_cast<int>(r.landmarks.size()) != net.spec().landmarks) {
      throw DataError(r.id + ": has " + std::to_string(r.landmarks.size()) + " landmarks, the model expects " +
                      std::to_string(net.spec().landmarks));
    }
  }
  InferenceResult out;
  out.decoded.resize(records.size());
  if (options.compute_maps) out.maps.resize(records.size());
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, options.threads)), 1,
                                                      std::max<std::size_t>(1, records.size()));
  if (threads == 1) {
    infer_range(net, records, 0, records.size(), options, out);
  } else {
    // Eval-mode ops act per image, so the split cannot change any result.
    const std::size_t chunk = (records.size() + threads - 1) / threads;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(records.size(), b + chunk);
      if (b >= e) break;
      pool.emplace_back([&, t, b, e] {
        try {
          infer_range(net, records, b, e, options, out);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& ep : errors) {
      if (ep) std::rethrow_exception(ep);
    }
  }
  if (options.compute_maps) {
    int nk = 0, nb = 0;
    for (const auto& m : out.maps) {
      if (!std::isnan(m.mpk)) {
        out.mean_maps.mpk += m.mpk;
        ++nk;
      }
      if (!std::isnan(m.mpb)) {
        out.mean_maps.mpb += m.mpb;
        ++nb;
      }
    }
    if (nk) out.mean_maps.mpk /= nk;
    if (nb) out.mean_maps.mpb /= nb;
  }
  return out;
}

template <typename T>
LandmarkPredictor make_predictor(Network<T>& net, const InferenceOptions& options) {
  InferenceOptions o = options;
  o.compute_maps = false;
  return [&net, o](const std::vector<DatasetRecord>& records) { return landmarks_of(run_inference(net, records, o).decoded); };
}

template InferenceResult run_inference(Network<float>&, const std::vector<DatasetRecord>&, const InferenceOptions&);
template InferenceResult run_inference(Network<double>&, const std::vector<DatasetRecord>&, const InferenceOptions&);
template LandmarkPredictor make_predictor(Network<float>&, const InferenceOptions&);
template LandmarkPredictor make_predictor(Network<double>&, const InferenceOptions&);

}  // namespace godp
