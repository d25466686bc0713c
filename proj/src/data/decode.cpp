#include <algorithm>

#include "godp/data.hpp"
#include "godp/errors.hpp"

namespace godp {

template <typename T>
std::vector<DecodedLandmarks> decode_landmarks(const Tensor<T>& merged, const std::vector<BboxTransform>& transforms,
                                               const DecodeOptions& options) {
  const Shape& s = merged.shape();
  if (static_cast<std::size_t>(s.n) != transforms.size()) {
    throw DimensionError("decode_landmarks: " + std::to_string(transforms.size()) + " transforms for " +
                         std::to_string(s.n) + " images");
  }
  const auto data = merged.data();
  const std::size_t plane = s.plane();
  std::vector<DecodedLandmarks> out(static_cast<std::size_t>(s.n));
  for (int i = 0; i < s.n; ++i) {
    auto& d = out[i];
    d.landmarks.pose_bucket = 0;
    for (int l = 0; l < s.c; ++l) {
      const T* map = data.data() + (static_cast<std::size_t>(i) * s.c + l) * plane;
      std::size_t best = 0;
      for (std::size_t p = 1; p < plane; ++p) {
        if (map[p] > map[best]) best = p;
      }
      const int by = static_cast<int>(best / s.w), bx = static_cast<int>(best % s.w);
      Point2 mp{static_cast<double>(bx), static_cast<double>(by)};
      if (options.centroid_refinement) {
        double sw = 0, sx = 0, sy = 0;
        for (int y = std::max(0, by - 1); y <= std::min(s.h - 1, by + 1); ++y) {
          for (int x = std::max(0, bx - 1); x <= std::min(s.w - 1, bx + 1); ++x) {
            const double v = static_cast<double>(map[static_cast<std::size_t>(y) * s.w + x]);
            sw += v;
            sx += v * x;
            sy += v * y;
          }
        }
        if (sw > 0) mp = {sx / sw, sy / sw};
      }
      const double conf = static_cast<double>(map[best]);
      d.landmarks.points.push_back(transforms[i].map_to_image(mp));
      d.landmarks.visible.push_back(conf > options.visibility_threshold ? 1 : 0);
      d.confidence.push_back(conf);
    }
  }
  return out;
}

template std::vector<DecodedLandmarks> decode_landmarks(const Tensor<float>&, const std::vector<BboxTransform>&,
                                                        const DecodeOptions&);
template std::vector<DecodedLandmarks> decode_landmarks(const Tensor<double>&, const std::vector<BboxTransform>&,
                                                        const DecodeOptions&);

}  // namespace godp
