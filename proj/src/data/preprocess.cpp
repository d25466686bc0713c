#include <algorithm>
#include <cmath>

#include "godp/data.hpp"
#include "godp/errors.hpp"

namespace godp {

BboxTransform make_transform(const BBox& bbox, int input_size, int output_size) {
  if (!(bbox.width > 0 && bbox.height > 0) || !std::isfinite(bbox.x) || !std::isfinite(bbox.y) ||
      !std::isfinite(bbox.width) || !std::isfinite(bbox.height)) {
    throw DataError("degenerate bounding box");
  }
  if (input_size < 2 || output_size < 1) throw ConfigError("make_transform: bad sizes");
  // Expand the short side about the center.
  const double side = std::max(bbox.width, bbox.height);
  const double cx = bbox.x + bbox.width / 2.0;
  const double cy = bbox.y + bbox.height / 2.0;
  return BboxTransform{cx - side / 2.0, cy - side / 2.0, side, input_size, output_size};
}

Preprocessed preprocess(const GrayImage& image, const LandmarkSet& landmarks, const BBox& bbox, int input_size,
                        int output_size) {
  if (image.width <= 0 || image.height <= 0) throw DataError("preprocess: empty image");
  Preprocessed out;
  out.transform = make_transform(bbox, input_size, output_size);
  const BboxTransform& t = out.transform;
  out.pixels.resize(static_cast<std::size_t>(input_size) * input_size);
  const double step = 1.0 / t.input_scale();
  auto px = [&](int x, int y) {
    x = std::clamp(x, 0, image.width - 1);
    y = std::clamp(y, 0, image.height - 1);
    return static_cast<double>(image.at(x, y));
  };
  for (int v = 0; v < input_size; ++v) {
    const double sy = t.y0 + v * step;
    const double fy = std::floor(sy);
    const double wy = sy - fy;
    const int iy = static_cast<int>(fy);
    for (int u = 0; u < input_size; ++u) {
      const double sx = t.x0 + u * step;
      const double fx = std::floor(sx);
      const double wx = sx - fx;
      const int ix = static_cast<int>(fx);
      const double top = px(ix, iy) * (1 - wx) + px(ix + 1, iy) * wx;
      const double bottom = px(ix, iy + 1) * (1 - wx) + px(ix + 1, iy + 1) * wx;
      out.pixels[static_cast<std::size_t>(v) * input_size + u] = (top * (1 - wy) + bottom * wy) / 255.0;
    }
  }
  out.landmarks = landmarks;
  for (auto& p : out.landmarks.points) p = t.image_to_input(p);
  return out;
}

Preprocessed preprocess(const DatasetRecord& record, int input_size, int output_size) {
  try {
    return preprocess(record.image, record.landmarks, record.bbox, input_size, output_size);
  } catch (const DataError& e) {
    throw DataError(record.id + ": " + e.what());
  }
}

template <typename T>
Tensor<T> batch_tensor(const std::vector<const Preprocessed*>& items) {
  if (items.empty()) throw DimensionError("batch_tensor: empty batch");
  const int s = items.front()->transform.input_size;
  std::vector<T> values;
  values.reserve(items.size() * static_cast<std::size_t>(s) * s);
  for (const Preprocessed* p : items) {
    if (p->transform.input_size != s) throw DimensionError("batch_tensor: mixed input sizes");
    for (double v : p->pixels) values.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from(Shape{static_cast<int>(items.size()), 1, s, s}, std::move(values));
}

template Tensor<float> batch_tensor(const std::vector<const Preprocessed*>&);
template Tensor<double> batch_tensor(const std::vector<const Preprocessed*>&);

}  // namespace godp
