#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace godp {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

// L annotated key-points. pose_bucket is zero-based in memory; the manifest
// stores it one-based.
struct LandmarkSet {
  std::vector<Point2> points;
  std::vector<std::uint8_t> visible;
  int pose_bucket = 0;

  std::size_t size() const { return points.size(); }
  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

struct BBox {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

}  // namespace godp
