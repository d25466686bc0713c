#pragma once

// Dataset ingestion, bounding-box preprocessing, synthetic faces and
// score-map decoding.
//
// Coordinates are continuous pixel coordinates: pixel (i, j) has its center
// at x = i, y = j, in every space (image, network input, score map).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "godp/landmarks.hpp"
#include "godp/tensor.hpp"

namespace godp {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

// Binary PGM (P5), maxval <= 255. Throws IoError / DataError.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

struct DatasetRecord {
  std::string id;          // image path exactly as written in the manifest
  std::filesystem::path image_path;  // resolved against the manifest directory
  GrayImage image;
  LandmarkSet landmarks;
  BBox bbox;
};

struct Manifest {
  int landmarks = 5;
  int subspaces = 1;
  std::vector<DatasetRecord> records;
};

// Header `L=<n> K=<n>`, then one record per line:
//   image_path bx by bw bh k x1 y1 v1 ... xL yL vL
// with k one-based. Blank lines and lines starting with '#' are skipped.
// Throws DataError naming the line on malformed content; missing images
// are DataErrors as well.
Manifest load_manifest(const std::filesystem::path& path, bool load_images = true);
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir, bool load_images);
std::string format_manifest(const Manifest& manifest);
// Writes the manifest text; images are written next to it when requested.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest, bool write_images = false);

// Square crop around the bbox center, scaled to the network input.
struct BboxTransform {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 1.0;  // crop side in image pixels
  int input_size = 64;
  int output_size = 32;

  double input_scale() const { return input_size / side; }
  double map_scale() const { return static_cast<double>(output_size) / input_size; }

  Point2 image_to_input(Point2 p) const { return {(p.x - x0) * input_scale(), (p.y - y0) * input_scale()}; }
  Point2 input_to_image(Point2 p) const { return {x0 + p.x / input_scale(), y0 + p.y / input_scale()}; }
  Point2 input_to_map(Point2 p) const { return {p.x * map_scale(), p.y * map_scale()}; }
  Point2 map_to_input(Point2 p) const { return {p.x / map_scale(), p.y / map_scale()}; }
  Point2 image_to_map(Point2 p) const { return input_to_map(image_to_input(p)); }
  Point2 map_to_image(Point2 p) const { return input_to_image(map_to_input(p)); }
};

// Throws DataError on a degenerate bbox.
BboxTransform make_transform(const BBox& bbox, int input_size, int output_size);

struct Preprocessed {
  std::vector<double> pixels;  // input_size^2, values in [0, 1]
  LandmarkSet landmarks;       // network-input coordinates
  BboxTransform transform;
};

// Crops the bbox square (edge replication outside the image), resizes it
// bilinearly and maps the landmarks through the same transform.
Preprocessed preprocess(const DatasetRecord& record, int input_size, int output_size);
Preprocessed preprocess(const GrayImage& image, const LandmarkSet& landmarks, const BBox& bbox, int input_size,
                        int output_size);

// (n, 1, S, S) batch of preprocessed images.
template <typename T>
Tensor<T> batch_tensor(const std::vector<const Preprocessed*>& items);

struct SynthOptions {
  int count = 32;
  int landmarks = 5;  // 1..5: eyes, nose tip, mouth corners
  int subspaces = 1;
  std::uint64_t seed = 0;
  double occlusion_rate = 0.0;
  int image_size = 80;
  double noise_sigma = 6.0;  // gray levels
};

// Renders procedural faces into out_dir/images and writes
// out_dir/manifest.txt. Returns the manifest with images loaded.
// Throws IoError when out_dir cannot be written.
Manifest synth_generate(const SynthOptions& options, const std::filesystem::path& out_dir);

// Renders the same faces in memory only.
Manifest synth_render(const SynthOptions& options);

struct DecodeOptions {
  double visibility_threshold = 0.2;
  bool centroid_refinement = false;
};

struct DecodedLandmarks {
  LandmarkSet landmarks;           // image coordinates; visible = confidence > threshold
  std::vector<double> confidence;  // max probability per landmark
};

// Argmax (ties to the smallest flat index) of every merged (n, L, h, w) map,
// mapped back to image space through the per-image transform.
template <typename T>
std::vector<DecodedLandmarks> decode_landmarks(const Tensor<T>& merged, const std::vector<BboxTransform>& transforms,
                                               const DecodeOptions& options = {});

}  // namespace godp
