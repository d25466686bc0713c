#pragma once

// Landmark error metrics and report files.
//
// Report files (all columns stable):
//   eval_report.csv   id,nme_visible,nme_all,face_size,err_1..err_L  (errors in image pixels)
//   eval_summary.csv  metric,value
//   ced.csv           threshold,fraction
//   ced.svg           the same curve as a polyline
//   robustness.csv    sigma_size\sigma_location grid of mean NME

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "godp/data.hpp"
#include "godp/landmarks.hpp"
#include "godp/tensor.hpp"

namespace godp {

enum class Normalization { kFaceSize, kIod };
enum class Subset { kVisible, kAll };
enum class FaceSizeRule { kGeometricMean, kMaxSide };

std::string_view normalization_name(Normalization n);
Normalization parse_normalization(std::string_view s);
std::string_view face_size_rule_name(FaceSizeRule r);
FaceSizeRule parse_face_size_rule(std::string_view s);

struct NmeOptions {
  Normalization normalization = Normalization::kFaceSize;
  Subset subset = Subset::kVisible;
  FaceSizeRule face_size = FaceSizeRule::kGeometricMean;
  int iod_left = 0;  // outer eye landmarks for IOD
  int iod_right = 1;
};

double face_size(const BBox& bbox, FaceSizeRule rule = FaceSizeRule::kGeometricMean);

// Percent. Throws MetricError on a zero normalizer, mismatched L or an empty
// landmark selection.
double nme(const LandmarkSet& pred, const LandmarkSet& gt, const BBox& gt_bbox, const NmeOptions& options = {});

// Number of landmarks the subset selects for this ground truth.
int selected_count(const LandmarkSet& gt, Subset subset);

struct MpkMpb {
  double mpk = 0.0;  // percent
  double mpb = 0.0;  // percent
};

// merged: (n, L, h, w) probabilities. keypoints[i][l]: flat pixel of
// landmark l of image i, or -1. A landmark's key-point region is the 3x3
// patch around its pixel, read on its own map; background is every pixel
// outside the union of patches, read on every map.
template <typename T>
std::vector<MpkMpb> mpk_mpb_per_image(const Tensor<T>& merged, const std::vector<std::vector<std::int32_t>>& keypoints);

// Image average of the per-image values.
template <typename T>
MpkMpb mpk_mpb(const Tensor<T>& merged, const std::vector<std::vector<std::int32_t>>& keypoints);

struct CedCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions;
};

// Fraction of errors <= each threshold.
CedCurve ced(const std::vector<double>& errors, const std::vector<double>& thresholds);
// count evenly spaced thresholds from 0 to max_threshold inclusive.
std::vector<double> threshold_grid(double max_threshold, int count);
std::string ced_csv(const CedCurve& curve);
std::string ced_svg(const CedCurve& curve, const std::string& title = "CED");

struct ImageEval {
  std::string id;
  double nme_visible = 0.0;  // NaN when no landmark is visible
  double nme_all = 0.0;
  double face_size = 0.0;
  std::vector<double> errors;  // per landmark, image pixels
};

struct EvalReport {
  std::vector<ImageEval> images;
  double nme_visible = 0.0;
  double nme_all = 0.0;
  bool has_maps = false;
  MpkMpb maps;
  CedCurve ced;
  NmeOptions options;
};

// Per-image and mean NMEs over records and predictions in the same order.
// The CED uses the visible-subset NME.
EvalReport evaluate_predictions(const std::vector<DatasetRecord>& records, const std::vector<LandmarkSet>& predictions,
                                const NmeOptions& options, const std::vector<double>& ced_thresholds);

// Writes eval_report.csv, eval_summary.csv, ced.csv and ced.svg.
void write_eval_reports(const std::filesystem::path& out_dir, const EvalReport& report);

// Predicts image-space landmarks for records whose bboxes may be perturbed.
using LandmarkPredictor = std::function<std::vector<LandmarkSet>(const std::vector<DatasetRecord>& records)>;

struct RobustnessCell {
  double sigma_size = 0.0;      // percent
  double sigma_location = 0.0;  // percent
  std::vector<double> trial_nme;
  double mean_nme = 0.0;
};

struct RobustnessGrid {
  std::vector<double> sigmas;
  std::vector<std::vector<RobustnessCell>> cells;  // [size][location]
};

// Each record's bbox: center shifted by N(0, (s_loc * face_size)^2) per axis,
// width and height each multiplied by max(0.1, 1 + N(0, s_size^2)). NME is
// normalized by the unperturbed ground-truth bbox.
RobustnessGrid bbox_noise_eval(const LandmarkPredictor& predictor, const std::vector<DatasetRecord>& records,
                               const std::vector<double>& sigmas_percent, int trials, std::uint64_t seed,
                               const NmeOptions& options = {});

BBox perturb_bbox(const BBox& bbox, double sigma_size, double sigma_location, FaceSizeRule rule, std::uint64_t seed);

std::string robustness_csv(const RobustnessGrid& grid);

// Text helpers shared by the report writers.
std::string format_number(double v);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace godp
