#include "godp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "godp/errors.hpp"
#include "godp/rng.hpp"

namespace godp {

std::string_view normalization_name(Normalization n) { return n == Normalization::kIod ? "iod" : "face_size"; }

Normalization parse_normalization(std::string_view s) {
  if (s == "face_size") return Normalization::kFaceSize;
  if (s == "iod") return Normalization::kIod;
  throw ConfigError("unknown normalization '" + std::string(s) + "' (expected face_size or iod)");
}

std::string_view face_size_rule_name(FaceSizeRule r) { return r == FaceSizeRule::kMaxSide ? "max" : "geometric"; }

FaceSizeRule parse_face_size_rule(std::string_view s) {
  if (s == "geometric") return FaceSizeRule::kGeometricMean;
  if (s == "max") return FaceSizeRule::kMaxSide;
  throw ConfigError("unknown face size rule '" + std::string(s) + "' (expected geometric or max)");
}

double face_size(const BBox& bbox, FaceSizeRule rule) {
  if (rule == FaceSizeRule::kMaxSide) return std::max(bbox.width, bbox.height);
  return std::sqrt(bbox.width * bbox.height);
}

int selected_count(const LandmarkSet& gt, Subset subset) {
  if (subset == Subset::kAll) return static_cast<int>(gt.size());
  return static_cast<int>(std::count_if(gt.visible.begin(), gt.visible.end(), [](std::uint8_t v) { return v != 0; }));
}

double nme(const LandmarkSet& pred, const LandmarkSet& gt, const BBox& gt_bbox, const NmeOptions& options) {
  if (pred.size() != gt.size()) {
    throw MetricError("nme: prediction has " + std::to_string(pred.size()) + " landmarks, ground truth " +
                      std::to_string(gt.size()));
  }
  double norm;
  if (options.normalization == Normalization::kFaceSize) {
    norm = face_size(gt_bbox, options.face_size);
  } else {
    const int n = static_cast<int>(gt.size());
    if (options.iod_left < 0 || options.iod_left >= n || options.iod_right < 0 || options.iod_right >= n) {
      throw MetricError("nme: IOD landmark indices out of range");
    }
    const auto& a = gt.points[options.iod_left];
    const auto& b = gt.points[options.iod_right];
    norm = std::hypot(a.x - b.x, a.y - b.y);
  }
  if (!(norm > 0.0) || !std::isfinite(norm)) throw MetricError("nme: zero normalizer");
  double total = 0.0;
  int count = 0;
  for (std::size_t l = 0; l < gt.size(); ++l) {
    if (options.subset == Subset::kVisible && !gt.visible[l]) continue;
    total += std::hypot(pred.points[l].x - gt.points[l].x, pred.points[l].y - gt.points[l].y);
    ++count;
  }
  if (count == 0) throw MetricError("nme: no landmark selected");
  return 100.0 * total / count / norm;
}

template <typename T>
std::vector<MpkMpb> mpk_mpb_per_image(const Tensor<T>& merged,
                                      const std::vector<std::vector<std::int32_t>>& keypoints) {
  const Shape& s = merged.shape();
  if (keypoints.size() != static_cast<std::size_t>(s.n)) throw DimensionError("mpk_mpb: key-point list size");
  const std::size_t plane = s.plane();
  const auto data = merged.data();
  std::vector<MpkMpb> out(static_cast<std::size_t>(s.n));
  std::vector<std::uint8_t> uni(plane);
  for (int i = 0; i < s.n; ++i) {
    if (keypoints[i].size() != static_cast<std::size_t>(s.c)) throw DimensionError("mpk_mpb: key-points per image");
    std::fill(uni.begin(), uni.end(), std::uint8_t{0});
    auto patch = [&](std::int32_t kp, auto&& fn) {
      const int ky = kp / s.w, kx = kp % s.w;
      for (int y = std::max(0, ky - 1); y <= std::min(s.h - 1, ky + 1); ++y) {
        for (int x = std::max(0, kx - 1); x <= std::min(s.w - 1, kx + 1); ++x) fn(static_cast<std::size_t>(y) * s.w + x);
      }
    };
    for (int l = 0; l < s.c; ++l) {
      if (keypoints[i][l] >= 0) patch(keypoints[i][l], [&](std::size_t p) { uni[p] = 1; });
    }
    double fg = 0.0, bg = 0.0;
    std::size_t nfg = 0, nbg = 0;
    for (int l = 0; l < s.c; ++l) {
      const T* map = data.data() + (static_cast<std::size_t>(i) * s.c + l) * plane;
      if (keypoints[i][l] >= 0) {
        patch(keypoints[i][l], [&](std::size_t p) {
          fg += static_cast<double>(map[p]);
          ++nfg;
        });
      }
      for (std::size_t p = 0; p < plane; ++p) {
        if (!uni[p]) {
          bg += static_cast<double>(map[p]);
          ++nbg;
        }
      }
    }
    out[i].mpk = nfg ? 100.0 * fg / static_cast<double>(nfg) : std::numeric_limits<double>::quiet_NaN();
    out[i].mpb = nbg ? 100.0 * bg / static_cast<double>(nbg) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

template <typename T>
MpkMpb mpk_mpb(const Tensor<T>& merged, const std::vector<std::vector<std::int32_t>>& keypoints) {
  const auto per = mpk_mpb_per_image(merged, keypoints);
  MpkMpb out;
  int nk = 0, nb = 0;
  for (const auto& v : per) {
    if (!std::isnan(v.mpk)) {
      out.mpk += v.mpk;
      ++nk;
    }
    if (!std::isnan(v.mpb)) {
      out.mpb += v.mpb;
      ++nb;
    }
  }
  out.mpk = nk ? out.mpk / nk : 0.0;
  out.mpb = nb ? out.mpb / nb : 0.0;
  return out;
}

CedCurve ced(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  CedCurve c;
  c.thresholds = thresholds;
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  for (double t : thresholds) {
    const auto k = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    c.fractions.push_back(sorted.empty() ? 0.0 : static_cast<double>(k) / static_cast<double>(sorted.size()));
  }
  return c;
}

std::vector<double> threshold_grid(double max_threshold, int count) {
  if (count < 2 || !(max_threshold > 0)) throw ConfigError("threshold grid needs count >= 2 and a positive maximum");
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) g[i] = max_threshold * i / (count - 1);
  return g;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string ced_csv(const CedCurve& curve) {
  std::string out = "threshold,fraction\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    out += format_number(curve.thresholds[i]) + "," + format_number(curve.fractions[i]) + "\n";
  }
  return out;
}

std::string ced_svg(const CedCurve& curve, const std::string& title) {
  const double W = 480, H = 360, left = 60, right = 20, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  const double xmax = curve.thresholds.empty() ? 1.0 : std::max(curve.thresholds.back(), 1e-12);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = left + pw * k / 4.0, fy = top + ph - ph * k / 4.0;
    s << "<text x=\"" << fx << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << format_number(xmax * k / 4.0) << "</text>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << fy + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
      << format_number(k / 4.0) << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">NME (%)"
    << "</text>\n";
  s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
    << ")\" text-anchor=\"middle\" font-size=\"12\">fraction of images</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    s << (i ? " " : "") << format_number(left + pw * curve.thresholds[i] / xmax) << ","
      << format_number(top + ph - ph * curve.fractions[i]);
  }
  s << "\"/>\n</svg>\n";
  return s.str();
}

EvalReport evaluate_predictions(const std::vector<DatasetRecord>& records, const std::vector<LandmarkSet>& predictions,
                                const NmeOptions& options, const std::vector<double>& ced_thresholds) {
  if (records.size() != predictions.size()) {
    throw MetricError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                      std::to_string(records.size()) + " records");
  }
  EvalReport rep;
  rep.options = options;
  std::vector<double> vis_errors;
  double sum_vis = 0.0, sum_all = 0.0;
  NmeOptions vis = options, all = options;
  vis.subset = Subset::kVisible;
  all.subset = Subset::kAll;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    ImageEval e;
    e.id = r.id;
    e.face_size = face_size(r.bbox, options.face_size);
    e.nme_all = nme(predictions[i], r.landmarks, r.bbox, all);
    e.nme_visible = selected_count(r.landmarks, Subset::kVisible) > 0
                        ? nme(predictions[i], r.landmarks, r.bbox, vis)
                        : std::numeric_limits<double>::quiet_NaN();
    for (std::size_t l = 0; l < r.landmarks.size(); ++l) {
      e.errors.push_back(std::hypot(predictions[i].points[l].x - r.landmarks.points[l].x,
                                    predictions[i].points[l].y - r.landmarks.points[l].y));
    }
    sum_all += e.nme_all;
    if (!std::isnan(e.nme_visible)) {
      sum_vis += e.nme_visible;
      vis_errors.push_back(e.nme_visible);
    }
    rep.images.push_back(std::move(e));
  }
  rep.nme_all = records.empty() ? 0.0 : sum_all / static_cast<double>(records.size());
  rep.nme_visible = vis_errors.empty() ? 0.0 : sum_vis / static_cast<double>(vis_errors.size());
  rep.ced = ced(vis_errors, ced_thresholds);
  return rep;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write on " + path.string());
}

void write_eval_reports(const std::filesystem::path& out_dir, const EvalReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ostringstream rep;
  rep << "id,nme_visible,nme_all,face_size";
  const std::size_t L = report.images.empty() ? 0 : report.images.front().errors.size();
  for (std::size_t l = 0; l < L; ++l) rep << ",err_" << l + 1;
  rep << "\n";
  for (const auto& e : report.images) {
    rep << e.id << "," << format_number(e.nme_visible) << "," << format_number(e.nme_all) << ","
        << format_number(e.face_size);
    for (double v : e.errors) rep << "," << format_number(v);
    rep << "\n";
  }
  write_text_file(out_dir / "eval_report.csv", rep.str());
  std::ostringstream sum;
  sum << "metric,value\n";
  sum << "images," << report.images.size() << "\n";
  sum << "normalization," << normalization_name(report.options.normalization) << "\n";
  sum << "nme_visible," << format_number(report.nme_visible) << "\n";
  sum << "nme_all," << format_number(report.nme_all) << "\n";
  if (report.has_maps) {
    sum << "mpk," << format_number(report.maps.mpk) << "\n";
    sum << "mpb," << format_number(report.maps.mpb) << "\n";
  }
  write_text_file(out_dir / "eval_summary.csv", sum.str());
  write_text_file(out_dir / "ced.csv", ced_csv(report.ced));
  write_text_file(out_dir / "ced.svg", ced_svg(report.ced));
}

BBox perturb_bbox(const BBox& bbox, double sigma_size, double sigma_location, FaceSizeRule rule, std::uint64_t seed) {
  Rng rng(seed);
  const double fs = face_size(bbox, rule);
  const double dx = sigma_location * fs * normal01(rng);
  const double dy = sigma_location * fs * normal01(rng);
  const double sw = std::max(0.1, 1.0 + sigma_size * normal01(rng));
  const double sh = std::max(0.1, 1.0 + sigma_size * normal01(rng));
  if (sigma_size == 0.0 && sigma_location == 0.0) return bbox;
  const double cx = bbox.x + bbox.width / 2.0 + dx;
  const double cy = bbox.y + bbox.height / 2.0 + dy;
  const double w = bbox.width * sw, h = bbox.height * sh;
  return BBox{cx - w / 2.0, cy - h / 2.0, w, h};
}

RobustnessGrid bbox_noise_eval(const LandmarkPredictor& predictor, const std::vector<DatasetRecord>& records,
                               const std::vector<double>& sigmas_percent, int trials, std::uint64_t seed,
                               const NmeOptions& options) {
  if (trials < 1) throw ConfigError("robustness: trials must be positive");
  RobustnessGrid grid;
  grid.sigmas = sigmas_percent;
  NmeOptions vis = options;
  vis.subset = Subset::kVisible;
  for (std::size_t a = 0; a < sigmas_percent.size(); ++a) {
    std::vector<RobustnessCell> row;
    for (std::size_t b = 0; b < sigmas_percent.size(); ++b) {
      RobustnessCell cell;
      cell.sigma_size = sigmas_percent[a];
      cell.sigma_location = sigmas_percent[b];
      const double ss = cell.sigma_size / 100.0, sl = cell.sigma_location / 100.0;
      for (int t = 0; t < trials; ++t) {
        std::vector<DatasetRecord> noisy = records;
        for (std::size_t i = 0; i < noisy.size(); ++i) {
          noisy[i].bbox = perturb_bbox(records[i].bbox, ss, sl, options.face_size,
                                       substream_seed(seed, "noise", {a, b, static_cast<std::uint64_t>(t), i}));
        }
        const auto preds = predictor(noisy);
        if (preds.size() != records.size()) throw ConfigError("robustness: predictor returned the wrong count");
        double total = 0.0;
        int counted = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
          if (selected_count(records[i].landmarks, Subset::kVisible) == 0) continue;
          total += nme(preds[i], records[i].landmarks, records[i].bbox, vis);
          ++counted;
        }
        cell.trial_nme.push_back(counted ? total / counted : 0.0);
      }
      double m = 0.0;
      for (double v : cell.trial_nme) m += v;
      cell.mean_nme = m / static_cast<double>(cell.trial_nme.size());
      // Noise-free cells repeat one value; keep it exact rather than re-averaged.
      if (std::all_of(cell.trial_nme.begin(), cell.trial_nme.end(),
                      [&](double v) { return v == cell.trial_nme.front(); })) {
        cell.mean_nme = cell.trial_nme.front();
      }
      row.push_back(std::move(cell));
    }
    grid.cells.push_back(std::move(row));
  }
  return grid;
}

std::string robustness_csv(const RobustnessGrid& grid) {
  std::string out = "sigma_size\\sigma_location";
  for (double s : grid.sigmas) out += "," + format_number(s);
  out += "\n";
  for (std::size_t a = 0; a < grid.cells.size(); ++a) {
    out += format_number(grid.sigmas[a]);
    for (const auto& cell : grid.cells[a]) out += "," + format_number(cell.mean_nme);
    out += "\n";
  }
  return out;
}

template std::vector<MpkMpb> mpk_mpb_per_image(const Tensor<float>&, const std::vector<std::vector<std::int32_t>>&);
template std::vector<MpkMpb> mpk_mpb_per_image(const Tensor<double>&, const std::vector<std::vector<std::int32_t>>&);
template MpkMpb mpk_mpb(const Tensor<float>&, const std::vector<std::vector<std::int32_t>>&);
template MpkMpb mpk_mpb(const Tensor<double>&, const std::vector<std::vector<std::int32_t>>&);

}  // namespace godp
