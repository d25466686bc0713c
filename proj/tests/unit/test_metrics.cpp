#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "godp/errors.hpp"
#include "godp/metrics.hpp"

using namespace godp;
namespace fs = std::filesystem;

namespace {

LandmarkSet pts(std::vector<Point2> p, std::vector<std::uint8_t> v = {}) {
  LandmarkSet s;
  s.points = std::move(p);
  s.visible = v.empty() ? std::vector<std::uint8_t>(s.points.size(), 1) : std::move(v);
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("nme examples") {
  const auto gt = pts({{10, 10}});
  CHECK(nme(gt, gt, BBox{0, 0, 100, 100}) == 0.0);
  CHECK(nme(pts({{13, 14}}), gt, BBox{0, 0, 100, 100}) == 5.0);
  // Non-square: geometric mean by default, max side on request.
  CHECK(face_size(BBox{0, 0, 50, 200}) == 100.0);
  CHECK(face_size(BBox{0, 0, 50, 200}, FaceSizeRule::kMaxSide) == 200.0);
  CHECK(nme(pts({{13, 14}}), gt, BBox{0, 0, 25, 400}) == 5.0);

  // Visible subset skips occluded landmarks; all includes them.
  const auto g2 = pts({{0, 0}, {10, 0}}, {1, 0});
  const auto p2 = pts({{3, 4}, {10, 20}});
  CHECK(nme(p2, g2, BBox{0, 0, 100, 100}) == 5.0);
  NmeOptions all;
  all.subset = Subset::kAll;
  CHECK(nme(p2, g2, BBox{0, 0, 100, 100}, all) == doctest::Approx(12.5));

  NmeOptions iod;
  iod.normalization = Normalization::kIod;
  CHECK(nme(p2, g2, BBox{0, 0, 1, 1}, iod) == doctest::Approx(50.0));
  CHECK_THROWS_AS(nme(p2, pts({{0, 0}, {0, 0}}), BBox{}, iod), MetricError);
  CHECK_THROWS_AS(nme(gt, gt, BBox{0, 0, 0, 10}), MetricError);
  CHECK_THROWS_AS(nme(gt, pts({{1, 1}}, {0}), BBox{0, 0, 1, 1}), MetricError);
  CHECK_THROWS_AS(nme(p2, gt, BBox{0, 0, 1, 1}), MetricError);
}

TEST_CASE("nme is scale and translation invariant") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 100);
  for (int k = 0; k < 50; ++k) {
    auto gt = pts({{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}});
    auto pr = pts({{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}});
    const BBox b{u(rng), u(rng), 10 + u(rng), 10 + u(rng)};
    const double base = nme(pr, gt, b);
    const double s = 0.5 + u(rng) / 50, tx = u(rng) - 50, ty = u(rng) - 50;
    auto g2 = gt, p2 = pr;
    for (auto& p : g2.points) p = {p.x * s, p.y * s};
    for (auto& p : p2.points) p = {p.x * s, p.y * s};
    CHECK(nme(p2, g2, BBox{b.x * s, b.y * s, b.width * s, b.height * s}) == doctest::Approx(base).epsilon(1e-12));
    for (auto& p : gt.points) p = {p.x + tx, p.y + ty};
    for (auto& p : pr.points) p = {p.x + tx, p.y + ty};
    CHECK(nme(pr, gt, BBox{b.x + tx, b.y + ty, b.width, b.height}) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("mpk/mpb examples") {
  std::vector<double> v(10 * 10, 0.0);
  v[5 * 10 + 5] = 1.0;
  const auto one = Tensor<double>::from({1, 1, 10, 10}, v);
  const auto r = mpk_mpb(one, {{5 * 10 + 5}});
  CHECK(r.mpk == doctest::Approx(100.0 / 9.0).epsilon(1e-15));
  CHECK(r.mpb == 0.0);

  const auto uni = Tensor<double>::full({2, 3, 8, 8}, 0.125);
  const auto u = mpk_mpb(uni, {{0, 27, 63}, {9, -1, 44}});
  CHECK(u.mpk == doctest::Approx(12.5).epsilon(1e-14));
  CHECK(u.mpb == doctest::Approx(12.5).epsilon(1e-14));
  CHECK_THROWS_AS(mpk_mpb(uni, {{0, 1, 2}}), DimensionError);
}

TEST_CASE("mpk/mpb match a per-pixel scan oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> px(-10, 48);
  for (int trial = 0; trial < 20; ++trial) {
    const int N = 2, L = 3, H = 7, W = 7;
    std::vector<double> v(N * L * H * W);
    for (auto& x : v) x = u(rng);
    const auto t = Tensor<double>::from({N, L, H, W}, v);
    std::vector<std::vector<std::int32_t>> kp(N, std::vector<std::int32_t>(L));
    for (auto& im : kp)
      for (auto& k : im) k = std::max(-1, px(rng));
    double mk = 0, mb = 0;
    int ik = 0, ib = 0;
    for (int i = 0; i < N; ++i) {
      auto in_patch = [&](int l, int y, int x) {
        const int k = kp[i][l];
        return k >= 0 && std::abs(k / W - y) <= 1 && std::abs(k % W - x) <= 1;
      };
      double fk = 0, fb = 0;
      int nk = 0, nb = 0;
      for (int l = 0; l < L; ++l)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            bool any = false;
            for (int j = 0; j < L; ++j) any = any || in_patch(j, y, x);
            if (in_patch(l, y, x)) {
              fk += t.at(i, l, y, x);
              ++nk;
            }
            if (!any) {
              fb += t.at(i, l, y, x);
              ++nb;
            }
          }
      if (nk) {
        mk += 100 * fk / nk;
        ++ik;
      }
      if (nb) {
        mb += 100 * fb / nb;
        ++ib;
      }
    }
    const auto r = mpk_mpb(t, kp);
    CHECK(r.mpk == doctest::Approx(ik ? mk / ik : 0).epsilon(1e-12));
    CHECK(r.mpb == doctest::Approx(ib ? mb / ib : 0).epsilon(1e-12));
    CHECK(r.mpk >= 0);
    CHECK(r.mpk <= 100);
  }
}

TEST_CASE("ced examples and oracle") {
  const auto c = ced({1, 2, 3}, {0, 2, 10});
  CHECK(c.fractions[0] == 0.0);
  CHECK(c.fractions[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c.fractions[2] == 1.0);
  const auto g = threshold_grid(20, 41);
  CHECK(g.size() == 41);
  CHECK(g[1] == 0.5);
  CHECK(g.back() == 20);
  CHECK_THROWS_AS(threshold_grid(0, 5), ConfigError);

  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e(0.2);
  std::vector<double> errs(137);
  for (auto& x : errs) x = e(rng);
  const auto curve = ced(errs, g);
  double prev = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    int n = 0;
    for (double x : errs) n += x <= g[i];
    CHECK(curve.fractions[i] == doctest::Approx(n / 137.0).epsilon(1e-15));
    CHECK(curve.fractions[i] >= prev);
    prev = curve.fractions[i];
  }
  CHECK(ced(errs, {1e300}).fractions[0] == 1.0);
  CHECK(ced_csv(ced({1}, {0.5, 1.0})) == "threshold,fraction\n0.500000,0.000000\n1.000000,1.000000\n");
  const std::string svg = ced_svg(curve);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("<polyline") != std::string::npos);
}

TEST_CASE("evaluation reports") {
  std::vector<DatasetRecord> recs(2);
  recs[0].id = "a.pgm";
  recs[0].landmarks = pts({{10, 10}, {20, 20}}, {1, 0});
  recs[0].bbox = {0, 0, 100, 100};
  recs[1].id = "b.pgm";
  recs[1].landmarks = pts({{10, 10}, {20, 20}}, {0, 0});
  recs[1].bbox = {0, 0, 50, 50};
  const std::vector<LandmarkSet> preds = {pts({{13, 14}, {20, 30}}), pts({{10, 10}, {20, 20}})};
  const auto rep = evaluate_predictions(recs, preds, {}, threshold_grid(10, 11));
  CHECK(rep.nme_visible == 5.0);
  CHECK(rep.nme_all == doctest::Approx((7.5 + 0.0) / 2));
  CHECK(std::isnan(rep.images[1].nme_visible));
  CHECK(rep.ced.fractions[5] == 1.0);
  CHECK(rep.ced.fractions[4] == 0.0);

  const fs::path d = fs::temp_directory_path() / "godp_test_metrics";
  fs::remove_all(d);
  write_eval_reports(d, rep);
  for (const char* f : {"eval_report.csv", "eval_summary.csv", "ced.csv", "ced.svg"}) CHECK(fs::exists(d / f));
  const std::string csv = slurp(d / "eval_report.csv");
  CHECK(csv.rfind("id,nme_visible,nme_all,face_size,err_1,err_2\n", 0) == 0);
  CHECK(csv.find("b.pgm,nan,0.000000,50.000000") != std::string::npos);
  CHECK_THROWS_AS(evaluate_predictions(recs, {preds[0]}, {}, {1.0}), MetricError);
}

TEST_CASE("bbox perturbation") {
  const BBox b{10.1, 20.2, 30.3, 40.4};
  CHECK(perturb_bbox(b, 0, 0, FaceSizeRule::kGeometricMean, 5) == b);
  CHECK(perturb_bbox(b, 0.1, 0.1, FaceSizeRule::kGeometricMean, 5) ==
        perturb_bbox(b, 0.1, 0.1, FaceSizeRule::kGeometricMean, 5));
  // Huge size noise hits the floor but never collapses the box.
  for (std::uint64_t s = 0; s < 200; ++s) {
    const BBox p = perturb_bbox(b, 50.0, 0, FaceSizeRule::kGeometricMean, s);
    CHECK(p.width >= 0.1 * b.width - 1e-12);
    CHECK(p.height >= 0.1 * b.height - 1e-12);
  }
  // Location-only noise keeps the size; size-only noise keeps the center.
  const BBox l = perturb_bbox(b, 0, 0.2, FaceSizeRule::kGeometricMean, 9);
  CHECK(l.width == doctest::Approx(b.width));
  const BBox s = perturb_bbox(b, 0.2, 0, FaceSizeRule::kGeometricMean, 9);
  CHECK(s.x + s.width / 2 == doctest::Approx(b.x + b.width / 2));
  CHECK(s.y + s.height / 2 == doctest::Approx(b.y + b.height / 2));
}

TEST_CASE("robustness protocol sanity") {
  std::vector<DatasetRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].id = std::to_string(i);
    recs[i].landmarks = pts({{10.0 + i, 12}, {30, 31.0 - i}});
    recs[i].bbox = {0, 0, 40, 40};
  }
  // Ground-truth echo ignores the bbox entirely.
  LandmarkPredictor echo = [](const std::vector<DatasetRecord>& r) {
    std::vector<LandmarkSet> out;
    for (const auto& x : r) out.push_back(x.landmarks);
    return out;
  };
  const auto g = bbox_noise_eval(echo, recs, {0, 10, 30}, 3, 1);
  for (const auto& row : g.cells)
    for (const auto& c : row) CHECK(c.mean_nme == 0.0);

  // A predictor that reports the bbox center degrades with location noise.
  LandmarkPredictor center = [](const std::vector<DatasetRecord>& r) {
    std::vector<LandmarkSet> out;
    for (const auto& x : r) {
      const Point2 c{x.bbox.x + x.bbox.width / 2, x.bbox.y + x.bbox.height / 2};
      out.push_back(pts({c, c}));
    }
    return out;
  };
  const auto a = bbox_noise_eval(center, recs, {0, 30}, 5, 2);
  const auto b = bbox_noise_eval(center, recs, {0, 30}, 5, 2);
  CHECK(robustness_csv(a) == robustness_csv(b));
  double direct = 0;
  for (const auto& r : recs) direct += nme(center({r})[0], r.landmarks, r.bbox);
  CHECK(a.cells[0][0].mean_nme == direct / 3);
  for (double t : a.cells[0][0].trial_nme) CHECK(t == direct / 3);
  CHECK(a.cells[0][1].mean_nme > a.cells[0][0].mean_nme);
  CHECK(robustness_csv(a).rfind("sigma_size\\sigma_location", 0) == 0);
  CHECK_THROWS_AS(bbox_noise_eval(center, recs, {0}, 0, 1), ConfigError);
}
