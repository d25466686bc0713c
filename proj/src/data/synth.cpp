#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "godp/data.hpp"
#include "godp/errors.hpp"
#include "godp/rng.hpp"

namespace godp {

namespace {

// Face-local landmark layout: units of the head half-axes, y down.
constexpr std::array<Point2, 5> kLayout = {{{-0.40, -0.18}, {0.40, -0.18}, {0.0, 0.17}, {-0.30, 0.47}, {0.30, 0.47}}};

struct Face {
  double cx, cy;        // head center
  double a, b;          // head half-axes before yaw squash
  double theta;         // in-plane rotation
  double yaw;           // [-1, 1]
  double background, skin, feature;
  std::array<Point2, 5> local;  // jittered layout, already yaw-adjusted
};

Point2 to_image(const Face& f, Point2 local) {
  const double x = local.x * f.a, y = local.y * f.b;
  const double c = std::cos(f.theta), s = std::sin(f.theta);
  return {f.cx + c * x - s * y, f.cy + s * x + c * y};
}

Point2 to_local(const Face& f, double px, double py) {
  const double dx = px - f.cx, dy = py - f.cy;
  const double c = std::cos(f.theta), s = std::sin(f.theta);
  return {(c * dx + s * dy) / f.a, (-s * dx + c * dy) / f.b};
}

double segment_distance(Point2 p, Point2 a, Point2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(p.x - a.x - t * vx, p.y - a.y - t * vy);
}

// Intensity at one sub-pixel sample.
double shade(const Face& f, double px, double py) {
  const Point2 q = to_local(f, px, py);
  const double squash = 1.0 - 0.12 * std::abs(f.yaw);
  const double head_r = std::hypot(q.x / squash, q.y);
  if (head_r > 1.0) return f.background + 10.0 * (py / (2.0 * f.cy) - 0.5);
  double v = f.skin - 18.0 * head_r * head_r;
  const double aspect = f.b / f.a;
  const double es = 1.0 - 0.3 * std::abs(f.yaw);
  for (int e = 0; e < 2; ++e) {
    const Point2 c = f.local[e];
    const double r = std::hypot((q.x - c.x) / (0.11 * es), (q.y - c.y) / (0.07 * 1.0));
    if (r < 1.0) v = r < 0.5 ? f.feature - 20.0 : f.feature + 25.0;
  }
  const Point2 n = f.local[2];
  // Nose: bright ridge down to a dark tip blob.
  const double ridge = segment_distance({q.x, q.y * aspect}, {n.x, (n.y - 0.25) * aspect}, {n.x, n.y * aspect});
  if (ridge < 0.035) v += 18.0;
  if (std::hypot((q.x - n.x) / 0.08, (q.y - n.y) / 0.05) < 1.0) v = f.feature + 10.0;
  const Point2 m0 = f.local[3], m1 = f.local[4];
  const Point2 mid{(m0.x + m1.x) / 2.0, (m0.y + m1.y) / 2.0 + 0.03};
  const Point2 qa{q.x, q.y * aspect};
  const double lip = std::min(segment_distance(qa, {m0.x, m0.y * aspect}, {mid.x, mid.y * aspect}),
                              segment_distance(qa, {mid.x, mid.y * aspect}, {m1.x, m1.y * aspect}));
  if (lip < 0.045) v = f.feature;
  return v;
}

DatasetRecord render_one(const SynthOptions& o, int index) {
  Rng rng = make_rng(o.seed, "data", {static_cast<std::uint64_t>(index)});
  const double S = o.image_size;
  Face f;
  f.a = S * uniform(rng, 0.25, 0.31);
  f.b = f.a * uniform(rng, 1.15, 1.30);
  f.cx = S / 2.0 + uniform(rng, -0.06, 0.06) * S;
  f.cy = S / 2.0 + uniform(rng, -0.06, 0.06) * S;
  f.theta = uniform(rng, -0.35, 0.35);
  f.yaw = uniform(rng, -1.0, 1.0);
  const double brightness = uniform(rng, 0.8, 1.15);
  f.background = uniform(rng, 30.0, 100.0);
  f.skin = std::min(245.0, uniform(rng, 160.0, 210.0) * brightness);
  f.feature = uniform(rng, 25.0, 70.0);
  const double squash = 1.0 - 0.3 * std::abs(f.yaw);
  const double shift = 0.22 * f.yaw;
  for (int l = 0; l < 5; ++l) {
    const double jx = uniform(rng, -0.04, 0.04), jy = uniform(rng, -0.04, 0.04);
    f.local[l] = {kLayout[l].x * squash + shift + jx, kLayout[l].y + jy};
  }

  GrayImage img;
  img.width = img.height = o.image_size;
  img.pixels.resize(static_cast<std::size_t>(o.image_size) * o.image_size);
  std::vector<double> canvas(img.pixels.size());
  for (int y = 0; y < o.image_size; ++y) {
    for (int x = 0; x < o.image_size; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) acc += shade(f, x - 0.25 + 0.5 * sx, y - 0.25 + 0.5 * sy);
      }
      canvas[static_cast<std::size_t>(y) * o.image_size + x] = acc / 4.0;
    }
  }

  DatasetRecord r;
  r.landmarks.points.resize(o.landmarks);
  r.landmarks.visible.assign(o.landmarks, 1);
  for (int l = 0; l < o.landmarks; ++l) r.landmarks.points[l] = to_image(f, f.local[l]);
  r.landmarks.pose_bucket = std::clamp(static_cast<int>(std::floor((f.yaw + 1.0) / 2.0 * o.subspaces)), 0,
                                       o.subspaces - 1);

  // Occluders: a textured box over the chosen landmark hides whatever it covers.
  for (int l = 0; l < o.landmarks; ++l) {
    if (!(uniform01(rng) < o.occlusion_rate)) continue;
    const double half = f.a * uniform(rng, 0.14, 0.22);
    const Point2 c{r.landmarks.points[l].x + uniform(rng, -0.3, 0.3) * half,
                   r.landmarks.points[l].y + uniform(rng, -0.3, 0.3) * half};
    const double fill = uniform(rng, 20.0, 235.0);
    const double stripe = uniform(rng, 2.0, 5.0);
    for (int y = std::max(0, static_cast<int>(c.y - half)); y <= std::min(o.image_size - 1, static_cast<int>(c.y + half)); ++y) {
      for (int x = std::max(0, static_cast<int>(c.x - half)); x <= std::min(o.image_size - 1, static_cast<int>(c.x + half)); ++x) {
        canvas[static_cast<std::size_t>(y) * o.image_size + x] = fill + 15.0 * std::sin((x + y) / stripe);
      }
    }
    for (int j = 0; j < o.landmarks; ++j) {
      const auto& p = r.landmarks.points[j];
      if (std::abs(p.x - c.x) <= half && std::abs(p.y - c.y) <= half) r.landmarks.visible[j] = 0;
    }
  }
  for (std::size_t p = 0; p < canvas.size(); ++p) {
    const double v = canvas[p] + o.noise_sigma * normal01(rng);
    img.pixels[p] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }

  // Axis-aligned extent of the rotated head ellipse.
  const double ha = f.a * (1.0 - 0.12 * std::abs(f.yaw));
  const double c = std::cos(f.theta), s = std::sin(f.theta);
  const double ex = std::hypot(ha * c, f.b * s), ey = std::hypot(ha * s, f.b * c);
  r.bbox = BBox{f.cx - ex, f.cy - ey, 2.0 * ex, 2.0 * ey};
  char name[32];
  std::snprintf(name, sizeof name, "images/%06d.pgm", index);
  r.id = name;
  r.image = std::move(img);
  return r;
}

void check_options(const SynthOptions& o) {
  if (o.count < 0) throw ConfigError("synth: negative image count");
  if (o.landmarks < 1 || o.landmarks > 5) throw ConfigError("synth: the face generator provides 1..5 landmarks");
  if (o.subspaces < 1) throw ConfigError("synth: need at least one pose subspace");
  if (o.image_size < 16) throw ConfigError("synth: image_size must be at least 16");
  if (!(o.occlusion_rate >= 0.0 && o.occlusion_rate <= 1.0)) throw ConfigError("synth: occlusion_rate outside [0, 1]");
}

}  // namespace

Manifest synth_render(const SynthOptions& options) {
  check_options(options);
  Manifest m;
  m.landmarks = options.landmarks;
  m.subspaces = options.subspaces;
  for (int i = 0; i < options.count; ++i) m.records.push_back(render_one(options, i));
  return m;
}

Manifest synth_generate(const SynthOptions& options, const std::filesystem::path& out_dir) {
  Manifest m = synth_render(options);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  write_manifest(out_dir / "manifest.txt", m, true);
  for (auto& r : m.records) r.image_path = out_dir / r.id;
  return m;
}

}  // namespace godp
