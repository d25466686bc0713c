#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "godp/data.hpp"
#include "godp/errors.hpp"

namespace godp {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool parse_double(const std::string& tok, double& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

bool parse_int(const std::string& tok, int& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir, bool load_images) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_header = false;
  Manifest m;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    const std::string where = "manifest line " + std::to_string(line_no);
    if (!have_header) {
      if (tok.size() != 2 || tok[0].rfind("L=", 0) != 0 || tok[1].rfind("K=", 0) != 0 ||
          !parse_int(tok[0].substr(2), m.landmarks) || !parse_int(tok[1].substr(2), m.subspaces) ||
          m.landmarks < 1 || m.subspaces < 1) {
        throw DataError(where + ": expected header 'L=<n> K=<n>'");
      }
      have_header = true;
      continue;
    }
    const std::size_t expected = 6 + 3 * static_cast<std::size_t>(m.landmarks);
    if (tok.size() != expected) {
      throw DataError(where + ": expected " + std::to_string(expected) + " fields for L=" +
                      std::to_string(m.landmarks) + ", found " + std::to_string(tok.size()));
    }
    DatasetRecord r;
    r.id = tok[0];
    r.image_path = base_dir / tok[0];
    double b[4];
    for (int i = 0; i < 4; ++i) {
      if (!parse_double(tok[1 + i], b[i])) throw DataError(where + ": bad bbox value '" + tok[1 + i] + "'");
    }
    r.bbox = BBox{b[0], b[1], b[2], b[3]};
    if (!(r.bbox.width > 0 && r.bbox.height > 0)) throw DataError(where + ": bbox needs positive extents");
    int k = 0;
    if (!parse_int(tok[5], k) || k < 1 || k > m.subspaces) {
      throw DataError(where + ": pose bucket '" + tok[5] + "' outside 1.." + std::to_string(m.subspaces));
    }
    r.landmarks.pose_bucket = k - 1;
    for (int l = 0; l < m.landmarks; ++l) {
      Point2 p;
      int v = 0;
      const std::size_t o = 6 + 3 * static_cast<std::size_t>(l);
      if (!parse_double(tok[o], p.x) || !parse_double(tok[o + 1], p.y) || !std::isfinite(p.x) ||
          !std::isfinite(p.y)) {
        throw DataError(where + ": bad coordinate for landmark " + std::to_string(l + 1));
      }
      if (!parse_int(tok[o + 2], v) || (v != 0 && v != 1)) {
        throw DataError(where + ": visibility of landmark " + std::to_string(l + 1) + " must be 0 or 1");
      }
      r.landmarks.points.push_back(p);
      r.landmarks.visible.push_back(static_cast<std::uint8_t>(v));
    }
    if (load_images) {
      r.image = read_pgm(r.image_path);
      const BBox& bb = r.bbox;
      if (bb.x + bb.width <= 0 || bb.y + bb.height <= 0 || bb.x >= r.image.width || bb.y >= r.image.height) {
        throw DataError(where + ": bbox does not overlap the image");
      }
    }
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw DataError("manifest: missing 'L=<n> K=<n>' header");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path, bool load_images) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), load_images);
}

std::string format_manifest(const Manifest& manifest) {
  std::ostringstream out;
  out << "L=" << manifest.landmarks << " K=" << manifest.subspaces << "\n";
  for (const auto& r : manifest.records) {
    if (r.id.empty() || r.id.find_first_of(" \t\n") != std::string::npos) {
      throw DataError("manifest: image path '" + r.id + "' must be non-empty without whitespace");
    }
    if (static_cast<int>(r.landmarks.size()) != manifest.landmarks) {
      throw DataError("manifest: record '" + r.id + "' has " + std::to_string(r.landmarks.size()) +
                      " landmarks, header says " + std::to_string(manifest.landmarks));
    }
    out << r.id << " " << fmt(r.bbox.x) << " " << fmt(r.bbox.y) << " " << fmt(r.bbox.width) << " "
        << fmt(r.bbox.height) << " " << (r.landmarks.pose_bucket + 1);
    for (std::size_t l = 0; l < r.landmarks.size(); ++l) {
      out << " " << fmt(r.landmarks.points[l].x) << " " << fmt(r.landmarks.points[l].y) << " "
          << (r.landmarks.visible[l] ? 1 : 0);
    }
    out << "\n";
  }
  return out.str();
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest, bool write_images) {
  const std::string text = format_manifest(manifest);
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (write_images) {
    for (const auto& r : manifest.records) {
      const auto img_path = path.parent_path() / r.id;
      std::filesystem::create_directories(img_path.parent_path(), ec);
      write_pgm(img_path, r.image);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << text;
  if (!out) throw IoError("short write on manifest " + path.string());
}

}  // namespace godp
