#include <cctype>
#include <fstream>
#include <iterator>

#include "godp/data.hpp"
#include "godp/errors.hpp"

namespace godp {

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const unsigned char ch = static_cast<unsigned char>(bytes[pos]);
    if (ch == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(ch)) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t begin = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(begin, pos - begin);
}

int header_int(const std::string& bytes, std::size_t& pos, const std::string& where) {
  const std::string tok = header_token(bytes, pos);
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw DataError(where + ": bad PGM header field '" + tok + "'");
  }
  return std::stoi(tok);
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing image " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P5") throw DataError(where + ": not a binary PGM (P5) file");
  GrayImage img;
  img.width = header_int(bytes, pos, where);
  img.height = header_int(bytes, pos, where);
  const int maxval = header_int(bytes, pos, where);
  if (img.width <= 0 || img.height <= 0) throw DataError(where + ": empty image");
  if (maxval <= 0 || maxval > 255) throw DataError(where + ": only 8-bit PGM is supported");
  ++pos;  // single whitespace byte before the raster
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() < pos + count) throw DataError(where + ": truncated raster");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw DataError("write_pgm: pixel count does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("short write on " + path.string());
}

}  // namespace godp
