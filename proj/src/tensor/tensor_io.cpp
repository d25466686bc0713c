#include "godp/tensor_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "godp/errors.hpp"

namespace godp {

namespace {

template <typename T>
std::string shortest(T v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename V>
V parse_value(const std::string& token) {
  V v{};
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw DataError("tensor dump: bad value '" + token + "'");
  }
  return v;
}

}  // namespace

template <typename T>
void write_tensor_text(std::ostream& out, const Tensor<T>& tensor) {
  const Shape s = tensor.shape();
  out << "TENSOR " << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << ' ' << precision_name(precision_of<T>())
      << '\n';
  const auto values = tensor.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << shortest(values[i]) << ((i + 1) % 8 == 0 || i + 1 == values.size() ? '\n' : ' ');
  }
}

template <typename T>
Tensor<T> read_tensor_text(std::istream& in) {
  std::string tag, prec;
  Shape s;
  if (!(in >> tag >> s.n >> s.c >> s.h >> s.w >> prec) || tag != "TENSOR") {
    throw DataError("tensor dump: missing 'TENSOR n c h w precision' header");
  }
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw DataError("tensor dump: negative extent");
  const Precision p = parse_precision(prec);
  std::vector<T> values(s.numel());
  std::string token;
  for (auto& v : values) {
    if (!(in >> token)) throw DataError("tensor dump: truncated value list");
    v = p == Precision::kFloat32 ? static_cast<T>(parse_value<float>(token))
                                 : static_cast<T>(parse_value<double>(token));
  }
  return Tensor<T>::from(s, std::move(values));
}

template <typename T>
void save_tensor_text(const std::string& path, const Tensor<T>& tensor) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_tensor_text(out, tensor);
}

template <typename T>
Tensor<T> load_tensor_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return read_tensor_text<T>(in);
}

template void write_tensor_text(std::ostream&, const Tensor<float>&);
template void write_tensor_text(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor_text<float>(std::istream&);
template Tensor<double> read_tensor_text<double>(std::istream&);
template void save_tensor_text(const std::string&, const Tensor<float>&);
template void save_tensor_text(const std::string&, const Tensor<double>&);
template Tensor<float> load_tensor_text<float>(const std::string&);
template Tensor<double> load_tensor_text<double>(const std::string&);

}  // namespace godp
