#pragma once

#include <iosfwd>
#include <string>

#include "godp/tensor.hpp"

namespace godp {

// Text dump used by golden tests:
//   TENSOR n c h w precision
//   v0 v1 v2 ...            (row-major n, c, h, w; shortest round-trip decimals)
template <typename T>
void write_tensor_text(std::ostream& out, const Tensor<T>& tensor);

// Values are parsed at the dumped precision and converted to T.
template <typename T>
Tensor<T> read_tensor_text(std::istream& in);

template <typename T>
void save_tensor_text(const std::string& path, const Tensor<T>& tensor);

template <typename T>
Tensor<T> load_tensor_text(const std::string& path);

}  // namespace godp
