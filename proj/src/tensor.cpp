#include "afp/tensor.hpp"

#include <cmath>

namespace afp::num {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
bool all_finite(std::span<const T> xs) {
  for (T x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace afp::num
