#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bed/error.hpp"

namespace bed {

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t size() const { return channels * height * width; }
  constexpr std::size_t plane() const { return height * width; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
         std::to_string(s.width) + ")";
}

enum class ElementKind { Float32, Int8, Int32, Float64 };

template <typename T>
constexpr ElementKind element_kind_of() {
  if constexpr (std::is_same_v<T, float>) {
    return ElementKind::Float32;
  } else if constexpr (std::is_same_v<T, std::int8_t>) {
    return ElementKind::Int8;
  } else if constexpr (std::is_same_v<T, std::int32_t>) {
    return ElementKind::Int32;
  } else {
    // Exact accumulator storage for the simulated-integer path only.
    static_assert(std::is_same_v<T, double>, "unsupported tensor element");
    return ElementKind::Float64;
  }
}

/// Dense CHW array. Element kind is carried by the type parameter.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  static constexpr ElementKind kind = element_kind_of<T>();

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw Error(Errc::ShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                           " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using FloatTensor = Tensor<float>;
using Int8Tensor = Tensor<std::int8_t>;
using Int32Tensor = Tensor<std::int32_t>;

}  // namespace bed
