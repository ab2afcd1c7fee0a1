#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace concov {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Same data, new shape of equal size.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

private:
  Shape shape_;
  std::vector<double> data_;
};

/// Formats a flat index within `shape` the way reports show neurons:
/// a bare integer for rank-1 shapes, a tuple such as "(1, 4, 27)" otherwise.
std::string index_string(const Shape& shape, std::size_t flat);

}  // namespace concov
