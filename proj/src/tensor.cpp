#include "concov/tensor.hpp"

#include <fmt/format.h>

#include <functional>
#include <numeric>

#include "concov/error.hpp"

namespace concov {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) { return fmt::format("{}", fmt::join(shape, "x")); }

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw InputError(fmt::format("tensor of shape {} needs {} values, got {}", shape_string(shape_),
                                 shape_size(shape_), data_.size()));
  }
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

std::string index_string(const Shape& shape, std::size_t flat) {
  if (shape.size() <= 1) {
    return std::to_string(flat);
  }
  std::vector<std::size_t> coords(shape.size());
  for (std::size_t d = shape.size(); d-- > 0;) {
    coords[d] = flat % shape[d];
    flat /= shape[d];
  }
  return fmt::format("({})", fmt::join(coords, ", "));
}

}  // namespace concov
