#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "concov/tensor.hpp"

namespace concov {

/// Fully-connected layer. Weights are indexed [in][out].
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weights;  // [in, out]
  Tensor bias;     // [out]
};

/// 2-D convolution with valid padding over HWC tensors.
/// Weights are indexed [kernel_h][kernel_w][in_ch][out_ch].
struct Conv2D {
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t stride = 1;
  Tensor weights;  // [kernel_h, kernel_w, in_ch, out_ch]
  Tensor bias;     // [out_ch]
};

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
struct MaxPool2D {
  std::size_t pool_h = 0;
  std::size_t pool_w = 0;
};

struct Flatten {};
struct ReLU {};
struct Softmax {};

using LayerKind = std::variant<Dense, Conv2D, MaxPool2D, Flatten, ReLU, Softmax>;

struct LayerSpec {
  std::string name;
  LayerKind kind;
};

const char* kind_name(const LayerKind& kind);

/// Output shape of `spec` applied to an input of shape `in`; validates the
/// layer parameters and throws InputError naming the layer.
Shape infer_output_shape(const LayerSpec& spec, const Shape& in);

/// Per-layer values of one forward pass.
///
/// For dense and conv layers `u` is the affine output and `v == u`. For the
/// other layers `u` is the layer input and `v` its output, so for a ReLU
/// layer `v = max(u, 0)`.
struct LayerTrace {
  Tensor u;
  Tensor v;
  /// Max-pool layers only: for each output cell, the flat input index that
  /// realised the maximum (lowest index on ties).
  std::vector<std::size_t> selected_index;
};

struct ActivationTrace {
  Tensor input;
  std::vector<LayerTrace> layers;
};

struct Prediction {
  Tensor scores;  // pre-softmax class scores
  std::size_t label = 0;
};

/// Immutable feed-forward classifier.
class Network {
public:
  /// Validates layer parameters and shape composition. Throws InputError
  /// naming the offending layer.
  Network(Shape input_shape, std::vector<LayerSpec> layers);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t input_size() const { return shape_size(input_shape_); }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t k) const { return layers_[k]; }

  const Shape& input_shape_of(std::size_t k) const { return k == 0 ? input_shape_ : output_shapes_[k - 1]; }
  const Shape& output_shape_of(std::size_t k) const { return output_shapes_[k]; }
  std::size_t num_classes() const { return shape_size(output_shapes_.back()); }

  std::optional<std::size_t> find(const std::string& name) const;
  /// Like find() but throws InputError for unknown names.
  std::size_t index_of(const std::string& name) const;

  std::size_t parameter_count(std::size_t k) const;

private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> output_shapes_;
};

/// Class scores and argmax label (ties to the lowest index).
Prediction forward(const Network& net, const Tensor& x);

ActivationTrace forward_trace(const Network& net, const Tensor& x);

/// Applies layer `k` to `input`, filling a LayerTrace.
LayerTrace apply_layer(const Network& net, std::size_t k, const Tensor& input);

/// Label implied by a finished trace.
std::size_t trace_label(const ActivationTrace& trace);

std::size_t argmax(std::span<const double> values);

/// Dense or conv.
bool is_affine(const LayerSpec& layer);

/// Name under which reports show neurons of ReLU layer `k`: the affine layer
/// feeding it when there is one, the ReLU's own name otherwise.
std::string neuron_layer_name(const Network& net, std::size_t k);

}  // namespace concov
