#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "concov/network.hpp"

namespace concov {

inline constexpr const char* kModelFormat = "concov-model-v1";

/// Reads a model manifest. Throws DataError naming the offending layer.
Network load_model(const std::filesystem::path& path);
void save_model(const Network& net, const std::filesystem::path& path);

std::string model_to_json(const Network& net);
Network model_from_json(const std::string& text);

/// Builds a network from an architecture string such as
/// "conv2d:3x3:32,relu,maxpool2d:2x2,flatten,dense:10,softmax".
///
/// Layer tokens: dense:N | conv2d:KHxKW:OUT[:sSTRIDE] | maxpool2d:PHxPW |
/// flatten | relu | softmax. Layers get Keras-style names (dense, dense_1,
/// activation, ...). Parameters are drawn from Rng(seed) layer by layer,
/// weights in storage order then biases: weights uniform in
/// [-1, 1]/sqrt(fan_in), biases uniform in [-0.5, 0.5].
Network generate_model(const std::string& spec, const Shape& input_shape, std::uint64_t seed);

/// Parses "28,28,1" or "28x28x1".
Shape parse_shape(const std::string& text);

}  // namespace concov
