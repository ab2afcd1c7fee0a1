#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "concov/tensor.hpp"

namespace concov {

enum class DataKind { image, tabular };
enum class Normalization { div255, minmax, none };

Normalization parse_normalization(const std::string& text);

struct Dataset {
  std::string name;
  DataKind kind = DataKind::tabular;
  Shape input_shape;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::vector<std::string> class_names;

  std::vector<Tensor> train_x;
  std::vector<std::size_t> train_y;
  std::vector<Tensor> test_x;
  std::vector<std::size_t> test_y;

  /// Per-feature domain used for input box constraints and mutations.
  std::vector<double> lower;
  std::vector<double> upper;

  /// Affine map applied by minmax normalization: x' = (x - offset) / scale.
  std::vector<double> norm_offset;
  std::vector<double> norm_scale;
};

struct LabeledImages {
  Shape shape;  // H x W x 1
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
};

/// Reads an uncompressed IDX image/label file pair; pixels are scaled by 1/255.
LabeledImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Reads a CSV file with a header row. Every column but `label_column` must
/// be numeric. All rows land in the training split.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);

/// Separate train and test files; test labels must be known from training.
Dataset load_csv(const std::filesystem::path& train, const std::filesystem::path& test,
                 const std::string& label_column);

/// Pools all examples, shuffles with Rng(seed) and moves ceil(n * fraction)
/// of them into the test split.
Dataset split(Dataset dataset, double test_fraction, std::uint64_t seed);

/// Scales features and records the per-feature domain bounds. Image data is
/// already in [0, 1] after loading, so its bounds are [0, 1] regardless.
void normalize(Dataset& dataset, Normalization mode);

struct DatasetOptions {
  Normalization normalize = Normalization::none;
  std::string label_column = "class";
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir = "data";
};

/// Resolves a --dataset argument: "csv:TRAIN[,TEST]",
/// "idx:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS]", or "mnist"/"fashion_mnist"
/// looked up as the standard IDX file names under options.data_dir/NAME.
Dataset load_dataset(const std::string& spec, const DatasetOptions& options);

}  // namespace concov
