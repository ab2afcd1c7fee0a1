#include "concov/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "concov/error.hpp"
#include "concov/rng.hpp"

namespace concov {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(fmt::format("cannot open '{}'", path.string()));
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::filesystem::path& path) {
  if (b.size() < off + 4) {
    throw DataError(fmt::format("'{}' is truncated", path.string()));
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r\"");
    const auto e = cell.find_last_not_of(" \t\r\"");
    cells.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

struct RawTable {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
};

RawTable read_table(const std::filesystem::path& path, const std::string& label_column, std::size_t& n_features) {
  std::ifstream in(path);
  if (!in) {
    throw DataError(fmt::format("cannot open '{}'", path.string()));
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(fmt::format("'{}' is empty (header row required)", path.string()));
  }
  const auto header = split_line(line);
  const auto it = std::ranges::find(header, label_column);
  if (it == header.end()) {
    throw DataError(fmt::format("'{}' has no label column '{}'", path.string(), label_column));
  }
  const std::size_t label_idx = static_cast<std::size_t>(it - header.begin());
  n_features = header.size() - 1;

  RawTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("{}:{}: expected {} cells, found {}", path.string(), line_no, header.size(),
                                  cells.size()));
    }
    std::vector<double> row;
    row.reserve(n_features);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) continue;
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != cells[c].size() || !std::isfinite(v)) {
        throw DataError(fmt::format("{}:{}: non-numeric feature '{}' in column '{}'", path.string(), line_no,
                                    cells[c], header[c]));
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
    table.labels.push_back(cells[label_idx]);
  }
  return table;
}

bool parse_label_int(const std::string& s, std::size_t& out) {
  if (s.empty() || !std::ranges::all_of(s, [](char c) { return c >= '0' && c <= '9'; })) return false;
  out = std::stoul(s);
  return true;
}

/// Integer labels are used as class indices directly; anything else is mapped
/// to the index of its name in sorted order.
std::vector<std::string> make_classes(const std::vector<std::string>& labels) {
  std::size_t v = 0, max_v = 0;
  bool all_int = !labels.empty();
  for (const auto& l : labels) {
    if (!parse_label_int(l, v)) {
      all_int = false;
      break;
    }
    max_v = std::max(max_v, v);
  }
  std::vector<std::string> classes;
  if (all_int) {
    for (std::size_t i = 0; i <= max_v; ++i) classes.push_back(std::to_string(i));
  } else {
    classes = labels;
    std::ranges::sort(classes);
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  }
  return classes;
}

std::size_t class_index(const std::vector<std::string>& classes, const std::string& label,
                        const std::filesystem::path& path) {
  std::size_t v = 0;
  if (parse_label_int(label, v)) {
    if (v < classes.size() && classes[v] == label) return v;
  }
  const auto it = std::ranges::find(classes, label);
  if (it == classes.end()) {
    throw DataError(fmt::format("'{}': label '{}' does not occur in the training data", path.string(), label));
  }
  return static_cast<std::size_t>(it - classes.begin());
}

void append(const RawTable& table, const std::vector<std::string>& classes, const std::filesystem::path& path,
            std::vector<Tensor>& xs, std::vector<std::size_t>& ys) {
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    xs.emplace_back(Shape{table.rows[i].size()}, table.rows[i]);
    ys.push_back(class_index(classes, table.labels[i], path));
  }
}

void finish_bounds(Dataset& d) {
  d.lower.assign(d.n_features, std::numeric_limits<double>::infinity());
  d.upper.assign(d.n_features, -std::numeric_limits<double>::infinity());
  if (d.kind == DataKind::image) {
    d.lower.assign(d.n_features, 0.0);
    d.upper.assign(d.n_features, 1.0);
    return;
  }
  for (const auto* set : {&d.train_x, &d.test_x}) {
    for (const auto& x : *set) {
      for (std::size_t f = 0; f < d.n_features; ++f) {
        d.lower[f] = std::min(d.lower[f], x[f]);
        d.upper[f] = std::max(d.upper[f], x[f]);
      }
    }
  }
  for (std::size_t f = 0; f < d.n_features; ++f) {
    if (d.lower[f] > d.upper[f]) d.lower[f] = d.upper[f] = 0.0;
  }
}

}  // namespace

Normalization parse_normalization(const std::string& text) {
  if (text == "div255") return Normalization::div255;
  if (text == "minmax") return Normalization::minmax;
  if (text == "none") return Normalization::none;
  throw InputError(fmt::format("unknown normalization '{}' (expected div255, minmax or none)", text));
}

LabeledImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  if (be32(ib, 0, images) != 0x00000803) {
    throw DataError(fmt::format("'{}' is not an IDX image file (bad magic number)", images.string()));
  }
  if (be32(lb, 0, labels) != 0x00000801) {
    throw DataError(fmt::format("'{}' is not an IDX label file (bad magic number)", labels.string()));
  }
  const std::size_t n = be32(ib, 4, images);
  const std::size_t rows = be32(ib, 8, images);
  const std::size_t cols = be32(ib, 12, images);
  const std::size_t nl = be32(lb, 4, labels);
  if (n != nl) {
    throw DataError(fmt::format("'{}' holds {} images but '{}' holds {} labels", images.string(), n,
                                labels.string(), nl));
  }
  const std::size_t pixels = rows * cols;
  if (ib.size() < 16 + n * pixels) {
    throw DataError(fmt::format("'{}' is truncated", images.string()));
  }
  if (lb.size() < 8 + n) {
    throw DataError(fmt::format("'{}' is truncated", labels.string()));
  }
  LabeledImages out;
  out.shape = {rows, cols, 1};
  out.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> px(pixels);
    for (std::size_t p = 0; p < pixels; ++p) px[p] = ib[16 + i * pixels + p] / 255.0;
    out.images.emplace_back(out.shape, std::move(px));
    out.labels.push_back(lb[8 + i]);
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  Dataset d;
  d.name = path.stem().string();
  d.kind = DataKind::tabular;
  const auto table = read_table(path, label_column, d.n_features);
  d.input_shape = {d.n_features};
  d.class_names = make_classes(table.labels);
  d.n_classes = d.class_names.size();
  append(table, d.class_names, path, d.train_x, d.train_y);
  finish_bounds(d);
  return d;
}

Dataset load_csv(const std::filesystem::path& train, const std::filesystem::path& test,
                 const std::string& label_column) {
  Dataset d = load_csv(train, label_column);
  std::size_t n_test_features = 0;
  const auto table = read_table(test, label_column, n_test_features);
  if (n_test_features != d.n_features) {
    throw DataError(fmt::format("'{}' has {} features but '{}' has {}", test.string(), n_test_features,
                                train.string(), d.n_features));
  }
  append(table, d.class_names, test, d.test_x, d.test_y);
  finish_bounds(d);
  return d;
}

Dataset split(Dataset dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InputError(fmt::format("test fraction must lie in (0, 1), got {}", test_fraction));
  }
  std::vector<Tensor> xs = std::move(dataset.train_x);
  std::vector<std::size_t> ys = std::move(dataset.train_y);
  std::ranges::move(dataset.test_x, std::back_inserter(xs));
  ys.insert(ys.end(), dataset.test_y.begin(), dataset.test_y.end());

  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  const auto n_test = static_cast<std::size_t>(std::ceil(static_cast<double>(xs.size()) * test_fraction - 1e-9));

  dataset.train_x.clear();
  dataset.train_y.clear();
  dataset.test_x.clear();
  dataset.test_y.clear();
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& tx = i < n_test ? dataset.test_x : dataset.train_x;
    auto& ty = i < n_test ? dataset.test_y : dataset.train_y;
    tx.push_back(std::move(xs[order[i]]));
    ty.push_back(ys[order[i]]);
  }
  return dataset;
}

void normalize(Dataset& d, Normalization mode) {
  d.norm_offset.assign(d.n_features, 0.0);
  d.norm_scale.assign(d.n_features, 1.0);
  if (d.kind == DataKind::tabular && mode != Normalization::none) {
    if (mode == Normalization::div255) {
      d.norm_scale.assign(d.n_features, 255.0);
    } else {
      std::vector<double> lo(d.n_features, std::numeric_limits<double>::infinity());
      std::vector<double> hi(d.n_features, -std::numeric_limits<double>::infinity());
      for (const auto& x : d.train_x) {
        for (std::size_t f = 0; f < d.n_features; ++f) {
          lo[f] = std::min(lo[f], x[f]);
          hi[f] = std::max(hi[f], x[f]);
        }
      }
      for (std::size_t f = 0; f < d.n_features; ++f) {
        if (d.train_x.empty()) break;
        d.norm_offset[f] = lo[f];
        d.norm_scale[f] = hi[f] > lo[f] ? hi[f] - lo[f] : 1.0;
      }
    }
    for (auto* set : {&d.train_x, &d.test_x}) {
      for (auto& x : *set) {
        for (std::size_t f = 0; f < d.n_features; ++f) x[f] = (x[f] - d.norm_offset[f]) / d.norm_scale[f];
      }
    }
  }
  finish_bounds(d);
}

Dataset load_dataset(const std::string& spec, const DatasetOptions& options) {
  auto list = [](const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) parts.push_back(cur);
    return parts;
  };

  auto from_images = [&](LabeledImages train, std::optional<LabeledImages> test, std::string name) {
    Dataset d;
    d.name = std::move(name);
    d.kind = DataKind::image;
    d.input_shape = train.shape;
    d.n_features = shape_size(train.shape);
    d.train_x = std::move(train.images);
    d.train_y = std::move(train.labels);
    if (test) {
      if (test->shape != d.input_shape) throw DataError("train and test images differ in shape");
      d.test_x = std::move(test->images);
      d.test_y = std::move(test->labels);
    }
    std::size_t max_label = 0;
    for (auto y : d.train_y) max_label = std::max(max_label, y);
    for (auto y : d.test_y) max_label = std::max(max_label, y);
    d.n_classes = max_label + 1;
    for (std::size_t c = 0; c < d.n_classes; ++c) d.class_names.push_back(std::to_string(c));
    if (!test) d = split(std::move(d), options.test_fraction, options.seed);
    normalize(d, Normalization::div255);
    return d;
  };

  if (spec.starts_with("csv:")) {
    const auto parts = list(spec.substr(4));
    Dataset d;
    if (parts.size() == 1) {
      d = split(load_csv(parts[0], options.label_column), options.test_fraction, options.seed);
    } else if (parts.size() == 2) {
      d = load_csv(parts[0], parts[1], options.label_column);
    } else {
      throw InputError("expected csv:TRAIN[,TEST]");
    }
    normalize(d, options.normalize);
    return d;
  }
  if (spec.starts_with("idx:")) {
    const auto parts = list(spec.substr(4));
    if (parts.size() == 2) {
      return from_images(load_idx(parts[0], parts[1]), std::nullopt, std::filesystem::path(parts[0]).stem().string());
    }
    if (parts.size() == 4) {
      return from_images(load_idx(parts[0], parts[1]), load_idx(parts[2], parts[3]),
                         std::filesystem::path(parts[0]).stem().string());
    }
    throw InputError("expected idx:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS]");
  }
  if (spec == "mnist" || spec == "fashion_mnist") {
    const auto dir = options.data_dir / spec;
    return from_images(load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                       load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"), spec);
  }
  throw InputError(fmt::format(
      "unknown dataset '{}' (expected csv:PATH, idx:IMAGES,LABELS, mnist or fashion_mnist)", spec));
}

}  // namespace concov
