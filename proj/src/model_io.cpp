#include "concov/model_io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "concov/error.hpp"
#include "concov/rng.hpp"

namespace concov {
namespace {

using nlohmann::json;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

json layer_to_json(const LayerSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["type"] = kind_name(spec.kind);
  std::visit(overloaded{
                 [&](const Dense& d) {
                   j["in"] = d.in;
                   j["out"] = d.out;
                   j["weights"] = d.weights.data();
                   j["bias"] = d.bias.data();
                 },
                 [&](const Conv2D& c) {
                   j["kernel_h"] = c.kernel_h;
                   j["kernel_w"] = c.kernel_w;
                   j["in_ch"] = c.in_ch;
                   j["out_ch"] = c.out_ch;
                   j["stride"] = c.stride;
                   j["weights"] = c.weights.data();
                   j["bias"] = c.bias.data();
                 },
                 [&](const MaxPool2D& p) {
                   j["pool_h"] = p.pool_h;
                   j["pool_w"] = p.pool_w;
                 },
                 [](const auto&) {},
             },
             spec.kind);
  return j;
}

std::size_t get_size(const json& j, const char* key, const std::string& layer) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    throw DataError(fmt::format("layer '{}': missing or invalid '{}'", layer, key));
  }
  return j[key].get<std::size_t>();
}

Tensor get_tensor(const json& j, const char* key, Shape shape, const std::string& layer) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw DataError(fmt::format("layer '{}': missing '{}' array", layer, key));
  }
  const auto& arr = j[key];
  const std::size_t expect = shape_size(shape);
  if (arr.size() != expect) {
    throw DataError(fmt::format("layer '{}': '{}' has {} values, expected {} for shape {}", layer, key, arr.size(),
                                expect, shape_string(shape)));
  }
  std::vector<double> data;
  data.reserve(expect);
  for (const auto& v : arr) {
    if (!v.is_number()) {
      throw DataError(fmt::format("layer '{}': non-numeric entry in '{}'", layer, key));
    }
    data.push_back(v.get<double>());
  }
  return Tensor(std::move(shape), std::move(data));
}

LayerSpec layer_from_json(const json& j, std::size_t index) {
  if (!j.is_object()) {
    throw DataError(fmt::format("layer {} is not an object", index));
  }
  const std::string name = j.value("name", "");
  const std::string label = name.empty() ? fmt::format("#{}", index) : name;
  const std::string type = j.value("type", "");
  LayerSpec spec{name, Flatten{}};
  if (type == "dense") {
    Dense d;
    d.in = get_size(j, "in", label);
    d.out = get_size(j, "out", label);
    d.weights = get_tensor(j, "weights", {d.in, d.out}, label);
    d.bias = get_tensor(j, "bias", {d.out}, label);
    spec.kind = std::move(d);
  } else if (type == "conv2d") {
    Conv2D c;
    c.kernel_h = get_size(j, "kernel_h", label);
    c.kernel_w = get_size(j, "kernel_w", label);
    c.in_ch = get_size(j, "in_ch", label);
    c.out_ch = get_size(j, "out_ch", label);
    c.stride = j.contains("stride") ? get_size(j, "stride", label) : 1;
    c.weights = get_tensor(j, "weights", {c.kernel_h, c.kernel_w, c.in_ch, c.out_ch}, label);
    c.bias = get_tensor(j, "bias", {c.out_ch}, label);
    spec.kind = std::move(c);
  } else if (type == "maxpool2d") {
    spec.kind = MaxPool2D{get_size(j, "pool_h", label), get_size(j, "pool_w", label)};
  } else if (type == "flatten") {
    spec.kind = Flatten{};
  } else if (type == "relu") {
    spec.kind = ReLU{};
  } else if (type == "softmax") {
    spec.kind = Softmax{};
  } else {
    throw DataError(fmt::format("layer '{}': unknown layer type '{}'", label, type));
  }
  return spec;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& token) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size() || v == 0) {
    throw InputError(fmt::format("invalid number '{}' in architecture token '{}'", s, token));
  }
  return v;
}

std::pair<std::size_t, std::size_t> parse_pair(const std::string& s, const std::string& token) {
  const auto parts = split(s, 'x');
  if (parts.size() != 2) {
    throw InputError(fmt::format("expected HxW in architecture token '{}'", token));
  }
  return {parse_count(parts[0], token), parse_count(parts[1], token)};
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (double& v : t.values()) v = rng.uniform(lo, hi);
}

}  // namespace

std::string model_to_json(const Network& net) {
  json j;
  j["format"] = kModelFormat;
  j["input_shape"] = net.input_shape();
  j["layers"] = json::array();
  for (const auto& layer : net.layers()) j["layers"].push_back(layer_to_json(layer));
  return j.dump();
}

Network model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("malformed model JSON: {}", e.what()));
  }
  if (!j.is_object() || j.value("format", "") != kModelFormat) {
    throw DataError(fmt::format("not a {} manifest", kModelFormat));
  }
  if (!j.contains("input_shape") || !j["input_shape"].is_array() || !j.contains("layers") ||
      !j["layers"].is_array()) {
    throw DataError("model manifest needs 'input_shape' and 'layers' arrays");
  }
  Shape input;
  for (const auto& d : j["input_shape"]) {
    if (!d.is_number_unsigned()) throw DataError("invalid 'input_shape'");
    input.push_back(d.get<std::size_t>());
  }
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < j["layers"].size(); ++i) layers.push_back(layer_from_json(j["layers"][i], i));
  try {
    return Network(std::move(input), std::move(layers));
  } catch (const InputError& e) {
    throw DataError(e.what());
  }
}

Network load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(fmt::format("cannot open model file '{}'", path.string()));
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

void save_model(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError(fmt::format("cannot write model file '{}'", path.string()));
  }
  out << model_to_json(net) << '\n';
  if (!out) {
    throw DataError(fmt::format("failed writing model file '{}'", path.string()));
  }
}

Shape parse_shape(const std::string& text) {
  std::string norm = text;
  for (char& c : norm) {
    if (c == 'x' || c == 'X') c = ',';
  }
  Shape shape;
  for (const auto& part : split(norm, ',')) shape.push_back(parse_count(part, text));
  if (shape.empty()) throw InputError("empty shape");
  return shape;
}

Network generate_model(const std::string& spec, const Shape& input_shape, std::uint64_t seed) {
  Rng rng(seed);
  std::map<std::string, std::size_t> counters;
  auto next_name = [&](const std::string& base) {
    const std::size_t n = counters[base]++;
    return n == 0 ? base : fmt::format("{}_{}", base, n);
  };

  std::vector<LayerSpec> layers;
  Shape shape = input_shape;
  for (const auto& raw : split(spec, ',')) {
    const auto parts = split(raw, ':');
    if (parts.empty() || parts[0].empty()) {
      throw InputError(fmt::format("empty token in architecture '{}'", spec));
    }
    const std::string& kind = parts[0];
    LayerSpec layer;
    if (kind == "dense" && parts.size() == 2) {
      if (shape.size() != 1) {
        throw InputError(fmt::format("dense layer needs rank-1 input, got {} (add flatten)", shape_string(shape)));
      }
      Dense d;
      d.in = shape[0];
      d.out = parse_count(parts[1], raw);
      d.weights = Tensor({d.in, d.out});
      d.bias = Tensor({d.out});
      const double scale = 1.0 / std::sqrt(static_cast<double>(d.in));
      fill_uniform(d.weights, rng, -scale, scale);
      fill_uniform(d.bias, rng, -0.5, 0.5);
      layer = {next_name("dense"), std::move(d)};
    } else if ((kind == "conv2d" || kind == "conv") && (parts.size() == 3 || parts.size() == 4)) {
      if (shape.size() != 3) {
        throw InputError(fmt::format("conv2d layer needs HxWxC input, got {}", shape_string(shape)));
      }
      Conv2D c;
      std::tie(c.kernel_h, c.kernel_w) = parse_pair(parts[1], raw);
      c.in_ch = shape[2];
      c.out_ch = parse_count(parts[2], raw);
      if (parts.size() == 4) {
        if (parts[3].size() < 2 || parts[3][0] != 's') {
          throw InputError(fmt::format("expected sSTRIDE in architecture token '{}'", raw));
        }
        c.stride = parse_count(parts[3].substr(1), raw);
      }
      c.weights = Tensor({c.kernel_h, c.kernel_w, c.in_ch, c.out_ch});
      c.bias = Tensor({c.out_ch});
      const double scale = 1.0 / std::sqrt(static_cast<double>(c.kernel_h * c.kernel_w * c.in_ch));
      fill_uniform(c.weights, rng, -scale, scale);
      fill_uniform(c.bias, rng, -0.5, 0.5);
      layer = {next_name("conv2d"), std::move(c)};
    } else if ((kind == "maxpool2d" || kind == "maxpool") && parts.size() == 2) {
      const auto [h, w] = parse_pair(parts[1], raw);
      layer = {next_name("max_pooling2d"), MaxPool2D{h, w}};
    } else if (kind == "flatten" && parts.size() == 1) {
      layer = {next_name("flatten"), Flatten{}};
    } else if (kind == "relu" && parts.size() == 1) {
      layer = {next_name("activation"), ReLU{}};
    } else if (kind == "softmax" && parts.size() == 1) {
      layer = {next_name("activation"), Softmax{}};
    } else {
      throw InputError(fmt::format("unrecognised architecture token '{}'", raw));
    }
    shape = infer_output_shape(layer, shape);
    layers.push_back(std::move(layer));
  }
  return Network(input_shape, std::move(layers));
}

}  // namespace concov
