#include "concov/network.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "concov/error.hpp"

namespace concov {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void require(bool cond, const std::string& layer, const std::string& what) {
  if (!cond) {
    throw InputError(fmt::format("layer '{}': {}", layer, what));
  }
}

void require_finite(const Tensor& t, const std::string& layer, const char* what) {
  for (double v : t.values()) {
    require(std::isfinite(v), layer, fmt::format("non-finite value in {}", what));
  }
}

}  // namespace

Shape infer_output_shape(const LayerSpec& spec, const Shape& in) {
  const std::string& name = spec.name;
  return std::visit(
      overloaded{
          [&](const Dense& d) -> Shape {
            require(in.size() == 1, name, fmt::format("dense input must be rank 1, got {}", shape_string(in)));
            require(d.in == in[0], name, fmt::format("declares {} inputs but receives {}", d.in, in[0]));
            require(d.out > 0, name, "needs at least one output");
            require(d.weights.shape() == Shape{d.in, d.out}, name,
                    fmt::format("weights must have shape {}x{}", d.in, d.out));
            require(d.bias.shape() == Shape{d.out}, name, fmt::format("bias must have {} entries", d.out));
            require_finite(d.weights, name, "weights");
            require_finite(d.bias, name, "bias");
            return {d.out};
          },
          [&](const Conv2D& c) -> Shape {
            require(in.size() == 3, name, fmt::format("conv2d input must be HxWxC, got {}", shape_string(in)));
            require(c.in_ch == in[2], name, fmt::format("declares {} input channels but receives {}", c.in_ch, in[2]));
            require(c.kernel_h > 0 && c.kernel_w > 0 && c.out_ch > 0, name, "empty kernel");
            require(c.stride >= 1 && c.stride <= 4, name, "stride must be within 1..4");
            require(in[0] >= c.kernel_h && in[1] >= c.kernel_w, name, "kernel larger than input");
            require((in[0] - c.kernel_h) % c.stride == 0 && (in[1] - c.kernel_w) % c.stride == 0, name,
                    "valid padding requires (input - kernel) divisible by stride");
            require(c.weights.shape() == Shape{c.kernel_h, c.kernel_w, c.in_ch, c.out_ch}, name,
                    fmt::format("weights must have shape {}x{}x{}x{}", c.kernel_h, c.kernel_w, c.in_ch, c.out_ch));
            require(c.bias.shape() == Shape{c.out_ch}, name, fmt::format("bias must have {} entries", c.out_ch));
            require_finite(c.weights, name, "weights");
            require_finite(c.bias, name, "bias");
            return {(in[0] - c.kernel_h) / c.stride + 1, (in[1] - c.kernel_w) / c.stride + 1, c.out_ch};
          },
          [&](const MaxPool2D& p) -> Shape {
            require(in.size() == 3, name, fmt::format("maxpool2d input must be HxWxC, got {}", shape_string(in)));
            require(p.pool_h > 0 && p.pool_w > 0, name, "empty pool window");
            require(in[0] >= p.pool_h && in[1] >= p.pool_w, name, "pool window larger than input");
            return {in[0] / p.pool_h, in[1] / p.pool_w, in[2]};
          },
          [&](const Flatten&) -> Shape { return {shape_size(in)}; },
          [&](const ReLU&) -> Shape { return in; },
          [&](const Softmax&) -> Shape {
            require(in.size() == 1, name, "softmax input must be rank 1");
            return in;
          },
      },
      spec.kind);
}

namespace {

void dense_forward(const Dense& d, std::span<const double> in, std::span<double> out) {
  const auto w = d.weights.values();
  for (std::size_t j = 0; j < d.out; ++j) {
    out[j] = d.bias[j];
  }
  for (std::size_t i = 0; i < d.in; ++i) {
    const double xi = in[i];
    if (xi == 0.0) continue;
    const double* row = w.data() + i * d.out;
    for (std::size_t j = 0; j < d.out; ++j) {
      out[j] += xi * row[j];
    }
  }
}

void conv_forward(const Conv2D& c, const Shape& in_shape, const Shape& out_shape, std::span<const double> in,
                  std::span<double> out) {
  const std::size_t in_w = in_shape[1];
  const std::size_t oh_n = out_shape[0], ow_n = out_shape[1];
  const auto w = c.weights.values();
  for (std::size_t oh = 0; oh < oh_n; ++oh) {
    for (std::size_t ow = 0; ow < ow_n; ++ow) {
      double* cell = out.data() + (oh * ow_n + ow) * c.out_ch;
      for (std::size_t oc = 0; oc < c.out_ch; ++oc) cell[oc] = c.bias[oc];
      for (std::size_t i = 0; i < c.kernel_h; ++i) {
        for (std::size_t j = 0; j < c.kernel_w; ++j) {
          const double* px = in.data() + ((oh * c.stride + i) * in_w + (ow * c.stride + j)) * c.in_ch;
          const double* wk = w.data() + (i * c.kernel_w + j) * c.in_ch * c.out_ch;
          for (std::size_t ic = 0; ic < c.in_ch; ++ic) {
            const double xv = px[ic];
            const double* wrow = wk + ic * c.out_ch;
            for (std::size_t oc = 0; oc < c.out_ch; ++oc) cell[oc] += xv * wrow[oc];
          }
        }
      }
    }
  }
}

}  // namespace

const char* kind_name(const LayerKind& kind) {
  return std::visit(overloaded{
                        [](const Dense&) { return "dense"; },
                        [](const Conv2D&) { return "conv2d"; },
                        [](const MaxPool2D&) { return "maxpool2d"; },
                        [](const Flatten&) { return "flatten"; },
                        [](const ReLU&) { return "relu"; },
                        [](const Softmax&) { return "softmax"; },
                    },
                    kind);
}

bool is_affine(const LayerSpec& layer) {
  return std::holds_alternative<Dense>(layer.kind) || std::holds_alternative<Conv2D>(layer.kind);
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (input_shape_.empty() || std::ranges::any_of(input_shape_, [](std::size_t d) { return d == 0; })) {
    throw InputError(fmt::format("invalid input shape {}", shape_string(input_shape_)));
  }
  if (layers_.empty()) {
    throw InputError("network has no layers");
  }
  std::set<std::string> names;
  Shape shape = input_shape_;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& spec = layers_[k];
    if (spec.name.empty()) {
      throw InputError(fmt::format("layer {} has no name", k));
    }
    if (!names.insert(spec.name).second) {
      throw InputError(fmt::format("duplicate layer name '{}'", spec.name));
    }
    if (std::holds_alternative<Softmax>(spec.kind) && k + 1 != layers_.size()) {
      require(false, spec.name, "softmax must be the final layer");
    }
    shape = infer_output_shape(spec, shape);
    output_shapes_.push_back(shape);
  }
  const auto& last = layers_.back();
  if (!std::holds_alternative<Softmax>(last.kind) || layers_.size() < 2 ||
      !std::holds_alternative<Dense>(layers_[layers_.size() - 2].kind)) {
    throw InputError("network must end with a dense layer followed by softmax");
  }
}

std::optional<std::size_t> Network::find(const std::string& name) const {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].name == name) return k;
  }
  return std::nullopt;
}

std::size_t Network::index_of(const std::string& name) const {
  if (auto k = find(name)) return *k;
  throw InputError(fmt::format("unknown layer '{}'", name));
}

std::size_t Network::parameter_count(std::size_t k) const {
  return std::visit(overloaded{
                        [](const Dense& d) { return d.weights.size() + d.bias.size(); },
                        [](const Conv2D& c) { return c.weights.size() + c.bias.size(); },
                        [](const auto&) { return std::size_t{0}; },
                    },
                    layers_[k].kind);
}

LayerTrace apply_layer(const Network& net, std::size_t k, const Tensor& input) {
  const Shape& out_shape = net.output_shape_of(k);
  LayerTrace t;
  std::visit(overloaded{
                 [&](const Dense& d) {
                   t.u = Tensor(out_shape);
                   dense_forward(d, input.values(), t.u.values());
                   t.v = t.u;
                 },
                 [&](const Conv2D& c) {
                   t.u = Tensor(out_shape);
                   conv_forward(c, input.shape(), out_shape, input.values(), t.u.values());
                   t.v = t.u;
                 },
                 [&](const MaxPool2D& p) {
                   t.u = input;
                   t.v = Tensor(out_shape);
                   t.selected_index.resize(t.v.size());
                   const auto& is = input.shape();
                   const std::size_t in_w = is[1], ch = is[2];
                   for (std::size_t oh = 0; oh < out_shape[0]; ++oh) {
                     for (std::size_t ow = 0; ow < out_shape[1]; ++ow) {
                       for (std::size_t c = 0; c < ch; ++c) {
                         std::size_t best = 0;
                         bool first = true;
                         for (std::size_t i = 0; i < p.pool_h; ++i) {
                           for (std::size_t j = 0; j < p.pool_w; ++j) {
                             const std::size_t idx = ((oh * p.pool_h + i) * in_w + (ow * p.pool_w + j)) * ch + c;
                             if (first || input[idx] > input[best]) {
                               best = idx;
                               first = false;
                             }
                           }
                         }
                         const std::size_t o = (oh * out_shape[1] + ow) * ch + c;
                         t.v[o] = input[best];
                         t.selected_index[o] = best;
                       }
                     }
                   }
                 },
                 [&](const Flatten&) {
                   t.u = input;
                   t.v = input.reshaped(out_shape);
                 },
                 [&](const ReLU&) {
                   t.u = input;
                   t.v = input;
                   for (double& v : t.v.values()) v = std::max(v, 0.0);
                 },
                 [&](const Softmax&) {
                   t.u = input;
                   t.v = input;
                   auto vs = t.v.values();
                   const double m = *std::ranges::max_element(vs);
                   double sum = 0.0;
                   for (double& v : vs) {
                     v = std::exp(v - m);
                     sum += v;
                   }
                   for (double& v : vs) v /= sum;
                 },
             },
             net.layer(k).kind);
  return t;
}

static void check_input(const Network& net, const Tensor& x) {
  if (x.shape() != net.input_shape() && !(x.rank() == 1 && x.size() == net.input_size())) {
    throw InputError(fmt::format("input of shape {} does not match network input shape {}", shape_string(x.shape()),
                                 shape_string(net.input_shape())));
  }
}

ActivationTrace forward_trace(const Network& net, const Tensor& x) {
  check_input(net, x);
  ActivationTrace trace;
  trace.input = x.reshaped(net.input_shape());
  trace.layers.reserve(net.depth());
  for (std::size_t k = 0; k < net.depth(); ++k) {
    const Tensor& in = k == 0 ? trace.input : trace.layers[k - 1].v;
    trace.layers.push_back(apply_layer(net, k, in));
  }
  return trace;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t trace_label(const ActivationTrace& trace) { return argmax(trace.layers.back().u.values()); }

Prediction forward(const Network& net, const Tensor& x) {
  check_input(net, x);
  Tensor cur = x.reshaped(net.input_shape());
  for (std::size_t k = 0; k + 1 < net.depth(); ++k) {
    cur = apply_layer(net, k, cur).v;
  }
  Prediction p;
  p.label = argmax(cur.values());
  p.scores = std::move(cur);
  return p;
}

std::string neuron_layer_name(const Network& net, std::size_t k) {
  if (k > 0 && is_affine(net.layer(k - 1))) return net.layer(k - 1).name;
  return net.layer(k).name;
}

}  // namespace concov
