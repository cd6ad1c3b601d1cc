#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "lth/rng.hpp"
#include "lth/tape.hpp"
#include "lth/tensor.hpp"

namespace lth {

enum class LayerKind : std::uint32_t {
  kDense = 0,
  kConv = 1,
  kRelu = 2,
  kMaxPool2 = 3,
  kAvgPool2 = 4,
  kFlatten = 5,
};

struct LayerDesc {
  LayerKind kind = LayerKind::kDense;
  std::int64_t in = 0;   // dense: in features; conv: in channels
  std::int64_t out = 0;  // dense: out features; conv: out channels
  std::int64_t kernel = 0;
  std::int64_t pad = 0;
  std::int64_t weight_offset = -1, weight_count = 0;
  std::int64_t bias_offset = -1, bias_count = 0;
  Shape out_shape;  // per-example shape after this layer
};

// Immutable architecture + flat-parameter layout. Offsets are contiguous and
// cover exactly [0, total_count); weights are prunable, biases are not.
struct ModelSpec {
  Shape input_shape;  // per-example
  std::int64_t class_count = 0;
  std::vector<LayerDesc> layers;
  std::int64_t total_count = 0;
  std::vector<std::uint8_t> prunable;

  std::int64_t prunable_count() const {
    std::int64_t n = 0;
    for (auto p : prunable) n += p ? 1 : 0;
    return n;
  }
};

template <typename S>
struct ParamVectorT {
  std::shared_ptr<const ModelSpec> spec;
  std::vector<S> values;

  std::int64_t size() const { return std::int64_t(values.size()); }

  template <typename T>
  ParamVectorT<T> cast() const {
    ParamVectorT<T> out;
    out.spec = spec;
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

using ParamVector = ParamVectorT<float>;

namespace detail {

inline Shape layer_output_shape(const LayerDesc& d, const Shape& in) {
  switch (d.kind) {
    case LayerKind::kDense:
      return {d.out};
    case LayerKind::kConv:
      return {d.out, in[1] + 2 * d.pad - d.kernel + 1, in[2] + 2 * d.pad - d.kernel + 1};
    case LayerKind::kRelu:
      return in;
    case LayerKind::kMaxPool2:
    case LayerKind::kAvgPool2:
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::kFlatten:
      return {shape_numel(in)};
  }
  throw std::logic_error("unknown layer kind");
}

inline void assign_offsets(ModelSpec& spec) {
  std::int64_t offset = 0;
  Shape cur = spec.input_shape;
  for (auto& d : spec.layers) {
    if (d.kind == LayerKind::kDense) {
      d.weight_offset = offset;
      d.weight_count = d.in * d.out;
      offset += d.weight_count;
      d.bias_offset = offset;
      d.bias_count = d.out;
      offset += d.bias_count;
    } else if (d.kind == LayerKind::kConv) {
      d.weight_offset = offset;
      d.weight_count = d.out * d.in * d.kernel * d.kernel;
      offset += d.weight_count;
      d.bias_offset = offset;
      d.bias_count = d.out;
      offset += d.bias_count;
    }
    cur = layer_output_shape(d, cur);
    d.out_shape = cur;
  }
  spec.total_count = offset;
  spec.prunable.assign(std::size_t(offset), 0);
  for (const auto& d : spec.layers)
    for (std::int64_t i = 0; i < d.weight_count; ++i)
      spec.prunable[std::size_t(d.weight_offset + i)] = 1;
}

// Kaiming-uniform bound for relu fan-in.
inline double kaiming_bound(std::int64_t fan_in) { return std::sqrt(6.0 / double(fan_in)); }

inline void init_params(const ModelSpec& spec, std::vector<float>& values, std::uint64_t seed) {
  values.assign(std::size_t(spec.total_count), 0.0f);
  SplitMix root(seed);
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& d = spec.layers[li];
    if (d.weight_count == 0) continue;
    SplitMix rng = root.split(li);
    const std::int64_t fan_in =
        d.kind == LayerKind::kDense ? d.in : d.in * d.kernel * d.kernel;
    const double bound = kaiming_bound(fan_in);
    for (std::int64_t i = 0; i < d.weight_count; ++i)
      values[std::size_t(d.weight_offset + i)] = float(rng.uniform(-bound, bound));
    // biases stay zero
  }
}

}  // namespace detail

struct BuiltModel {
  std::shared_ptr<const ModelSpec> spec;
  ParamVector params;
};

// Fully-connected relu network: widths.front() inputs, widths.back() classes.
inline BuiltModel build_mlp(const std::vector<std::int64_t>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("build_mlp: need at least two widths");
  for (auto w : widths)
    if (w <= 0) throw std::invalid_argument("build_mlp: widths must be positive");
  auto spec = std::make_shared<ModelSpec>();
  spec->input_shape = {widths.front()};
  spec->class_count = widths.back();
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    LayerDesc d;
    d.kind = LayerKind::kDense;
    d.in = widths[i];
    d.out = widths[i + 1];
    spec->layers.push_back(d);
    if (i + 2 < widths.size()) spec->layers.push_back({LayerKind::kRelu});
  }
  detail::assign_offsets(*spec);
  ParamVector params;
  params.spec = spec;
  detail::init_params(*spec, params.values, seed);
  return {spec, std::move(params)};
}

// Conv blocks (3x3 pad 1, relu, 2x2 max pool) followed by a dense classifier.
inline BuiltModel build_cnn(const Shape& input, const std::vector<std::int64_t>& conv_channels,
                            std::int64_t classes, std::uint64_t seed) {
  if (input.size() != 3) throw std::invalid_argument("build_cnn: input must be (c, h, w)");
  if (conv_channels.empty()) throw std::invalid_argument("build_cnn: need at least one block");
  auto spec = std::make_shared<ModelSpec>();
  spec->input_shape = input;
  spec->class_count = classes;
  std::int64_t in_ch = input[0];
  Shape cur = input;
  for (auto ch : conv_channels) {
    LayerDesc conv;
    conv.kind = LayerKind::kConv;
    conv.in = in_ch;
    conv.out = ch;
    conv.kernel = 3;
    conv.pad = 1;
    spec->layers.push_back(conv);
    spec->layers.push_back({LayerKind::kRelu});
    spec->layers.push_back({LayerKind::kMaxPool2});
    cur = {ch, cur[1] / 2, cur[2] / 2};
    in_ch = ch;
  }
  spec->layers.push_back({LayerKind::kFlatten});
  LayerDesc head;
  head.kind = LayerKind::kDense;
  head.in = shape_numel(cur);
  head.out = classes;
  spec->layers.push_back(head);
  detail::assign_offsets(*spec);
  ParamVector params;
  params.spec = spec;
  detail::init_params(*spec, params.values, seed);
  return {spec, std::move(params)};
}

// ---- forward / gradient -----------------------------------------------------

namespace detail {

template <typename S>
Tensor<S> slice_tensor(const std::vector<S>& flat, std::int64_t offset, Shape shape) {
  Tensor<S> t(std::move(shape));
  std::copy(flat.begin() + offset, flat.begin() + offset + t.numel(), t.data.begin());
  return t;
}

template <typename S>
struct Graph {
  Tape<S> tape;
  Var<S> input;
  std::vector<std::pair<std::size_t, Var<S>>> weight_leaves;  // layer index -> leaf
  std::vector<std::pair<std::size_t, Var<S>>> bias_leaves;
  Var<S> logits, probs;
};

template <typename S>
void check_params(const ModelSpec& spec, const std::vector<S>& params) {
  if (std::int64_t(params.size()) != spec.total_count)
    throw std::invalid_argument("parameter vector length does not match model layout");
}

template <typename S>
std::unique_ptr<Graph<S>> build_forward(const ModelSpec& spec, const std::vector<S>& params,
                                        const Tensor<S>& batch) {
  check_params(spec, params);
  const std::int64_t n = batch.dim(0);
  const std::int64_t per_example = batch.numel() / n;
  if (per_example != shape_numel(spec.input_shape))
    throw std::invalid_argument("input shape does not match model input " +
                                shape_str(spec.input_shape));

  auto g = std::make_unique<Graph<S>>();
  const bool spatial_first = !spec.layers.empty() && spec.layers[0].kind == LayerKind::kConv;
  Tensor<S> in = batch;
  if (spatial_first) {
    Shape full = {n};
    for (auto d : spec.input_shape) full.push_back(d);
    in = Tensor<S>(full, batch.data);
  } else {
    in = Tensor<S>({n, per_example}, batch.data);
  }
  g->input = make_leaf(g->tape, std::move(in));

  Var<S> cur = g->input;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& d = spec.layers[li];
    switch (d.kind) {
      case LayerKind::kDense: {
        auto w = make_leaf(g->tape, slice_tensor(params, d.weight_offset, Shape{d.in, d.out}));
        auto b = make_leaf(g->tape, slice_tensor(params, d.bias_offset, Shape{d.out}));
        g->weight_leaves.emplace_back(li, w);
        g->bias_leaves.emplace_back(li, b);
        cur = add_bias(matmul(cur, w), b);
        break;
      }
      case LayerKind::kConv: {
        auto w = make_leaf(g->tape, slice_tensor(params, d.weight_offset,
                                                 Shape{d.out, d.in, d.kernel, d.kernel}));
        auto b = make_leaf(g->tape, slice_tensor(params, d.bias_offset, Shape{d.out}));
        g->weight_leaves.emplace_back(li, w);
        g->bias_leaves.emplace_back(li, b);
        cur = add_channel_bias(conv2d(cur, w, d.pad), b);
        break;
      }
      case LayerKind::kRelu:
        cur = relu(cur);
        break;
      case LayerKind::kMaxPool2:
        cur = max_pool2(cur);
        break;
      case LayerKind::kAvgPool2:
        cur = avg_pool2(cur);
        break;
      case LayerKind::kFlatten:
        cur = flatten(cur);
        break;
    }
  }
  g->logits = cur;
  g->probs = softmax(cur);
  return g;
}

}  // namespace detail

// p(w, x): softmax of the logits, rows summing to 1.
template <typename S>
Tensor<S> predict_probs(const ModelSpec& spec, const std::vector<S>& params,
                        const Tensor<S>& batch) {
  auto g = detail::build_forward(spec, params, batch);
  return g->probs.value();
}

inline TensorF predict_probs(const ModelSpec& spec, const ParamVector& params,
                             const TensorF& batch) {
  return predict_probs<float>(spec, params.values, batch);
}

template <typename S>
struct LossGrad {
  std::vector<S> grad;
  S loss = 0;
  Tensor<S> probs;
};

// dLoss/dParams for the mean cross-entropy over the batch; deterministic for
// fixed inputs.
template <typename S>
LossGrad<S> loss_and_grad(const ModelSpec& spec, const std::vector<S>& params,
                          const Tensor<S>& batch, const std::vector<std::int32_t>& labels) {
  auto g = detail::build_forward(spec, params, batch);
  auto loss = cross_entropy(g->probs, labels);
  g->tape.backward(loss.id);

  LossGrad<S> out;
  out.loss = loss.value()[0];
  out.probs = g->probs.value();
  out.grad.assign(params.size(), S(0));
  for (auto& [li, w] : g->weight_leaves) {
    const auto& d = spec.layers[li];
    const auto& gw = g->tape.grad(w.id);
    std::copy(gw.data.begin(), gw.data.end(), out.grad.begin() + d.weight_offset);
  }
  for (auto& [li, b] : g->bias_leaves) {
    const auto& d = spec.layers[li];
    const auto& gb = g->tape.grad(b.id);
    std::copy(gb.data.begin(), gb.data.end(), out.grad.begin() + d.bias_offset);
  }
  return out;
}

// Spec-facing wrapper returning just the gradient vector.
inline ParamVector grad(const ModelSpec& spec, const ParamVector& params, const TensorF& batch,
                        const std::vector<std::int32_t>& labels) {
  auto lg = loss_and_grad<float>(spec, params.values, batch, labels);
  ParamVector out;
  out.spec = params.spec;
  out.values = std::move(lg.grad);
  return out;
}

// Mean cross-entropy without gradients; shares the forward path.
template <typename S>
S batch_loss(const ModelSpec& spec, const std::vector<S>& params, const Tensor<S>& batch,
             const std::vector<std::int32_t>& labels) {
  auto g = detail::build_forward(spec, params, batch);
  return cross_entropy_fw(g->probs.value(), labels);
}

}  // namespace lth
