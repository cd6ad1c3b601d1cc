#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lth/ops.hpp"
#include "lth/tensor.hpp"

namespace lth {

// Define-by-run reverse-mode tape. Ops append nodes in execution order, which
// is a topological order of the graph, so the backward pass is a reverse walk
// over the node list. A tape and its tensors belong to one worker; independent
// tapes may run concurrently.
template <typename S>
class Tape {
 public:
  struct Node {
    std::function<void(Tape&)> forward;   // recomputes the output slot
    std::function<void(Tape&)> backward;  // accumulates into input grads
    std::vector<int> inputs;
    int output = -1;
  };

  int leaf(Tensor<S> t) {
    values_.push_back(std::move(t));
    grads_.emplace_back();
    return int(values_.size()) - 1;
  }

  void push_node(Node n) { nodes_.push_back(std::move(n)); }

  const Tensor<S>& value(int id) const { return values_[std::size_t(id)]; }
  Tensor<S>& mutable_value(int id) { return values_[std::size_t(id)]; }

  bool has_grad(int id) const { return grads_[std::size_t(id)].has_value(); }

  Tensor<S>& grad(int id) {
    auto& g = grads_[std::size_t(id)];
    if (!g) g = Tensor<S>::zeros(values_[std::size_t(id)].shape);
    return *g;
  }

  // Reverse walk in exact reverse recording (= topological) order.
  void backward(int id) {
    if (values_[std::size_t(id)].numel() != 1)
      throw std::invalid_argument("backward: output must be a single element");
    grad(id)[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (has_grad(it->output)) it->backward(*this);
  }

  // Re-executes every recorded forward in order; with unchanged leaf values
  // the outputs are reproduced bit-for-bit.
  void replay() {
    for (auto& n : nodes_) n.forward(*this);
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Tensor<S>> values_;
  std::vector<std::optional<Tensor<S>>> grads_;
  std::vector<Node> nodes_;
};

// Handle to a tensor living on a tape.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Tensor<S>& value() const { return tape->value(id); }
  const Tensor<S>& grad() const { return tape->grad(id); }
};

template <typename S>
Var<S> make_leaf(Tape<S>& tape, Tensor<S> t) {
  return Var<S>{&tape, tape.leaf(std::move(t))};
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const int out = t.leaf(matmul_fw(a.value(), b.value()));
  const int ai = a.id, bi = b.id;
  t.push_node({[=](Tape<S>& tp) { tp.mutable_value(out) = matmul_fw(tp.value(ai), tp.value(bi)); },
               [=](Tape<S>& tp) {
                 matmul_bw(tp.value(ai), tp.value(bi), tp.grad(out), tp.grad(ai), tp.grad(bi));
               },
               {ai, bi},
               out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> add_bias(Var<S> x, Var<S> b) {
  Tape<S>& t = *x.tape;
  const int out = t.leaf(add_bias_fw(x.value(), b.value()));
  const int xi = x.id, bi = b.id;
  t.push_node(
      {[=](Tape<S>& tp) { tp.mutable_value(out) = add_bias_fw(tp.value(xi), tp.value(bi)); },
       [=](Tape<S>& tp) { add_bias_bw(tp.grad(out), tp.grad(xi), tp.grad(bi)); },
       {xi, bi},
       out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> add_channel_bias(Var<S> x, Var<S> b) {
  Tape<S>& t = *x.tape;
  const int out = t.leaf(add_channel_bias_fw(x.value(), b.value()));
  const int xi = x.id, bi = b.id;
  t.push_node({[=](Tape<S>& tp) {
                 tp.mutable_value(out) = add_channel_bias_fw(tp.value(xi), tp.value(bi));
               },
               [=](Tape<S>& tp) { add_channel_bias_bw(tp.grad(out), tp.grad(xi), tp.grad(bi)); },
               {xi, bi},
               out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> relu(Var<S> x) {
  Tape<S>& t = *x.tape;
  const int out = t.leaf(relu_fw(x.value()));
  const int xi = x.id;
  t.push_node({[=](Tape<S>& tp) { tp.mutable_value(out) = relu_fw(tp.value(xi)); },
               [=](Tape<S>& tp) { relu_bw(tp.value(xi), tp.grad(out), tp.grad(xi)); },
               {xi},
               out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> kernel, std::int64_t pad) {
  Tape<S>& t = *x.tape;
  const int out = t.leaf(conv2d_fw(x.value(), kernel.value(), pad));
  const int xi = x.id, ki = kernel.id;
  t.push_node(
      {[=](Tape<S>& tp) { tp.mutable_value(out) = conv2d_fw(tp.value(xi), tp.value(ki), pad); },
       [=](Tape<S>& tp) {
         conv2d_bw(tp.value(xi), tp.value(ki), pad, tp.grad(out), tp.grad(xi), tp.grad(ki));
       },
       {xi, ki},
       out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> max_pool2(Var<S> x) {
  Tape<S>& t = *x.tape;
  auto argmax = std::make_shared<std::vector<std::int32_t>>();
  const int out = t.leaf(max_pool2_fw(x.value(), argmax.get()));
  const int xi = x.id;
  t.push_node(
      {[=](Tape<S>& tp) { tp.mutable_value(out) = max_pool2_fw(tp.value(xi), argmax.get()); },
       [=](Tape<S>& tp) { max_pool2_bw(tp.value(xi), *argmax, tp.grad(out), tp.grad(xi)); },
       {xi},
       out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> avg_pool2(Var<S> x) {
  Tape<S>& t = *x.tape;
  const int out = t.leaf(avg_pool2_fw(x.value()));
  const int xi = x.id;
  t.push_node({[=](Tape<S>& tp) { tp.mutable_value(out) = avg_pool2_fw(tp.value(xi)); },
               [=](Tape<S>& tp) { avg_pool2_bw(tp.value(xi), tp.grad(out), tp.grad(xi)); },
               {xi},
               out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> flatten(Var<S> x) {
  Tape<S>& t = *x.tape;
  const int out = t.leaf(flatten_fw(x.value()));
  const int xi = x.id;
  t.push_node({[=](Tape<S>& tp) { tp.mutable_value(out) = flatten_fw(tp.value(xi)); },
               [=](Tape<S>& tp) {
                 auto& dx = tp.grad(xi);
                 const auto& dout = tp.grad(out);
                 for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dout[i];
               },
               {xi},
               out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> softmax(Var<S> logits) {
  Tape<S>& t = *logits.tape;
  const int out = t.leaf(softmax_fw(logits.value()));
  const int xi = logits.id;
  t.push_node({[=](Tape<S>& tp) { tp.mutable_value(out) = softmax_fw(tp.value(xi)); },
               [=](Tape<S>& tp) { softmax_bw(tp.value(out), tp.grad(out), tp.grad(xi)); },
               {xi},
               out});
  return Var<S>{&t, out};
}

template <typename S>
Var<S> cross_entropy(Var<S> probs, std::vector<std::int32_t> labels) {
  Tape<S>& t = *probs.tape;
  Tensor<S> loss({1});
  loss[0] = cross_entropy_fw(probs.value(), labels);
  const int out = t.leaf(std::move(loss));
  const int pi = probs.id;
  auto lab = std::make_shared<std::vector<std::int32_t>>(std::move(labels));
  t.push_node({[=](Tape<S>& tp) {
                 tp.mutable_value(out)[0] = cross_entropy_fw(tp.value(pi), *lab);
               },
               [=](Tape<S>& tp) {
                 cross_entropy_bw(tp.value(pi), *lab, tp.grad(out)[0], tp.grad(pi));
               },
               {pi},
               out});
  return Var<S>{&t, out};
}

}  // namespace lth
