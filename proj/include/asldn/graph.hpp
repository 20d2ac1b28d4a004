#pragma once

// Tape-style reverse-mode autodiff. Nodes are appended in evaluation order, so
// node ids are already a topological order and backward() is one reverse
// sweep over the tape.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "asldn/conv.hpp"
#include "asldn/error.hpp"
#include "asldn/tensor.hpp"

namespace asldn {

enum class OpKind {
  Constant,
  Variable,
  Conv2d,
  Relu,
  Add,
  ConcatChannels,
  BroadcastBatch,
  Sum,
  Mean,
  LossL2,
  LossL1,
};

inline const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Variable: return "variable";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::ConcatChannels: return "concat";
    case OpKind::BroadcastBatch: return "broadcast_batch";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::LossL2: return "loss_l2";
    case OpKind::LossL1: return "loss_l1";
  }
  return "?";
}

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

template <typename T>
struct Node {
  OpKind kind = OpKind::Constant;
  std::array<NodeId, 3> inputs{};
  std::size_t input_count = 0;
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first use during backward()
  std::size_t dilation = 1;
  bool requires_grad = false;
  std::string label;
};

template <typename T>
class Graph {
 public:
  NodeId constant(Tensor<T> value, std::string label = {}) {
    return push(OpKind::Constant, {}, std::move(value), false, std::move(label));
  }

  NodeId variable(Tensor<T> value, std::string label = {}) {
    return push(OpKind::Variable, {}, std::move(value), true, std::move(label));
  }

  NodeId conv2d(NodeId input, NodeId weight, NodeId bias, std::size_t dilation,
                std::string label = {}) {
    auto out = kernels::conv2d_forward(value(input), value(weight), value(bias), dilation);
    auto id = push(OpKind::Conv2d, {input, weight, bias}, std::move(out),
                   any_requires_grad({input, weight, bias}), std::move(label));
    nodes_[id.index].dilation = dilation;
    return id;
  }

  NodeId relu(NodeId x) {
    auto out = value(x).map([](T v) { return v > T{0} ? v : T{0}; });
    return push(OpKind::Relu, {x}, std::move(out), needs(x));
  }

  NodeId add(NodeId a, NodeId b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    require_same_shape(va, vb, "add");
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return push(OpKind::Add, {a, b}, std::move(out), any_requires_grad({a, b}));
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    require(va.rank() == 4 && vb.rank() == 4, ErrorCode::ShapeMismatch, "concat needs [N,C,H,W]");
    require(va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) && va.dim(3) == vb.dim(3),
            ErrorCode::ShapeMismatch,
            "concat: " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
    const std::size_t n = va.dim(0), ca = va.dim(1), cb = vb.dim(1), hw = va.dim(2) * va.dim(3);
    Tensor<T> out(Shape{n, ca + cb, va.dim(2), va.dim(3)});
    for (std::size_t s = 0; s < n; ++s) {
      std::copy_n(va.data() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
      std::copy_n(vb.data() + s * cb * hw, cb * hw, out.data() + (s * (ca + cb) + ca) * hw);
    }
    return push(OpKind::ConcatChannels, {a, b}, std::move(out), any_requires_grad({a, b}));
  }

  // Repeats a [1,...] tensor `count` times along the leading axis.
  NodeId broadcast_batch(NodeId x, std::size_t count) {
    const auto& vx = value(x);
    require(vx.rank() >= 1 && vx.dim(0) == 1 && count >= 1, ErrorCode::ShapeMismatch,
            "broadcast_batch needs a leading axis of 1");
    Shape shape = vx.shape();
    shape[0] = count;
    Tensor<T> out(shape);
    for (std::size_t s = 0; s < count; ++s) std::copy_n(vx.data(), vx.size(), out.data() + s * vx.size());
    return push(OpKind::BroadcastBatch, {x}, std::move(out), needs(x));
  }

  NodeId sum(NodeId x) {
    double acc = 0;
    for (T v : value(x).values()) acc += v;
    return push(OpKind::Sum, {x}, Tensor<T>::scalar(static_cast<T>(acc)), needs(x));
  }

  NodeId mean(NodeId x) {
    double acc = 0;
    for (T v : value(x).values()) acc += v;
    const auto n = static_cast<double>(value(x).size());
    return push(OpKind::Mean, {x}, Tensor<T>::scalar(static_cast<T>(acc / n)), needs(x));
  }

  // (1/N) sum (pred - target)^2 over every element.
  NodeId loss_l2(NodeId pred, NodeId target) {
    const auto& p = value(pred);
    const auto& t = value(target);
    require_same_shape(p, t, "loss_l2");
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double r = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      acc += r * r;
    }
    return push(OpKind::LossL2, {pred, target},
                Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(p.size()))),
                any_requires_grad({pred, target}));
  }

  // (1/N) sum |pred - target| over every element.
  NodeId loss_l1(NodeId pred, NodeId target) {
    const auto& p = value(pred);
    const auto& t = value(target);
    require_same_shape(p, t, "loss_l1");
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      acc += std::abs(static_cast<double>(p[i]) - static_cast<double>(t[i]));
    return push(OpKind::LossL1, {pred, target},
                Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(p.size()))),
                any_requires_grad({pred, target}));
  }

  const Tensor<T>& value(NodeId id) const { return node(id).value; }

  bool has_grad(NodeId id) const { return !node(id).grad.empty(); }

  const Tensor<T>& grad(NodeId id) const {
    require(has_grad(id), ErrorCode::MissingGradient,
            "node " + std::to_string(id.index) + " (" + to_string(node(id).kind) + ") has no gradient");
    return node(id).grad;
  }

  const Node<T>& node(NodeId id) const {
    require(id.index < nodes_.size(), ErrorCode::InvalidArgument, "unknown node id");
    return nodes_[id.index];
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  std::size_t count(OpKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [kind](const auto& n) { return n.kind == kind; }));
  }

  // d(loss)/d(node) for every node that requires a gradient; `loss` must be scalar.
  void backward(NodeId loss) {
    require(value(loss).size() == 1, ErrorCode::NonScalarLoss,
            "backward() from non-scalar node of shape " + shape_string(value(loss).shape()));
    backward(loss, Tensor<T>(value(loss).shape(), T{1}));
  }

  // Reverse sweep seeded with an explicit upstream gradient for `from`.
  void backward(NodeId from, const Tensor<T>& seed) {
    require_same_shape(value(from), seed, "backward seed");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_[from.index].grad = seed;
    for (std::size_t k = from.index + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (n.grad.empty() || !n.requires_grad) continue;
      propagate(n);
    }
  }

 private:
  NodeId push(OpKind kind, std::initializer_list<NodeId> inputs, Tensor<T> value, bool requires_grad,
              std::string label = {}) {
    Node<T> n;
    n.kind = kind;
    n.input_count = inputs.size();
    std::copy(inputs.begin(), inputs.end(), n.inputs.begin());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.label = std::move(label);
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  bool needs(NodeId id) const { return node(id).requires_grad; }

  bool any_requires_grad(std::initializer_list<NodeId> ids) const {
    return std::any_of(ids.begin(), ids.end(), [this](NodeId id) { return needs(id); });
  }

  Tensor<T>& grad_slot(NodeId id) {
    auto& n = nodes_[id.index];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void accumulate(NodeId id, const Tensor<T>& g) {
    if (!needs(id)) return;
    auto& slot = grad_slot(id);
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
  }

  void propagate(const Node<T>& n) {
    const auto& up = n.grad;
    switch (n.kind) {
      case OpKind::Constant:
      case OpKind::Variable:
        return;
      case OpKind::Conv2d: {
        const auto [x, w, b] = n.inputs;
        kernels::ConvGradientMask mask{needs(x), needs(w), needs(b)};
        auto g = kernels::conv2d_backward(value(x), value(w), value(b), n.dilation, up, mask);
        if (mask.input) accumulate(x, g.input);
        if (mask.weight) accumulate(w, g.weight);
        if (mask.bias) accumulate(b, g.bias);
        return;
      }
      case OpKind::Relu: {
        const auto x = n.inputs[0];
        if (!needs(x)) return;
        const auto& vx = value(x);
        auto& slot = grad_slot(x);
        for (std::size_t i = 0; i < slot.size(); ++i)
          if (vx[i] > T{0}) slot[i] += up[i];
        return;
      }
      case OpKind::Add:
        accumulate(n.inputs[0], up);
        accumulate(n.inputs[1], up);
        return;
      case OpKind::ConcatChannels: {
        const auto a = n.inputs[0], b = n.inputs[1];
        const auto& va = value(a);
        const auto& vb = value(b);
        const std::size_t batch = va.dim(0), ca = va.dim(1), cb = vb.dim(1),
                          hw = va.dim(2) * va.dim(3);
        if (needs(a)) {
          auto& ga = grad_slot(a);
          for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < ca * hw; ++i) ga[s * ca * hw + i] += up[s * (ca + cb) * hw + i];
        }
        if (needs(b)) {
          auto& gb = grad_slot(b);
          for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < cb * hw; ++i)
              gb[s * cb * hw + i] += up[(s * (ca + cb) + ca) * hw + i];
        }
        return;
      }
      case OpKind::BroadcastBatch: {
        const auto x = n.inputs[0];
        auto& gx = grad_slot(x);
        const std::size_t per = gx.size();
        for (std::size_t s = 0; s < up.size() / per; ++s)
          for (std::size_t i = 0; i < per; ++i) gx[i] += up[s * per + i];
        return;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        const auto x = n.inputs[0];
        auto& gx = grad_slot(x);
        const T scale = n.kind == OpKind::Sum ? up[0] : up[0] / static_cast<T>(gx.size());
        for (auto& v : gx.values()) v += scale;
        return;
      }
      case OpKind::LossL2:
      case OpKind::LossL1: {
        const auto pred = n.inputs[0], target = n.inputs[1];
        const auto& p = value(pred);
        const auto& t = value(target);
        const T scale = up[0] / static_cast<T>(p.size());
        Tensor<T> g(p.shape());
        for (std::size_t i = 0; i < p.size(); ++i) {
          const T r = p[i] - t[i];
          if (n.kind == OpKind::LossL2) g[i] = T{2} * r * scale;
          else g[i] = r > T{0} ? scale : (r < T{0} ? -scale : T{0});
        }
        accumulate(pred, g);
        if (needs(target)) {
          for (auto& v : g.values()) v = -v;
          accumulate(target, g);
        }
        return;
      }
    }
  }

  std::vector<Node<T>> nodes_;
};

}  // namespace asldn
