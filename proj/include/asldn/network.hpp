#pragma once

// Dilated wide-activation network (DWAN).
//
//   input ─ head conv 3x3 (1→C) ─┬─ local:  4 x [conv 3x3 (C→E) → ReLU → conv 3x3 (E→C)] + identity
//                                └─ global: 4 x [dilated conv 3x3 (C→E) → ReLU → conv 3x3 (E→C)] + identity
//   concat(local, global) ─ fuse conv 3x3 (2C→1) ─┐
//   input ─ skip conv 3x3 (1→1) ───────────────────┴─ add → output
//
// C = base_channels, E = expansion_channels. Only the first conv of each global
// block is dilated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "asldn/error.hpp"
#include "asldn/graph.hpp"
#include "asldn/tensor.hpp"

namespace asldn {

struct DwanSpec {
  std::size_t base_channels = 32;
  std::size_t expansion_channels = 128;
  std::size_t blocks_per_pathway = 4;
  std::vector<std::size_t> global_dilations{2, 4, 8, 16};
  std::size_t kernel = 3;

  void validate() const {
    require(base_channels >= 1 && expansion_channels >= 1, ErrorCode::InvalidArgument,
            "channel counts must be >= 1");
    require(blocks_per_pathway >= 1, ErrorCode::InvalidArgument, "need at least one block");
    require(global_dilations.size() == blocks_per_pathway, ErrorCode::InvalidArgument,
            "global_dilations needs one entry per block");
    for (auto d : global_dilations)
      require(d >= 1, ErrorCode::InvalidArgument, "dilations must be >= 1");
    require(kernel >= 1 && kernel % 2 == 1, ErrorCode::InvalidArgument, "kernel must be odd");
  }
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Ordered, uniquely named learnable tensors.
template <typename T>
class NetworkParameters {
 public:
  NetworkParameters() = default;

  void add(std::string name, Tensor<T> tensor) {
    require(!contains(name), ErrorCode::DuplicateName, "parameter '" + name + "' already present");
    index_.insert(name);
    entries_.push_back({std::move(name), std::move(tensor)});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const { return entries_[position(name)].tensor; }
  Tensor<T>& get(const std::string& name) { return entries_[position(name)].tensor; }

  std::size_t position(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    throw Error(ErrorCode::InvalidArgument, "no parameter named '" + name + "'");
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const NetworkParameters& a, const NetworkParameters& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].tensor == b.entries_[i].tensor))
        return false;
    return true;
  }

 private:
  std::vector<NamedTensor<T>> entries_;
  std::unordered_set<std::string> index_;
};

template <typename To, typename From>
NetworkParameters<To> parameters_cast(const NetworkParameters<From>& p) {
  NetworkParameters<To> out;
  for (const auto& e : p) out.add(e.name, tensor_cast<To>(e.tensor));
  return out;
}

enum class Pathway { Local, Global };

// One row of the structural audit.
struct ConvLayer {
  std::string name;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t dilation;

  std::size_t parameter_count() const {
    return out_channels * in_channels * kernel * kernel + out_channels;
  }
};

inline std::string block_prefix(Pathway p, std::size_t block) {
  return std::string(p == Pathway::Local ? "local" : "global") + ".block" + std::to_string(block + 1);
}

// Every conv layer of the topology, in parameter order.
inline std::vector<ConvLayer> dwan_layers(const DwanSpec& spec) {
  spec.validate();
  const auto C = spec.base_channels, E = spec.expansion_channels, k = spec.kernel;
  std::vector<ConvLayer> layers;
  layers.push_back({"head.conv", 1, C, k, 1});
  for (auto p : {Pathway::Local, Pathway::Global}) {
    for (std::size_t b = 0; b < spec.blocks_per_pathway; ++b) {
      const std::size_t d = p == Pathway::Local ? 1 : spec.global_dilations[b];
      layers.push_back({block_prefix(p, b) + ".conv1", C, E, k, d});
      layers.push_back({block_prefix(p, b) + ".conv2", E, C, k, 1});
    }
  }
  layers.push_back({"fuse.conv", 2 * C, 1, k, 1});
  layers.push_back({"skip.conv", 1, 1, k, 1});
  return layers;
}

// He-normal weights (std = sqrt(2 / fan_in)) and zero biases.
template <typename T>
NetworkParameters<T> build_dwan(const DwanSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkParameters<T> params;
  for (const auto& layer : dwan_layers(spec)) {
    const double fan_in = static_cast<double>(layer.in_channels * layer.kernel * layer.kernel);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    Tensor<T> w(Shape{layer.out_channels, layer.in_channels, layer.kernel, layer.kernel});
    for (auto& v : w.values()) v = static_cast<T>(normal(rng));
    params.add(layer.name + ".weight", std::move(w));
    params.add(layer.name + ".bias", Tensor<T>(Shape{layer.out_channels}));
  }
  return params;
}

// Checks that `params` carries exactly the tensors `spec` needs, in order.
template <typename T>
void check_parameters(const DwanSpec& spec, const NetworkParameters<T>& params) {
  const auto layers = dwan_layers(spec);
  require(params.size() == 2 * layers.size(), ErrorCode::ShapeMismatch,
          "expected " + std::to_string(2 * layers.size()) + " parameter tensors, found " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const auto& w = params[2 * i];
    const auto& b = params[2 * i + 1];
    require(w.name == l.name + ".weight" && b.name == l.name + ".bias", ErrorCode::ShapeMismatch,
            "parameter order mismatch at " + l.name);
    require(w.tensor.shape() == Shape({l.out_channels, l.in_channels, l.kernel, l.kernel}),
            ErrorCode::ShapeMismatch, l.name + ".weight has shape " + shape_string(w.tensor.shape()));
    require(b.tensor.shape() == Shape({l.out_channels}), ErrorCode::ShapeMismatch,
            l.name + ".bias has shape " + shape_string(b.tensor.shape()));
  }
}

// Graph nodes produced by one DWAN forward pass.
struct DwanTaps {
  NodeId head;
  NodeId local;
  NodeId global;
  NodeId fused;
  NodeId skip;
  NodeId output;
};

template <typename T>
class Dwan {
 public:
  explicit Dwan(DwanSpec spec) : spec_(std::move(spec)), layers_(dwan_layers(spec_)) {}

  const DwanSpec& spec() const noexcept { return spec_; }
  const std::vector<ConvLayer>& layers() const noexcept { return layers_; }

  // Registers every parameter as a graph variable, in parameter order.
  std::vector<NodeId> bind(Graph<T>& g, const NetworkParameters<T>& params) const {
    check_parameters(spec_, params);
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (const auto& e : params) ids.push_back(g.variable(e.tensor, e.name));
    return ids;
  }

  DwanTaps forward(Graph<T>& g, std::span<const NodeId> params, NodeId input) const {
    const auto& x = g.value(input);
    require(x.rank() == 4 && x.dim(1) == 1, ErrorCode::ShapeMismatch,
            "DWAN input must be [N,1,H,W], got " + shape_string(x.shape()));
    require(params.size() == 2 * layers_.size(), ErrorCode::ShapeMismatch, "parameter node count");

    std::size_t layer = 0;
    auto conv = [&](NodeId in) {
      const auto& l = layers_[layer];
      auto out = g.conv2d(in, params[2 * layer], params[2 * layer + 1], l.dilation, l.name);
      ++layer;
      return out;
    };

    DwanTaps taps;
    taps.head = conv(input);
    auto pathway = [&](NodeId in) {
      NodeId h = in;
      for (std::size_t b = 0; b < spec_.blocks_per_pathway; ++b) {
        auto wide = g.relu(conv(h));
        h = g.add(h, conv(wide));
      }
      return h;
    };
    taps.local = pathway(taps.head);
    taps.global = pathway(taps.head);
    taps.fused = conv(g.concat_channels(taps.local, taps.global));
    taps.skip = conv(input);
    taps.output = g.add(taps.fused, taps.skip);
    return taps;
  }

  Tensor<T> infer(const NetworkParameters<T>& params, const Tensor<T>& input) const {
    Graph<T> g;
    auto ids = bind(g, params);
    auto in = g.constant(input);
    return g.value(forward(g, ids, in).output);
  }

 private:
  DwanSpec spec_;
  std::vector<ConvLayer> layers_;
};

// Receptive-field radius implied by the topology: each k x k conv with
// dilation d widens the support by d * (k / 2) on each side.
inline std::size_t analytic_rf_radius(const DwanSpec& spec, std::optional<Pathway> pathway) {
  const std::size_t half = spec.kernel / 2;
  auto path_radius = [&](Pathway p) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < spec.blocks_per_pathway; ++b)
      r += half * ((p == Pathway::Local ? 1 : spec.global_dilations[b]) + 1);
    return r;
  };
  if (pathway) return half + path_radius(*pathway);
  return half + std::max(path_radius(Pathway::Local), path_radius(Pathway::Global)) + half;
}

struct ReceptiveField {
  std::size_t height = 0;  // extent of the nonzero-sensitivity bounding box
  std::size_t width = 0;
  std::size_t support = 0;  // number of input pixels with nonzero sensitivity
};

// Empirical receptive field of the center output pixel: the input pixels whose
// gradient d(out_center)/d(in) is nonzero. The gradient is taken at `probe`
// (a [1,1,H,W] image) so that ReLU units are generically active. With a
// pathway selected, the center of that pathway's feature map (summed over
// channels) is probed instead of the network output.
template <typename T>
ReceptiveField empirical_receptive_field(const Dwan<T>& net, const NetworkParameters<T>& params,
                                         const Tensor<T>& probe,
                                         std::optional<Pathway> pathway = std::nullopt) {
  require(probe.rank() == 4 && probe.dim(0) == 1 && probe.dim(1) == 1, ErrorCode::ShapeMismatch,
          "probe must be [1,1,H,W]");
  Graph<T> g;
  auto ids = net.bind(g, params);
  auto in = g.variable(probe, "probe");
  auto taps = net.forward(g, ids, in);
  const NodeId target = !pathway ? taps.output : (*pathway == Pathway::Local ? taps.local : taps.global);
  const auto& out = g.value(target);
  const std::size_t H = out.dim(2), W = out.dim(3);
  Tensor<T> seed(out.shape());
  for (std::size_t c = 0; c < out.dim(1); ++c) seed.at({0, c, H / 2, W / 2}) = T{1};
  g.backward(target, seed);
  const auto& grad = g.grad(in);

  ReceptiveField rf;
  std::size_t y0 = H, y1 = 0, x0 = W, x1 = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (grad.at({0, 0, y, x}) != T{0}) {
        ++rf.support;
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  if (rf.support) {
    rf.height = y1 - y0 + 1;
    rf.width = x1 - x0 + 1;
  }
  return rf;
}

}  // namespace asldn
