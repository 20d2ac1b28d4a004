#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "asldn/error.hpp"
#include "asldn/graph.hpp"
#include "asldn/network.hpp"
#include "asldn/seed.hpp"
#include "asldn/tensor.hpp"

namespace asldn {

enum class LossKind { L1, L2 };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "l1" || s == "L1") return LossKind::L1;
  if (s == "l2" || s == "L2") return LossKind::L2;
  throw Error(ErrorCode::InvalidArgument, "unknown loss '" + s + "' (expected l1 or l2)");
}

inline const char* to_string(LossKind k) { return k == LossKind::L1 ? "l1" : "l2"; }

template <typename T>
NodeId add_loss(Graph<T>& g, LossKind kind, NodeId pred, NodeId target) {
  return kind == LossKind::L1 ? g.loss_l1(pred, target) : g.loss_l2(pred, target);
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const NetworkParameters<T>& params, AdamHyper h) : hyper(h) {
    for (const auto& e : params) {
      m.emplace_back(e.tensor.shape());
      v.emplace_back(e.tensor.shape());
    }
  }
};

// One bias-corrected ADAM update. `grads[i]` belongs to `params[i]`.
template <typename T>
void adam_step(NetworkParameters<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  require(grads.size() == params.size(), ErrorCode::MissingGradient,
          std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) +
              " gradients");
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorCode::InvalidArgument, "optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    require(!grads[i].empty() && grads[i].shape() == params[i].tensor.shape(),
            ErrorCode::MissingGradient, "no gradient for '" + params[i].name + "'");

  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      const double mk = h.beta1 * static_cast<double>(m[k]) + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * static_cast<double>(v[k]) + (1.0 - h.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = h.lr * (mk / c1) / (std::sqrt(vk / c2) + h.eps);
      theta[k] = static_cast<T>(static_cast<double>(theta[k]) - update);
    }
  }
}

// Anything that maps a [N,1,H,W] batch to a same-shaped prediction inside a graph.
template <typename M, typename T>
concept Predictor = requires(const M& m, Graph<T>& g, std::span<const NodeId> p, NodeId x) {
  { m.predict(g, p, x) } -> std::same_as<NodeId>;
};

template <typename T>
struct DwanPredictor {
  const Dwan<T>& net;
  NodeId predict(Graph<T>& g, std::span<const NodeId> params, NodeId input) const {
    return net.forward(g, params, input).output;
  }
};

// A single learnable [1,1,H,W] image, broadcast over the batch; ignores the input.
template <typename T>
struct BiasImagePredictor {
  NodeId predict(Graph<T>& g, std::span<const NodeId> params, NodeId input) const {
    return g.broadcast_batch(params[0], g.value(input).dim(0));
  }
};

template <typename T>
struct TrainingPair {
  Tensor<T> input;      // [1,H,W]
  Tensor<T> reference;  // [1,H,W]
};

struct TrainConfig {
  LossKind loss = LossKind::L1;
  std::size_t batch_size = 64;
  std::size_t micro_batch = 8;  // samples per graph; gradients are accumulated up to batch_size
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool shuffle = true;
  AdamHyper adam;

  void validate() const {
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(micro_batch >= 1, ErrorCode::InvalidArgument, "micro_batch must be >= 1");
    require(epochs >= 1, ErrorCode::InvalidArgument, "epochs must be >= 1");
    require(adam.lr > 0, ErrorCode::InvalidArgument, "learning rate must be > 0");
  }
};

template <typename T>
struct EpochSummary {
  std::size_t epoch;  // 1-based
  double mean_loss;
  std::uint64_t step;
  const NetworkParameters<T>& params;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::uint64_t steps = 0;
};

// Sample order for one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch,
                                            bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

// Mini-batch ADAM training. Each batch is split into micro-batches whose
// gradients are summed with weights size/batch, which reproduces the gradient
// of the full-batch mean loss. The last partial batch of an epoch is kept.
template <typename T, Predictor<T> M>
TrainResult train(const M& model, NetworkParameters<T>& params,
                  std::span<const TrainingPair<T>> dataset, const TrainConfig& config,
                  AdamState<T>& state,
                  const std::type_identity_t<std::function<void(const EpochSummary<T>&)>>& on_epoch = {}) {
  config.validate();
  require(!dataset.empty(), ErrorCode::InvalidArgument, "training dataset is empty");
  const Shape sample_shape = dataset.front().input.shape();
  for (const auto& p : dataset)
    require(p.input.shape() == sample_shape && p.reference.shape() == sample_shape,
            ErrorCode::ShapeMismatch, "all training slices must share one shape");

  TrainResult result;
  std::vector<Tensor<T>> grads;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(dataset.size(), config.seed, epoch, config.shuffle);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t batch = std::min(config.batch_size, order.size() - start);
      grads.clear();
      for (const auto& e : params) grads.emplace_back(e.tensor.shape());
      double batch_loss = 0;
      for (std::size_t mstart = 0; mstart < batch; mstart += config.micro_batch) {
        const std::size_t count = std::min(config.micro_batch, batch - mstart);
        std::vector<const Tensor<T>*> inputs, refs;
        for (std::size_t k = 0; k < count; ++k) {
          const auto& pair = dataset[order[start + mstart + k]];
          inputs.push_back(&pair.input);
          refs.push_back(&pair.reference);
        }
        Graph<T> g;
        std::vector<NodeId> ids;
        ids.reserve(params.size());
        for (const auto& e : params) ids.push_back(g.variable(e.tensor, e.name));
        auto x = g.constant(stack<T>(inputs));
        auto y = g.constant(stack<T>(refs));
        auto loss = add_loss(g, config.loss, model.predict(g, ids, x), y);
        const double value = g.value(loss)[0];
        require(std::isfinite(value), ErrorCode::NumericalFailure,
                "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(state.step + 1));
        g.backward(loss);
        const T weight = static_cast<T>(static_cast<double>(count) / static_cast<double>(batch));
        for (std::size_t i = 0; i < ids.size(); ++i) {
          require(g.has_grad(ids[i]), ErrorCode::MissingGradient,
                  "no gradient reached '" + params[i].name + "'");
          const auto& gi = g.grad(ids[i]);
          for (std::size_t k = 0; k < gi.size(); ++k) grads[i][k] += weight * gi[k];
        }
        batch_loss += value * static_cast<double>(count) / static_cast<double>(batch);
      }
      adam_step<T>(params, grads, state);
      ++result.steps;
      epoch_loss += batch_loss * static_cast<double>(batch);
    }
    const double mean = epoch_loss / static_cast<double>(dataset.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(EpochSummary<T>{epoch, mean, state.step, params});
  }
  return result;
}

inline void write_loss_trace(std::ostream& os, std::span<const double> epoch_loss) {
  os << "epoch,mean_loss\n";
  os.precision(9);
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) os << (i + 1) << ',' << epoch_loss[i] << '\n';
}

}  // namespace asldn
