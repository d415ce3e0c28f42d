#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pfedpt/layers.hpp"
#include "pfedpt/param_vector.hpp"
#include "pfedpt/tensor.hpp"

namespace pfedpt {

/// Raised when a forward pass produces a non-finite activation; carries the
/// index of the offending layer.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(size_t layer_index, const std::string& layer_name)
      : std::runtime_error("non-finite activation in layer " + std::to_string(layer_index) +
                           " (" + layer_name + ")"),
        layer_index(layer_index) {}
  size_t layer_index;
};

template <typename Scalar>
struct BackwardResult {
  Gradients<Scalar> params;
  Tensor<Scalar> input;  // d(loss)/d(input); empty unless requested
};

/// A feed-forward layer stack with reverse-mode differentiation. Single
/// writer; clone parameter vectors to share state across workers.
template <typename Scalar>
class Network {
 public:
  Network() = default;

  void add(std::unique_ptr<Layer<Scalar>> layer, std::string name) {
    layer->name = std::move(name);
    layers_.push_back(std::move(layer));
    layout_.reset();
  }

  size_t layer_count() const { return layers_.size(); }
  Layer<Scalar>& layer(size_t i) { return *layers_.at(i); }

  /// Canonical parameter layout: layer order, weight before bias. Head =
  /// parameters of the final Dense layer.
  LayoutPtr layout() const {
    if (layout_) return layout_;
    auto lay = std::make_shared<ParameterLayout>();
    Index off = 0;
    for (const auto& l : layers_) {
      auto ps = const_cast<Layer<Scalar>&>(*l).params();
      const char* role[2] = {"weight", "bias"};
      for (size_t i = 0; i < ps.size(); ++i) {
        ParameterLayout::Block b;
        b.name = l->name + "." + (i < 2 ? role[i] : std::to_string(i));
        b.shape = ps[i]->shape();
        b.offset = off;
        b.size = ps[i]->size();
        off += b.size;
        lay->blocks.push_back(std::move(b));
      }
    }
    lay->total = off;
    lay->body_size = off;
    for (size_t i = layers_.size(); i-- > 0;) {
      if (std::string(layers_[i]->kind()) == "dense") {
        Index head = 0;
        for (auto* p : layers_[i]->params()) head += p->size();
        lay->body_size = off - head;
        break;
      }
    }
    layout_ = std::move(lay);
    return layout_;
  }

  Index parameter_count() const { return layout()->total; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> cur = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
      cur = layers_[i]->forward(cur);
      if (!cur.all_finite()) throw NonFiniteError(i, layers_[i]->name);
    }
    return cur;
  }

  /// Forward up to (not including) the final layer; penultimate
  /// activations, exported for embedding dumps.
  Tensor<Scalar> penultimate(const Tensor<Scalar>& x) {
    if (layers_.empty()) throw std::logic_error("network: empty");
    Tensor<Scalar> cur = x;
    for (size_t i = 0; i + 1 < layers_.size(); ++i) {
      cur = layers_[i]->forward(cur);
      if (!cur.all_finite()) throw NonFiniteError(i, layers_[i]->name);
    }
    return cur;
  }

  bool has_recorded_loss() const { return recorded_; }

  /// Called by forward_loss to arm backward with d(loss)/d(logits).
  void record_loss_grad(Tensor<Scalar> dlogits) {
    dlogits_ = std::move(dlogits);
    recorded_ = true;
  }

  /// Drops any recorded context, e.g. after probing passes whose
  /// gradients must never be consumed.
  void invalidate_loss_context() { recorded_ = false; }

  BackwardResult<Scalar> run_backward(bool need_input_grad) {
    if (!recorded_)
      throw std::logic_error("backward: no recorded forward_loss pass");
    recorded_ = false;
    Tensor<Scalar> cur = std::move(dlogits_);
    for (size_t i = layers_.size(); i-- > 0;) {
      const bool need = need_input_grad || i > 0;
      cur = layers_[i]->backward(cur, need);
    }
    BackwardResult<Scalar> out;
    out.params = gather_grads();
    if (need_input_grad) out.input = std::move(cur);
    return out;
  }

  ParameterVector<Scalar> flatten_params() const {
    auto lay = layout();
    ParameterVector<Scalar> pv(VectorX<Scalar>(lay->total), lay);
    size_t bi = 0;
    for (const auto& l : layers_)
      for (auto* p : const_cast<Layer<Scalar>&>(*l).params())
        pv.block(lay->blocks[bi++]) = p->data();
    return pv;
  }

  void load_params(const ParameterVector<Scalar>& pv) {
    auto lay = layout();
    if (pv.size() != lay->total)
      throw std::invalid_argument("load_params: count mismatch: vector has " +
                                  std::to_string(pv.size()) + ", model needs " +
                                  std::to_string(lay->total));
    size_t bi = 0;
    for (const auto& l : layers_)
      for (auto* p : l->params()) p->data() = pv.block(lay->blocks[bi++]);
  }

  /// In-place SGD on a subset of blocks. Elementwise identical to sgd_step
  /// on the flat vector (same p - lr*g expression, same order).
  void apply_sgd(const Gradients<Scalar>& grads, double lr,
                 const std::function<bool(size_t block_index)>& trainable = nullptr) {
    auto lay = layout();
    if (grads.size() != lay->total) throw std::invalid_argument("apply_sgd: grad count mismatch");
    if (!grads.values.allFinite()) throw std::runtime_error("apply_sgd: non-finite gradient");
    const Scalar step = static_cast<Scalar>(lr);
    size_t bi = 0;
    for (const auto& l : layers_)
      for (auto* p : l->params()) {
        const auto& b = lay->blocks[bi];
        if (!trainable || trainable(bi)) p->data() -= step * grads.block(b);
        ++bi;
      }
  }

  Gradients<Scalar> gather_grads() const {
    auto lay = layout();
    Gradients<Scalar> g(VectorX<Scalar>(lay->total), lay);
    size_t bi = 0;
    for (const auto& l : layers_)
      for (auto* t : const_cast<Layer<Scalar>&>(*l).grads()) g.block(lay->blocks[bi++]) = t->data();
    return g;
  }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
  mutable LayoutPtr layout_;
  Tensor<Scalar> dlogits_;
  bool recorded_ = false;
};

template <typename Scalar>
struct LossResult {
  double loss = 0;
  Tensor<Scalar> logits;
};

/// Mean softmax cross-entropy over the batch; records d(loss)/d(logits) on
/// the model so backward() can run. Log-sum-exp stabilized.
template <typename Scalar>
LossResult<Scalar> forward_loss(Network<Scalar>& model, const Tensor<Scalar>& x,
                                std::span<const int> labels) {
  if (x.dim(0) != static_cast<Index>(labels.size()))
    throw std::invalid_argument("forward_loss: batch extent " + std::to_string(x.dim(0)) +
                                " != label count " + std::to_string(labels.size()));
  Tensor<Scalar> logits = model.forward(x);
  const Index batch = logits.dim(0), classes = logits.dim(1);
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw std::invalid_argument("forward_loss: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(classes) + ")");

  Tensor<Scalar> dlogits(logits.shape());
  auto lm = logits.matrix(batch, classes);
  auto dm = dlogits.matrix(batch, classes);
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  double loss = 0;
  for (Index r = 0; r < batch; ++r) {
    const Scalar mx = lm.row(r).maxCoeff();
    VectorX<Scalar> e = (lm.row(r).array() - mx).exp().matrix().transpose();
    const Scalar z = e.sum();
    loss += static_cast<double>(std::log(z) + mx - lm(r, labels[r]));
    dm.row(r) = (e / z).transpose() * inv_batch;
    dm(r, labels[r]) -= inv_batch;
  }
  loss /= static_cast<double>(batch);

  LossResult<Scalar> out;
  out.loss = loss;
  out.logits = std::move(logits);
  model.record_loss_grad(std::move(dlogits));
  return out;
}

/// Reverse-mode gradients for every trainable parameter; requires a
/// preceding forward_loss on the same model.
template <typename Scalar>
BackwardResult<Scalar> backward(Network<Scalar>& model, bool need_input_grad = false) {
  return model.run_backward(need_input_grad);
}

}  // namespace pfedpt
