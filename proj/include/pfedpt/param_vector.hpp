#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfedpt/tensor.hpp"

namespace pfedpt {

/// Canonical flat ordering of a model's trainable parameters. Shared by all
/// vectors flattened from the same architecture, so it is ref-counted and
/// immutable.
struct ParameterLayout {
  struct Block {
    std::string name;
    Shape shape;
    Index offset = 0;
    Index size = 0;
  };
  std::vector<Block> blocks;
  Index total = 0;
  /// First index of the head (final linear layer); body is [0, body_size).
  Index body_size = 0;

  const Block& find(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw std::invalid_argument("layout: no block named " + name);
  }
};

using LayoutPtr = std::shared_ptr<const ParameterLayout>;

/// Flat, ordered view of all trainable parameters; the unit of aggregation.
/// The layout pointer is optional: raw vectors (e.g. in tests) may omit it.
template <typename Scalar>
struct ParameterVector {
  VectorX<Scalar> values;
  LayoutPtr layout;

  ParameterVector() = default;
  explicit ParameterVector(VectorX<Scalar> v, LayoutPtr l = nullptr)
      : values(std::move(v)), layout(std::move(l)) {}

  Index size() const { return values.size(); }

  auto block(const ParameterLayout::Block& b) { return values.segment(b.offset, b.size); }
  auto block(const ParameterLayout::Block& b) const { return values.segment(b.offset, b.size); }

  auto body() const { return values.head(layout ? layout->body_size : values.size()); }
  auto head() const {
    if (!layout) throw std::invalid_argument("parameter vector: no layout, no head");
    return values.tail(values.size() - layout->body_size);
  }
};

/// Gradients mirror the parameter layout one-to-one.
template <typename Scalar>
using Gradients = ParameterVector<Scalar>;

/// Plain SGD: p' = p - lr * g. Momentum and weight decay are deliberately
/// absent. Non-finite gradients are a hard error, never clipped.
template <typename Scalar>
ParameterVector<Scalar> sgd_step(const ParameterVector<Scalar>& params,
                                 const Gradients<Scalar>& grads, double lr) {
  if (lr < 0) throw std::invalid_argument("sgd_step: lr must be >= 0");
  if (grads.size() != params.size())
    throw std::invalid_argument("sgd_step: gradient length " + std::to_string(grads.size()) +
                                " does not match parameter length " +
                                std::to_string(params.size()));
  if (!grads.values.allFinite()) throw std::runtime_error("sgd_step: non-finite gradient");
  ParameterVector<Scalar> out = params;
  out.values -= static_cast<Scalar>(lr) * grads.values;
  return out;
}

}  // namespace pfedpt
