#pragma once

#include <functional>
#include <span>

#include "pfedpt/network.hpp"

namespace pfedpt {

/// Central difference of a scalar function: (f(p+eps) - f(p-eps)) / 2eps.
inline double central_difference(const std::function<double(double)>& f, double p, double eps) {
  return (f(p + eps) - f(p - eps)) / (2.0 * eps);
}

/// Central-difference gradient estimate for every trainable parameter.
/// Verification oracle for backward(); runs only in the 64-bit mode and
/// never touches the reverse-mode path.
inline Gradients<double> finite_diff_grad(Network<double>& model, const Tensor<double>& x,
                                          std::span<const int> labels, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2))
    throw std::invalid_argument("finite_diff_grad: eps must be in (0, 1e-2]");
  ParameterVector<double> pv = model.flatten_params();
  Gradients<double> g(VectorX<double>(pv.size()), pv.layout);
  ParameterVector<double> probe = pv;
  for (Index i = 0; i < pv.size(); ++i) {
    const double p0 = pv.values[i];
    probe.values[i] = p0 + eps;
    model.load_params(probe);
    const double lp = forward_loss(model, x, labels).loss;
    probe.values[i] = p0 - eps;
    model.load_params(probe);
    const double lm = forward_loss(model, x, labels).loss;
    probe.values[i] = p0;
    g.values[i] = (lp - lm) / (2.0 * eps);
  }
  model.load_params(pv);
  model.invalidate_loss_context();  // probe passes are not real forward contexts
  return g;
}

}  // namespace pfedpt
