#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfedpt/rng.hpp"
#include "pfedpt/tensor.hpp"

namespace pfedpt {

enum class PromptTemplate { Padding, PatchFixed, PatchRandom };
enum class PromptMode { Add, Replace };

inline const char* to_string(PromptTemplate t) {
  switch (t) {
    case PromptTemplate::Padding: return "padding";
    case PromptTemplate::PatchFixed: return "patch-fixed";
    case PromptTemplate::PatchRandom: return "patch-random";
  }
  return "?";
}

inline PromptTemplate prompt_template_from(const std::string& s) {
  if (s == "padding") return PromptTemplate::Padding;
  if (s == "patch-fixed") return PromptTemplate::PatchFixed;
  if (s == "patch-random") return PromptTemplate::PatchRandom;
  throw std::invalid_argument("prompt: unknown template '" + s + "'");
}

struct PromptSpec {
  PromptTemplate kind = PromptTemplate::Padding;
  Index size = 4;  // p, in pixels
  Shape image;     // (C,H,W)
  PromptMode mode = PromptMode::Add;

  void validate() const {
    if (image.size() != 3) throw std::invalid_argument("prompt: image shape must be (C,H,W)");
    for (Index e : image)
      if (e <= 0) throw std::invalid_argument("prompt: image extents must be positive");
    if (size < 0) throw std::invalid_argument("prompt: size must be >= 0");
    const Index m = std::min(image[1], image[2]);
    if (kind == PromptTemplate::Padding && 2 * size >= m)
      throw std::invalid_argument("prompt: padding requires 2p < min(H,W), got p=" +
                                  std::to_string(size));
    if (kind != PromptTemplate::Padding && size > m)
      throw std::invalid_argument("prompt: patch requires p <= min(H,W), got p=" +
                                  std::to_string(size));
  }
};

/// Learnable parameters per spec: Cp^2 for patches, 2Cp(H+W-2p) for padding.
inline Index prompt_param_count(const PromptSpec& spec) {
  spec.validate();
  const Index c = spec.image[0], h = spec.image[1], w = spec.image[2], p = spec.size;
  if (spec.kind == PromptTemplate::Padding) return 2 * c * p * (h + w - 2 * p);
  return c * p * p;
}

/// Binary (H,W) grid of prompt support plus its row-major position list.
/// Patch templates store their support at the top-left corner; patch-random
/// translates it at application time.
struct TemplateMask {
  Index h = 0, w = 0;
  std::vector<std::uint8_t> grid;   // h*w
  std::vector<Index> support;       // row-major positions i*w+j with grid==1

  Index popcount() const { return static_cast<Index>(support.size()); }
  bool contains(Index i, Index j) const { return grid[static_cast<size_t>(i * w + j)] != 0; }
};

inline TemplateMask build_template_mask(const PromptSpec& spec) {
  spec.validate();
  TemplateMask m;
  m.h = spec.image[1];
  m.w = spec.image[2];
  m.grid.assign(static_cast<size_t>(m.h * m.w), 0);
  const Index p = spec.size;
  if (spec.kind == PromptTemplate::Padding) {
    for (Index i = 0; i < m.h; ++i)
      for (Index j = 0; j < m.w; ++j)
        if (i < p || i >= m.h - p || j < p || j >= m.w - p)
          m.grid[static_cast<size_t>(i * m.w + j)] = 1;
  } else {
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < p; ++j) m.grid[static_cast<size_t>(i * m.w + j)] = 1;
  }
  for (Index k = 0; k < m.h * m.w; ++k)
    if (m.grid[static_cast<size_t>(k)]) m.support.push_back(k);
  return m;
}

/// Batch-level placement of a patch template; (0,0) for padding and fixed
/// patches.
struct PromptAnchor {
  Index di = 0, dj = 0;
};

/// A prompt spec plus its learnable grid for one client. delta is a full
/// (C,H,W) tensor, exactly zero off the template mask at all times.
template <typename Scalar>
struct PromptState {
  PromptSpec spec;
  TemplateMask mask;
  Tensor<Scalar> delta;
  int owner = -1;

  Index param_count() const { return spec.image[0] * mask.popcount(); }

  /// Masked values in row-major mask order, channel-major.
  VectorX<Scalar> packed() const {
    const Index c = spec.image[0], hw = mask.h * mask.w;
    VectorX<Scalar> v(param_count());
    Index at = 0;
    for (Index ch = 0; ch < c; ++ch)
      for (Index pos : mask.support) v[at++] = delta[ch * hw + pos];
    return v;
  }

  void unpack(const VectorX<Scalar>& v) {
    if (v.size() != param_count()) throw std::invalid_argument("prompt: packed size mismatch");
    delta.data().setZero();
    const Index c = spec.image[0], hw = mask.h * mask.w;
    Index at = 0;
    for (Index ch = 0; ch < c; ++ch)
      for (Index pos : mask.support) delta[ch * hw + pos] = v[at++];
  }
};

/// delta starts at zero so a fresh prompt leaves the forward pass
/// bit-identical to the unprompted one; the seed is reserved for future
/// nonzero schemes.
template <typename Scalar>
PromptState<Scalar> init_prompt(const PromptSpec& spec, std::uint64_t /*seed*/, int owner = -1) {
  spec.validate();
  PromptState<Scalar> s;
  s.spec = spec;
  s.mask = build_template_mask(spec);
  s.delta = Tensor<Scalar>(spec.image);
  s.owner = owner;
  return s;
}

/// Draws the batch anchor: uniform placement for patch-random, (0,0)
/// otherwise.
inline PromptAnchor draw_anchor(const PromptSpec& spec, Rng& rng) {
  if (spec.kind != PromptTemplate::PatchRandom || spec.size == 0) return {};
  const Index h = spec.image[1], w = spec.image[2], p = spec.size;
  PromptAnchor a;
  a.di = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(h - p + 1)));
  a.dj = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(w - p + 1)));
  return a;
}

namespace detail {
template <typename Scalar>
void check_prompt_input(const Tensor<Scalar>& x, const PromptSpec& spec) {
  const Shape& s = x.shape();
  const bool batched = s.size() == 4;
  if (!batched && s.size() != 3)
    throw std::invalid_argument("apply_prompt: expected (C,H,W) or (B,C,H,W)");
  const size_t off = batched ? 1 : 0;
  if (s[off] != spec.image[0] || s[off + 1] != spec.image[1] || s[off + 2] != spec.image[2])
    throw std::invalid_argument("apply_prompt: image shape " + shape_str(s) +
                                " does not match prompt spec " + shape_str(spec.image));
}
}  // namespace detail

/// x' = x + M (.) delta at a given anchor. Only support pixels are touched,
/// and exact-zero delta entries are skipped, so untouched pixels keep their
/// bits. Replace mode overwrites support pixels instead.
template <typename Scalar>
Tensor<Scalar> apply_prompt_at(const Tensor<Scalar>& x, const PromptState<Scalar>& state,
                               const PromptAnchor& anchor) {
  detail::check_prompt_input(x, state.spec);
  Tensor<Scalar> out = x;
  const Index c = state.spec.image[0], h = state.spec.image[1], w = state.spec.image[2];
  const Index batch = x.rank() == 4 ? x.dim(0) : 1;
  const Index shift = anchor.di * w + anchor.dj;
  const bool replace = state.spec.mode == PromptMode::Replace;
  for (Index b = 0; b < batch; ++b) {
    Scalar* img = out.raw() + b * c * h * w;
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar* dsrc = state.delta.raw() + ch * h * w;
      Scalar* plane = img + ch * h * w;
      for (Index pos : state.mask.support) {
        const Scalar dv = dsrc[pos];
        if (replace)
          plane[pos + shift] = dv;
        else if (dv != Scalar(0))
          plane[pos + shift] += dv;
      }
    }
  }
  return out;
}

/// Batched application per the training/evaluation path: the anchor is
/// drawn once per batch from the supplied stream.
template <typename Scalar>
Tensor<Scalar> apply_prompt(const Tensor<Scalar>& x, const PromptState<Scalar>& state, Rng& rng) {
  return apply_prompt_at(x, state, draw_anchor(state.spec, rng));
}

/// Gradient of the batch-mean loss w.r.t. delta, gathered from the input
/// gradient at the anchor used for this batch. Packed mask order.
template <typename Scalar>
VectorX<Scalar> prompt_gradient(const PromptState<Scalar>& state, const Tensor<Scalar>& input_grad,
                                const PromptAnchor& anchor) {
  detail::check_prompt_input(input_grad, state.spec);
  const Index c = state.spec.image[0], h = state.spec.image[1], w = state.spec.image[2];
  const Index batch = input_grad.rank() == 4 ? input_grad.dim(0) : 1;
  const Index shift = anchor.di * w + anchor.dj;
  VectorX<Scalar> g = VectorX<Scalar>::Zero(state.param_count());
  const Index per_ch = state.mask.popcount();
  for (Index b = 0; b < batch; ++b) {
    const Scalar* img = input_grad.raw() + b * c * h * w;
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar* plane = img + ch * h * w;
      Index at = ch * per_ch;
      for (Index pos : state.mask.support) g[at++] += plane[pos + shift];
    }
  }
  return g;
}

/// One SGD step on delta; off-mask entries stay exactly zero.
template <typename Scalar>
PromptState<Scalar> prompt_grad_step(const PromptState<Scalar>& state, const VectorX<Scalar>& grad,
                                     double lr) {
  if (grad.size() != state.param_count())
    throw std::invalid_argument("prompt_grad_step: gradient size mismatch");
  if (!grad.allFinite()) throw std::runtime_error("prompt_grad_step: non-finite gradient");
  PromptState<Scalar> out = state;
  const Index c = state.spec.image[0], hw = state.mask.h * state.mask.w;
  const Scalar step = static_cast<Scalar>(lr);
  Index at = 0;
  for (Index ch = 0; ch < c; ++ch)
    for (Index pos : state.mask.support) {
      out.delta[ch * hw + pos] -= step * grad[at];
      ++at;
    }
  return out;
}

}  // namespace pfedpt
