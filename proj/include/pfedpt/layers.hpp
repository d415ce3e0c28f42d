#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pfedpt/tensor.hpp"

namespace pfedpt {

/// One step of the backbone pipeline. Forward caches whatever its backward
/// needs; backward overwrites the layer's gradient tensors (one backward per
/// forward, enforced by the owning network).
template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x) = 0;
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool need_input_grad) = 0;
  virtual std::vector<Tensor<Scalar>*> params() { return {}; }
  virtual std::vector<Tensor<Scalar>*> grads() { return {}; }

  std::string name;
};

namespace detail {
inline void check_image(const Shape& s, const char* who) {
  if (s.size() != 4) throw std::invalid_argument(std::string(who) + ": expected (B,C,H,W) input");
}
}  // namespace detail

/// Valid (no padding) convolution, stride 1, square kernel. im2col + GEMM.
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(Index in_ch, Index out_ch, Index ksize)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        ksize_(ksize),
        w_(Shape{out_ch, in_ch, ksize, ksize}),
        b_(Shape{out_ch}),
        dw_(Shape{out_ch, in_ch, ksize, ksize}),
        db_(Shape{out_ch}) {}

  const char* kind() const override { return "conv2d"; }

  Shape output_shape(const Shape& in) const override {
    detail::check_image(in, "conv2d");
    if (in[1] != in_ch_) throw std::invalid_argument("conv2d: channel mismatch");
    if (in[2] < ksize_ || in[3] < ksize_)
      throw std::invalid_argument("conv2d: input " + shape_str(in) + " smaller than kernel");
    return {in[0], out_ch_, in[2] - ksize_ + 1, in[3] - ksize_ + 1};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override {
    const Shape out_shape = output_shape(x.shape());
    in_shape_ = x.shape();
    const Index batch = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
    const Index oh = out_shape[2], ow = out_shape[3];
    const Index patch = in_ch_ * ksize_ * ksize_, spatial = oh * ow;

    cols_.resize(batch * spatial, patch);
    for (Index b = 0; b < batch; ++b) {
      const Scalar* img = x.raw() + b * in_ch_ * h * w;
      Scalar* row = cols_.data() + b * spatial * patch;
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          for (Index c = 0; c < in_ch_; ++c) {
            const Scalar* plane = img + c * h * w + i * w + j;
            for (Index ki = 0; ki < ksize_; ++ki) {
              const Scalar* src = plane + ki * w;
              for (Index kj = 0; kj < ksize_; ++kj) *row++ = src[kj];
            }
          }
        }
    }

    Tensor<Scalar> y(out_shape);
    const auto wm = w_.matrix(out_ch_, patch);
    for (Index b = 0; b < batch; ++b) {
      Eigen::Map<RowMatrix<Scalar>> yb(y.raw() + b * out_ch_ * spatial, out_ch_, spatial);
      Eigen::Map<const RowMatrix<Scalar>> cb(cols_.data() + b * spatial * patch, spatial, patch);
      yb.noalias() = wm * cb.transpose();
      yb.colwise() += b_.data();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool need_input_grad) override {
    const Index batch = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
    const Index oh = h - ksize_ + 1, ow = w - ksize_ + 1;
    const Index patch = in_ch_ * ksize_ * ksize_, spatial = oh * ow;

    auto dwm = dw_.matrix(out_ch_, patch);
    dwm.setZero();
    db_.data().setZero();
    Tensor<Scalar> dx;
    if (need_input_grad) dx = Tensor<Scalar>(in_shape_);

    const auto wm = w_.matrix(out_ch_, patch);
    RowMatrix<Scalar> dcols(patch, spatial);
    for (Index b = 0; b < batch; ++b) {
      Eigen::Map<const RowMatrix<Scalar>> dyb(dy.raw() + b * out_ch_ * spatial, out_ch_, spatial);
      Eigen::Map<const RowMatrix<Scalar>> cb(cols_.data() + b * spatial * patch, spatial, patch);
      dwm.noalias() += dyb * cb;
      db_.data() += dyb.rowwise().sum();
      if (!need_input_grad) continue;

      dcols.noalias() = wm.transpose() * dyb;
      Scalar* img = dx.raw() + b * in_ch_ * h * w;
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          const Index at = i * ow + j;
          Index p = 0;
          for (Index c = 0; c < in_ch_; ++c) {
            Scalar* plane = img + c * h * w + i * w + j;
            for (Index ki = 0; ki < ksize_; ++ki) {
              Scalar* dst = plane + ki * w;
              for (Index kj = 0; kj < ksize_; ++kj, ++p) dst[kj] += dcols(p, at);
            }
          }
        }
    }
    return dx;
  }

  std::vector<Tensor<Scalar>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<Scalar>*> grads() override { return {&dw_, &db_}; }

  Index fan_in() const { return in_ch_ * ksize_ * ksize_; }

 private:
  Index in_ch_, out_ch_, ksize_;
  Tensor<Scalar> w_, b_, dw_, db_;
  Shape in_shape_;
  RowMatrix<Scalar> cols_;
};

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
class MaxPool2x2 final : public Layer<Scalar> {
 public:
  const char* kind() const override { return "maxpool2x2"; }

  Shape output_shape(const Shape& in) const override {
    detail::check_image(in, "maxpool");
    if (in[2] < 2 || in[3] < 2) throw std::invalid_argument("maxpool: input too small");
    return {in[0], in[1], in[2] / 2, in[3] / 2};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override {
    const Shape out_shape = output_shape(x.shape());
    in_shape_ = x.shape();
    const Index planes = in_shape_[0] * in_shape_[1];
    const Index h = in_shape_[2], w = in_shape_[3];
    const Index oh = out_shape[2], ow = out_shape[3];

    Tensor<Scalar> y(out_shape);
    argmax_.assign(static_cast<size_t>(planes * oh * ow), 0);
    for (Index p = 0; p < planes; ++p) {
      const Scalar* src = x.raw() + p * h * w;
      Scalar* dst = y.raw() + p * oh * ow;
      Index* arg = argmax_.data() + p * oh * ow;
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          Index best = (2 * i) * w + 2 * j;
          Scalar v = src[best];
          const Index cand[3] = {best + 1, best + w, best + w + 1};
          for (Index k : cand)
            if (src[k] > v) {
              v = src[k];
              best = k;
            }
          dst[i * ow + j] = v;
          arg[i * ow + j] = best;
        }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool) override {
    Tensor<Scalar> dx(in_shape_);
    const Index planes = in_shape_[0] * in_shape_[1];
    const Index h = in_shape_[2], w = in_shape_[3];
    const Index oh = h / 2, ow = w / 2;
    for (Index p = 0; p < planes; ++p) {
      const Scalar* g = dy.raw() + p * oh * ow;
      Scalar* dst = dx.raw() + p * h * w;
      const Index* arg = argmax_.data() + p * oh * ow;
      for (Index k = 0; k < oh * ow; ++k) dst[arg[k]] += g[k];
    }
    return dx;
  }

 private:
  Shape in_shape_;
  std::vector<Index> argmax_;
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  const char* kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override {
    Tensor<Scalar> y(x.shape());
    active_.assign(static_cast<size_t>(x.size()), 0);
    for (Index i = 0; i < x.size(); ++i) {
      const bool on = x[i] > Scalar(0);
      active_[static_cast<size_t>(i)] = on;
      y[i] = on ? x[i] : Scalar(0);
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool) override {
    Tensor<Scalar> dx(dy.shape());
    for (Index i = 0; i < dy.size(); ++i)
      dx[i] = active_[static_cast<size_t>(i)] ? dy[i] : Scalar(0);
    return dx;
  }

 private:
  std::vector<std::uint8_t> active_;
};

/// Collapses (B, ...) to (B, features).
template <typename Scalar>
class Flatten final : public Layer<Scalar> {
 public:
  const char* kind() const override { return "flatten"; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() < 2) throw std::invalid_argument("flatten: rank < 2");
    Index f = 1;
    for (size_t i = 1; i < in.size(); ++i) f *= in[i];
    return {in[0], f};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override {
    in_shape_ = x.shape();
    return x.reshaped(output_shape(in_shape_));
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool) override {
    return dy.reshaped(in_shape_);
  }

 private:
  Shape in_shape_;
};

/// Fully connected layer; weights stored (out, in) row-major.
template <typename Scalar>
class Dense final : public Layer<Scalar> {
 public:
  Dense(Index in, Index out)
      : in_(in), out_(out), w_(Shape{out, in}), b_(Shape{out}), dw_(Shape{out, in}),
        db_(Shape{out}) {}

  const char* kind() const override { return "dense"; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 2 || in[1] != in_)
      throw std::invalid_argument("dense: expected (B," + std::to_string(in_) + "), got " +
                                  shape_str(in));
    return {in[0], out_};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) override {
    const Shape out_shape = output_shape(x.shape());
    x_ = x;
    Tensor<Scalar> y(out_shape);
    const Index batch = x.dim(0);
    auto ym = y.matrix(batch, out_);
    ym.noalias() = x.matrix(batch, in_) * w_.matrix(out_, in_).transpose();
    ym.rowwise() += b_.data().transpose();
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool need_input_grad) override {
    const Index batch = x_.dim(0);
    const auto dym = dy.matrix(batch, out_);
    dw_.matrix(out_, in_).noalias() = dym.transpose() * x_.matrix(batch, in_);
    db_.data() = dym.colwise().sum().transpose();
    if (!need_input_grad) return Tensor<Scalar>();
    Tensor<Scalar> dx(x_.shape());
    dx.matrix(batch, in_).noalias() = dym * w_.matrix(out_, in_);
    return dx;
  }

  std::vector<Tensor<Scalar>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<Scalar>*> grads() override { return {&dw_, &db_}; }

  Index fan_in() const { return in_; }

 private:
  Index in_, out_;
  Tensor<Scalar> w_, b_, dw_, db_;
  Tensor<Scalar> x_;
};

}  // namespace pfedpt
