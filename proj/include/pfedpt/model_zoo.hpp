#pragma once

#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pfedpt/network.hpp"
#include "pfedpt/rng.hpp"

namespace pfedpt {

/// Architecture description. Width fields default to the reference
/// backbone (64 conv filters, 394/192 fc units); tests shrink them to keep
/// finite-difference sweeps tractable.
struct ModelSpec {
  std::string architecture = "cnn-paper";  // cnn-paper | mlp-tiny
  Shape input;                             // (C,H,W)
  int num_classes = 10;

  Index conv_channels = 64;
  Index fc1_units = 394;
  Index fc2_units = 192;
  Index mlp_hidden = 64;  // 0 = linear softmax model

  void validate() const {
    if (architecture != "cnn-paper" && architecture != "mlp-tiny")
      throw std::invalid_argument("model: unknown architecture '" + architecture + "'");
    if (input.size() != 3) throw std::invalid_argument("model: input shape must be (C,H,W)");
    for (Index e : input)
      if (e <= 0) throw std::invalid_argument("model: input extents must be positive");
    if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
    if (architecture == "cnn-paper") {
      // Two valid 5x5 convolutions with 2x2 pools need >= 16 pixels a side.
      if (input[1] < 16 || input[2] < 16)
        throw std::invalid_argument("model: input " + shape_str(input) +
                                    " spatially too small for two conv+pool stages");
      if (conv_channels <= 0 || fc1_units <= 0 || fc2_units <= 0)
        throw std::invalid_argument("model: widths must be positive");
    }
    if (architecture == "mlp-tiny" && mlp_hidden < 0)
      throw std::invalid_argument("model: mlp_hidden must be >= 0");
  }

  std::string tag() const {
    std::ostringstream os;
    os << architecture << ":" << input[0] << "x" << input[1] << "x" << input[2] << ":"
       << num_classes;
    if (architecture == "cnn-paper")
      os << ":c" << conv_channels << ",f" << fc1_units << "," << fc2_units;
    else
      os << ":h" << mlp_hidden;
    return os.str();
  }
};

/// Index split between the shared body and the private head (the final
/// linear layer).
struct BodyHeadSplit {
  Index body_size = 0;
  Index head_size = 0;
  Index total() const { return body_size + head_size; }
};

namespace detail {

template <typename Scalar>
void init_fan_in_uniform(Layer<Scalar>& layer, Index fan_in, Rng rng) {
  auto ps = layer.params();
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<Scalar>& w = *ps[0];
  for (Index i = 0; i < w.size(); ++i)
    w[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  ps[1]->data().setZero();
}

}  // namespace detail

/// Builds the backbone with seeded fan-in-scaled uniform weights and zero
/// biases.
///   cnn-paper: conv(c,5x5) > pool > conv(c,5x5) > pool > fc > fc > fc
///   mlp-tiny : flatten > fc(hidden) > relu > fc(classes)
template <typename Scalar>
Network<Scalar> build_model(const ModelSpec& spec, std::uint64_t init_seed) {
  spec.validate();
  Network<Scalar> net;
  const Rng root(derive_seed(init_seed, {stream_tag("init")}));
  const Index c = spec.input[0], h = spec.input[1], w = spec.input[2];

  if (spec.architecture == "cnn-paper") {
    const Index oc = spec.conv_channels;
    const Index h1 = (h - 4) / 2, w1 = (w - 4) / 2;
    const Index h2 = (h1 - 4) / 2, w2 = (w1 - 4) / 2;
    const Index feat = oc * h2 * w2;

    auto conv1 = std::make_unique<Conv2d<Scalar>>(c, oc, 5);
    detail::init_fan_in_uniform(*conv1, conv1->fan_in(), root.child(0));
    net.add(std::move(conv1), "conv1");
    net.add(std::make_unique<Relu<Scalar>>(), "relu1");
    net.add(std::make_unique<MaxPool2x2<Scalar>>(), "pool1");

    auto conv2 = std::make_unique<Conv2d<Scalar>>(oc, oc, 5);
    detail::init_fan_in_uniform(*conv2, conv2->fan_in(), root.child(1));
    net.add(std::move(conv2), "conv2");
    net.add(std::make_unique<Relu<Scalar>>(), "relu2");
    net.add(std::make_unique<MaxPool2x2<Scalar>>(), "pool2");

    net.add(std::make_unique<Flatten<Scalar>>(), "flatten");
    auto fc1 = std::make_unique<Dense<Scalar>>(feat, spec.fc1_units);
    detail::init_fan_in_uniform(*fc1, fc1->fan_in(), root.child(2));
    net.add(std::move(fc1), "fc1");
    net.add(std::make_unique<Relu<Scalar>>(), "relu3");
    auto fc2 = std::make_unique<Dense<Scalar>>(spec.fc1_units, spec.fc2_units);
    detail::init_fan_in_uniform(*fc2, fc2->fan_in(), root.child(3));
    net.add(std::move(fc2), "fc2");
    net.add(std::make_unique<Relu<Scalar>>(), "relu4");
    auto fc3 = std::make_unique<Dense<Scalar>>(spec.fc2_units, spec.num_classes);
    detail::init_fan_in_uniform(*fc3, fc3->fan_in(), root.child(4));
    net.add(std::move(fc3), "fc3");
    return net;
  }

  // mlp-tiny
  const Index features = c * h * w;
  net.add(std::make_unique<Flatten<Scalar>>(), "flatten");
  if (spec.mlp_hidden > 0) {
    auto fc1 = std::make_unique<Dense<Scalar>>(features, spec.mlp_hidden);
    detail::init_fan_in_uniform(*fc1, fc1->fan_in(), root.child(0));
    net.add(std::move(fc1), "fc1");
    net.add(std::make_unique<Relu<Scalar>>(), "relu1");
    auto fc2 = std::make_unique<Dense<Scalar>>(spec.mlp_hidden, spec.num_classes);
    detail::init_fan_in_uniform(*fc2, fc2->fan_in(), root.child(1));
    net.add(std::move(fc2), "fc2");
  } else {
    auto fc = std::make_unique<Dense<Scalar>>(features, spec.num_classes);
    detail::init_fan_in_uniform(*fc, fc->fan_in(), root.child(0));
    net.add(std::move(fc), "fc1");
  }
  return net;
}

template <typename Scalar>
BodyHeadSplit split_body_head(const Network<Scalar>& model) {
  auto lay = model.layout();
  return {lay->body_size, lay->total - lay->body_size};
}

}  // namespace pfedpt
