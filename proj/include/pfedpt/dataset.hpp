#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pfedpt/tensor.hpp"

namespace pfedpt {

enum class Split { Train, Test };

/// An immutable image-classification split. Pixels live either as raw bytes
/// (as loaded) or as normalized floats; normalize() moves between the two.
struct Dataset {
  Shape image;  // (C,H,W)
  int num_classes = 0;
  Split split = Split::Train;
  bool normalized = false;
  std::vector<std::uint8_t> raw;  // N * C*H*W, when !normalized
  std::vector<float> values;      // N * C*H*W, when normalized
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index pixels() const { return image[0] * image[1] * image[2]; }

  /// Batch tensor (B,C,H,W) from sample indices; requires normalized data.
  Tensor<float> gather(std::span<const int> indices) const;
};

/// Standard CIFAR-10 binary batches: per record one label byte then 3072
/// pixel bytes (1024 R, 1024 G, 1024 B, each row-major). Expects
/// data_batch_{1..5}.bin and test_batch.bin under `dir`. File sizes must be
/// a positive multiple of the 3073-byte record.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

/// CIFAR-100 variant: records carry a coarse then a fine label byte; the
/// fine label is kept. Expects train.bin and test.bin.
std::pair<Dataset, Dataset> load_cifar100(const std::string& dir);

/// Per channel: (pixel/255 - 0.5) / 0.5, mapping bytes onto [-1, 1].
Dataset normalize(const Dataset& ds);

struct SyntheticConfig {
  int classes = 10;
  Shape shape = {3, 16, 16};  // (C,H,W)
  int n_per_class = 100;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

/// Seeded class-template dataset: class k's samples are a fixed template
/// pattern plus Gaussian pixel noise. Train and test use disjoint
/// sub-seeds of the same generator. Emitted already normalized.
std::pair<Dataset, Dataset> make_synthetic(const SyntheticConfig& cfg);

}  // namespace pfedpt
