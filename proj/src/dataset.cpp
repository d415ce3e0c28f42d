#include "pfedpt/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "pfedpt/rng.hpp"

namespace pfedpt {

namespace {

constexpr Index kCifarPixels = 3 * 32 * 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: missing file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

/// Appends the records of one CIFAR-style batch file. `label_bytes` is 1
/// for CIFAR-10 and 2 for CIFAR-100 (coarse byte skipped).
void append_batch(Dataset& ds, const std::filesystem::path& path, int label_bytes) {
  const auto bytes = read_file(path);
  const size_t record = static_cast<size_t>(label_bytes) + kCifarPixels;
  if (bytes.empty() || bytes.size() % record != 0)
    throw std::runtime_error("dataset: wrong size for " + path.string() + " (" +
                             std::to_string(bytes.size()) + " bytes, record is " +
                             std::to_string(record) + ")");
  const size_t n = bytes.size() / record;
  ds.raw.reserve(ds.raw.size() + n * kCifarPixels);
  ds.labels.reserve(ds.labels.size() + n);
  for (size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    const int label = rec[label_bytes - 1];
    if (label >= ds.num_classes)
      throw std::runtime_error("dataset: label byte " + std::to_string(label) + " out of range in " +
                               path.string());
    ds.labels.push_back(label);
    ds.raw.insert(ds.raw.end(), rec + label_bytes, rec + record);
  }
}

Dataset cifar_shell(int classes, Split split) {
  Dataset ds;
  ds.image = {3, 32, 32};
  ds.num_classes = classes;
  ds.split = split;
  ds.normalized = false;
  return ds;
}

}  // namespace

Tensor<float> Dataset::gather(std::span<const int> indices) const {
  if (!normalized) throw std::logic_error("dataset: gather requires normalized data");
  const Index px = pixels();
  Tensor<float> out(Shape{static_cast<Index>(indices.size()), image[0], image[1], image[2]});
  float* dst = out.raw();
  for (int idx : indices) {
    if (idx < 0 || idx >= size()) throw std::out_of_range("dataset: index out of range");
    const float* src = values.data() + static_cast<size_t>(idx) * px;
    std::copy(src, src + px, dst);
    dst += px;
  }
  return out;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset train = cifar_shell(10, Split::Train);
  for (int i = 1; i <= 5; ++i)
    append_batch(train, fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin"), 1);
  Dataset test = cifar_shell(10, Split::Test);
  append_batch(test, fs::path(dir) / "test_batch.bin", 1);
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_cifar100(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset train = cifar_shell(100, Split::Train);
  append_batch(train, fs::path(dir) / "train.bin", 2);
  Dataset test = cifar_shell(100, Split::Test);
  append_batch(test, fs::path(dir) / "test.bin", 2);
  return {std::move(train), std::move(test)};
}

Dataset normalize(const Dataset& ds) {
  if (ds.normalized) throw std::logic_error("dataset: already normalized");
  Dataset out;
  out.image = ds.image;
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  out.labels = ds.labels;
  out.normalized = true;
  out.values.resize(ds.raw.size());
  for (size_t i = 0; i < ds.raw.size(); ++i)
    out.values[i] = static_cast<float>(ds.raw[i]) / 127.5f - 1.0f;
  return out;
}

std::pair<Dataset, Dataset> make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.classes < 2) throw std::invalid_argument("synthetic: classes must be >= 2");
  if (cfg.shape.size() != 3) throw std::invalid_argument("synthetic: shape must be (C,H,W)");
  if (cfg.n_per_class < 1) throw std::invalid_argument("synthetic: n_per_class must be >= 1");
  if (cfg.noise_sigma < 0) throw std::invalid_argument("synthetic: noise_sigma must be >= 0");

  const Index px = cfg.shape[0] * cfg.shape[1] * cfg.shape[2];
  const Rng root(derive_seed(cfg.seed, {stream_tag("synthetic")}));

  std::vector<std::vector<float>> templates(static_cast<size_t>(cfg.classes));
  for (int k = 0; k < cfg.classes; ++k) {
    Rng trng = root.child(stream_tag("template"), static_cast<std::uint64_t>(k));
    auto& t = templates[static_cast<size_t>(k)];
    t.resize(static_cast<size_t>(px));
    for (Index i = 0; i < px; ++i) t[static_cast<size_t>(i)] = static_cast<float>(trng.uniform(-1.0, 1.0));
  }

  auto build = [&](Split split, std::uint64_t tag) {
    Dataset ds;
    ds.image = cfg.shape;
    ds.num_classes = cfg.classes;
    ds.split = split;
    ds.normalized = true;
    ds.values.reserve(static_cast<size_t>(cfg.classes) * cfg.n_per_class * px);
    ds.labels.reserve(static_cast<size_t>(cfg.classes) * cfg.n_per_class);
    for (int k = 0; k < cfg.classes; ++k) {
      const auto& t = templates[static_cast<size_t>(k)];
      for (int j = 0; j < cfg.n_per_class; ++j) {
        Rng srng = root.child(tag, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(j));
        for (Index i = 0; i < px; ++i)
          ds.values.push_back(t[static_cast<size_t>(i)] +
                              static_cast<float>(cfg.noise_sigma * srng.normal()));
        ds.labels.push_back(k);
      }
    }
    return ds;
  };

  return {build(Split::Train, stream_tag("train")), build(Split::Test, stream_tag("test"))};
}

}  // namespace pfedpt
