#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfedpt/dataset.hpp"
#include "pfedpt/model_zoo.hpp"
#include "pfedpt/network.hpp"
#include "pfedpt/partition.hpp"
#include "pfedpt/prompt.hpp"

namespace pfedpt {

/// Argmax accuracy on a test shard; the client prompt, when present, is
/// applied to every test image. Ties resolve to the lowest class index.
double evaluate_client(Network<float>& model, const std::optional<PromptState<float>>& prompt,
                       const Dataset& test, std::span<const int> test_idx, Rng eval_rng,
                       Index batch_cap = 256);

/// Convenience overload building the model from a flat vector.
double evaluate_client(const ParameterVector<float>& w, const ModelSpec& spec,
                       const std::optional<PromptState<float>>& prompt, const Dataset& test,
                       std::span<const int> test_idx, Rng eval_rng);

/// Mean absolute delta difference over the mask support. Both states must
/// share a spec.
double prompt_drift(const PromptState<float>& prev, const PromptState<float>& curr);

/// Per-round mean drift, defined from round 1 onward.
struct DriftSeries {
  std::vector<double> values;
};

/// Classifies n constant-color images (channel values uniform over the
/// normalized range) through the prompted model; returns the normalized
/// predicted-class histogram.
VectorX<double> pure_color_probe(Network<float>& model,
                                 const std::optional<PromptState<float>>& prompt, int n_images,
                                 const Shape& shape, Rng rng);

/// Similarity between two normalized histograms; only "cosine" is
/// implemented. Cosine of nonnegative histograms lies in [0,1].
double distribution_similarity(const VectorX<double>& a, const VectorX<double>& b,
                               const std::string& metric = "cosine");

enum class FinetuneMode { PromptOnly, HeadOnly };

FinetuneMode finetune_mode_from(const std::string& s);
const char* to_string(FinetuneMode m);

struct FinetuneConfig {
  int budget = 400;  // adaptation samples drawn from the new client's shard
  int epochs = 10;
  int batch_size = 16;
  double prompt_lr = 1.0;
  double head_lr = 0.01;
  std::uint64_t seed = 0;
  std::optional<PromptSpec> prompt_spec;  // required for PromptOnly
};

/// Adapts a trained backbone to an unseen client, either by training a
/// fresh zero prompt (backbone frozen) or the final layer (rest frozen).
/// Returns the per-epoch test accuracy curve; entry 0 is unadapted.
std::vector<double> finetune_new_client(const ParameterVector<float>& w, const ModelSpec& spec,
                                        const Dataset& train, const Dataset& test,
                                        const ClientShard& shard, FinetuneMode mode,
                                        const FinetuneConfig& cfg);

/// Penultimate-layer activations for the given samples (row per sample),
/// prompt applied when present. Raw material for external embedding plots.
RowMatrix<float> last_layer_embeddings(Network<float>& model,
                                       const std::optional<PromptState<float>>& prompt,
                                       const Dataset& ds, std::span<const int> idx, Rng rng);

}  // namespace pfedpt
