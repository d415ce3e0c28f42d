#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pfedpt/dataset.hpp"
#include "pfedpt/fl.hpp"
#include "pfedpt/model_zoo.hpp"
#include "pfedpt/partition.hpp"
#include "pfedpt/prompt.hpp"

namespace pfedpt {

struct OutputConfig {
  std::string dir = "out";
  bool overwrite = false;
  bool emit_round_csv = true;
  bool emit_summary = true;
  bool emit_manifest = true;
  bool emit_checkpoints = false;
  bool emit_shards = false;
  bool emit_drift = true;
  bool emit_probe = false;
  int probe_images = 100;
  bool emit_embeddings = false;
  int embeddings_per_client = 32;
  bool emit_finetune = false;
  int finetune_budget = 400;
  int finetune_epochs = 10;
  std::string finetune_mode = "prompt-only";
};

/// Everything one experiment needs, wired and cross-validated. Unset keys
/// take the reference defaults (50 clients, 20% sampling, batch 16, five
/// epochs each phase, lr 0.005/1.0, padding prompt of size 4).
struct ExperimentConfig {
  std::string dataset_source = "synthetic";  // synthetic | cifar10 | cifar100
  std::string dataset_path;                  // cifar roots; env PFEDPT_DATA_ROOT fallback
  SyntheticConfig synthetic;
  bool normalize_input = true;

  PartitionConfig partition;
  ModelSpec model;
  PromptSpec prompt;
  TrainConfig train;
  std::vector<std::string> algorithms;  // >= 1; > 1 enables the paired summary
  OutputConfig output;

  /// Canonical serialized form; hashing it fingerprints the run.
  std::string canonical_json() const;
};

/// Parses and validates a config file. Unknown keys and constraint
/// violations raise with the offending key path in the message.
ExperimentConfig parse_config(const std::string& file);

/// Same, from in-memory JSON text.
ExperimentConfig parse_config_text(const std::string& json_text);

}  // namespace pfedpt
