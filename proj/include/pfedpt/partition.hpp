#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfedpt/dataset.hpp"

namespace pfedpt {

/// One client's view of the data: train/test index sets into the shared
/// splits, plus the train label histogram.
struct ClientShard {
  int client_id = -1;
  std::vector<int> train_idx;
  std::vector<int> test_idx;
  std::vector<std::int64_t> label_hist;  // over train_idx

  int classes_present() const {
    int n = 0;
    for (auto c : label_hist) n += c > 0;
    return n;
  }
};

enum class PartitionScheme { Iid, Dirichlet, Pathological };

PartitionScheme partition_scheme_from(const std::string& s);
const char* to_string(PartitionScheme s);

struct PartitionConfig {
  PartitionScheme scheme = PartitionScheme::Dirichlet;
  double alpha = 0.3;           // dirichlet concentration
  int classes_per_client = 5;   // pathological
  int num_clients = 50;
  std::uint64_t seed = 0;
  int min_samples = 10;  // per-client train floor; skewed draws are resampled
  int max_retries = 100;

  void validate(int num_classes) const;
};

/// Splits train/test into per-client shards.
///   iid          - uniform random near-equal split.
///   dirichlet    - per class, proportions over clients ~ Dir(alpha).
///   pathological - each client holds exactly classes_per_client classes;
///                  every held class is split evenly among its holders.
/// Test indices follow the same per-class client proportions as train, so
/// each client's test distribution matches its train distribution.
std::vector<ClientShard> partition(const Dataset& train, const Dataset& test,
                                   const PartitionConfig& cfg);

}  // namespace pfedpt
