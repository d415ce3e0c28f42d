#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pfedpt/analysis.hpp"
#include "pfedpt/dataset.hpp"
#include "pfedpt/model_zoo.hpp"
#include "pfedpt/param_vector.hpp"
#include "pfedpt/partition.hpp"
#include "pfedpt/prompt.hpp"

namespace pfedpt {

/// The federation's data: shared splits plus per-client shards.
struct FederatedData {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  std::vector<ClientShard> shards;
};

/// Algorithm-1 hyperparameters plus the per-algorithm extras.
struct TrainConfig {
  int rounds = 150;
  int num_clients = 50;
  double sample_fraction = 0.2;
  int batch_size = 16;
  int backbone_epochs = 5;   // E_b
  int generator_epochs = 5;  // E_g
  double backbone_lr = 0.005;
  double generator_lr = 1.0;
  std::string algorithm = "pfedpt";
  double prox_mu = 1e-4;
  double head_lr = 0.01;
  int head_epochs = 1;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

enum class BaseAlgorithm { FedAvg, FedProx, FedPer, FedRep, Local };

struct AlgorithmSpec {
  BaseAlgorithm base = BaseAlgorithm::FedAvg;
  bool prompted = false;  // pfedpt or a +PT plugin
  std::string tag;

  bool decoupled() const {
    return base == BaseAlgorithm::FedPer || base == BaseAlgorithm::FedRep;
  }
};

/// Parses "fedavg", "fedprox", "fedper", "fedrep", "local", "pfedpt" and
/// the "<base>+pt" plugin forms.
AlgorithmSpec parse_algorithm(const std::string& tag);

/// Wraps a base algorithm with the prompt plugin; only fedavg, fedprox,
/// fedper and fedrep accept it.
std::string attach_pt_plugin(const std::string& base);

/// Client-resident state across rounds. Private members (prompt, head,
/// local model) never appear in upload payloads.
struct ClientState {
  int id = -1;
  const ClientShard* shard = nullptr;
  std::optional<PromptState<float>> prompt;
  VectorX<float> head;  // decoupled algorithms only
  std::optional<ParameterVector<float>> local_model;
};

struct ClientRoundRecord {
  int client_id = -1;
  bool sampled = false;
  double train_loss = 0;
  double test_acc = 0;
  double prompt_drift = 0;
};

struct RoundReport {
  int round = -1;
  std::vector<int> sampled;
  std::vector<ClientRoundRecord> clients;
  double weighted_acc = 0;
  double mean_drift = 0;
  std::int64_t wall_ms = 0;
};

/// Fixed-size uniform sample without replacement: round(n * fraction)
/// distinct ids, ascending.
std::vector<int> sample_clients(int n, double fraction, Rng& rng);

/// Weighted elementwise average; weights are renormalized to sum 1 over
/// the given set.
ParameterVector<float> aggregate(const std::vector<ParameterVector<float>>& models,
                                 const std::vector<double>& weights);

struct LocalEnv {
  const FederatedData* data = nullptr;
  const ModelSpec* model = nullptr;
  const TrainConfig* cfg = nullptr;
  int round = 0;
  double* train_loss_out = nullptr;  // backbone-phase mean batch loss
};

/// Plain local ERM: E_b epochs of minibatch SGD on the raw shard.
ParameterVector<float> local_train_fedavg(ClientState& state, const ParameterVector<float>& w,
                                          const LocalEnv& env);

/// FedAvg plus the proximal pull (mu/2)||w - w_global||^2.
ParameterVector<float> local_train_fedprox(ClientState& state, const ParameterVector<float>& w,
                                           const LocalEnv& env);

/// Alternating prompt/backbone training: E_g prompt epochs with the
/// backbone frozen, then E_b backbone epochs on prompted inputs. Returns
/// the backbone only; delta persists in the client state.
ParameterVector<float> local_train_pfedpt(ClientState& state, const ParameterVector<float>& w,
                                          const LocalEnv& env);

enum class DecoupledVariant { FedPer, FedRep };

/// Body/head decoupled training. fedper trains body+head jointly; fedrep
/// trains the head first (head_epochs, head_lr) then the body with the
/// head frozen. Only the body is returned; the head stays in the state.
ParameterVector<float> local_train_decoupled(ClientState& state, const ParameterVector<float>& w,
                                             const LocalEnv& env, DecoupledVariant variant);

struct RunResult {
  std::vector<RoundReport> rounds;
  ParameterVector<float> model;  // final aggregated backbone (or body+init head)
  std::vector<ClientState> clients;
  double best_weighted_acc = 0;
  int best_round = -1;
  double final_weighted_acc = 0;
};

/// Runs T rounds of sample / broadcast / local train / aggregate, with
/// every client evaluated on its own test shard each round. The "local"
/// tag runs the same loop without aggregation or broadcast. Reports are
/// independent of the worker count.
RunResult run_experiment(const TrainConfig& cfg, const FederatedData& data,
                         const ModelSpec& model_spec, const std::optional<PromptSpec>& prompt_spec,
                         const std::function<void(const RoundReport&)>& on_round = {});

/// The model a given client evaluates with after a run: the aggregated
/// backbone, with the client's private head (decoupled) or its own local
/// model (local baseline) substituted.
Network<float> client_eval_model(const RunResult& result, const AlgorithmSpec& alg,
                                 const ModelSpec& model_spec, int client_id);

}  // namespace pfedpt
