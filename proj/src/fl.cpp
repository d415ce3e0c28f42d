#include "pfedpt/fl.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace pfedpt {

void TrainConfig::validate() const {
  if (rounds < 0) throw std::invalid_argument("train: rounds must be >= 0");
  if (num_clients < 1) throw std::invalid_argument("train: num_clients must be >= 1");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
    throw std::invalid_argument("train: sample_fraction must be in (0,1]");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (backbone_epochs < 0 || generator_epochs < 0 || head_epochs < 0)
    throw std::invalid_argument("train: epochs must be >= 0");
  if (backbone_lr < 0 || generator_lr < 0 || head_lr < 0)
    throw std::invalid_argument("train: learning rates must be >= 0");
  if (prox_mu < 0) throw std::invalid_argument("train: prox_mu must be >= 0");
  if (workers < 1) throw std::invalid_argument("train: workers must be >= 1");
  parse_algorithm(algorithm);
}

AlgorithmSpec parse_algorithm(const std::string& tag) {
  AlgorithmSpec s;
  s.tag = tag;
  std::string base = tag;
  if (tag.size() > 3 && tag.substr(tag.size() - 3) == "+pt") {
    s.prompted = true;
    base = tag.substr(0, tag.size() - 3);
    if (base != "fedavg" && base != "fedprox" && base != "fedper" && base != "fedrep")
      throw std::invalid_argument("algorithm: '" + base + "' does not accept the +pt plugin");
  }
  if (base == "pfedpt") {
    s.base = BaseAlgorithm::FedAvg;
    s.prompted = true;
  } else if (base == "fedavg")
    s.base = BaseAlgorithm::FedAvg;
  else if (base == "fedprox")
    s.base = BaseAlgorithm::FedProx;
  else if (base == "fedper")
    s.base = BaseAlgorithm::FedPer;
  else if (base == "fedrep")
    s.base = BaseAlgorithm::FedRep;
  else if (base == "local")
    s.base = BaseAlgorithm::Local;
  else
    throw std::invalid_argument("algorithm: unknown tag '" + tag + "'");
  return s;
}

std::string attach_pt_plugin(const std::string& base) {
  if (base != "fedavg" && base != "fedprox" && base != "fedper" && base != "fedrep")
    throw std::invalid_argument("attach_pt_plugin: unsupported base '" + base + "'");
  return base + "+pt";
}

std::vector<int> sample_clients(int n, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("sample_clients: fraction must be in (0,1]");
  const int k = std::min(n, std::max<int>(1, static_cast<int>(std::lround(n * fraction))));
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
  }
  ids.resize(static_cast<size_t>(k));
  std::sort(ids.begin(), ids.end());
  return ids;
}

ParameterVector<float> aggregate(const std::vector<ParameterVector<float>>& models,
                                 const std::vector<double>& weights) {
  if (models.empty()) throw std::invalid_argument("aggregate: no models");
  if (models.size() != weights.size())
    throw std::invalid_argument("aggregate: model/weight count mismatch");
  double sum = 0;
  for (double w : weights) {
    if (w < 0) throw std::invalid_argument("aggregate: weights must be >= 0");
    sum += w;
  }
  if (sum <= 0) throw std::invalid_argument("aggregate: weights sum to zero");
  const Index n = models.front().size();
  for (const auto& m : models)
    if (m.size() != n) throw std::invalid_argument("aggregate: length mismatch");

  ParameterVector<float> out(VectorX<float>::Zero(n), models.front().layout);
  for (size_t k = 0; k < models.size(); ++k)
    out.values += static_cast<float>(weights[k] / sum) * models[k].values;
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr err;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int w = std::min(workers, n);
  pool.reserve(static_cast<size_t>(w));
  for (int i = 0; i < w; ++i) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

std::vector<std::vector<int>> epoch_batches(const std::vector<int>& idx, int batch_size, Rng rng) {
  std::vector<int> order = idx;
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(i))]);
  std::vector<std::vector<int>> batches;
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(static_cast<size_t>(batch_size), order.size() - at);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(at + n));
  }
  return batches;
}

std::vector<int> batch_labels(const Dataset& ds, const std::vector<int>& batch) {
  std::vector<int> ys(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) ys[i] = ds.labels[static_cast<size_t>(batch[i])];
  return ys;
}

struct PhaseStreams {
  std::uint64_t shuffle_tag, anchor_tag;
};
constexpr PhaseStreams kGenPhase{stream_tag("gen-shuffle"), stream_tag("gen-anchor")};
constexpr PhaseStreams kBackbonePhase{stream_tag("bb-shuffle"), stream_tag("bb-anchor")};
constexpr PhaseStreams kHeadPhase{stream_tag("head-shuffle"), stream_tag("head-anchor")};

struct TrainerCtx {
  const LocalEnv& env;
  ClientState& state;

  const Dataset& train() const { return *env.data->train; }
  const TrainConfig& cfg() const { return *env.cfg; }
  Rng stream(std::uint64_t tag, int epoch) const {
    return Rng(derive_seed(cfg().seed, {tag, static_cast<std::uint64_t>(state.id),
                                        static_cast<std::uint64_t>(env.round),
                                        static_cast<std::uint64_t>(epoch)}));
  }
};

/// E_g epochs of SGD on delta with every model parameter frozen.
void run_prompt_phase(const TrainerCtx& ctx, Network<float>& net) {
  auto& prompt = *ctx.state.prompt;
  for (int e = 0; e < ctx.cfg().generator_epochs; ++e) {
    Rng arng = ctx.stream(kGenPhase.anchor_tag, e);
    for (const auto& batch :
         epoch_batches(ctx.state.shard->train_idx, ctx.cfg().batch_size,
                       ctx.stream(kGenPhase.shuffle_tag, e))) {
      const PromptAnchor anchor = draw_anchor(prompt.spec, arng);
      Tensor<float> x = apply_prompt_at(ctx.train().gather(batch), prompt, anchor);
      forward_loss(net, x, batch_labels(ctx.train(), batch));
      auto bw = backward(net, /*need_input_grad=*/true);
      prompt = prompt_grad_step(prompt, prompt_gradient(prompt, bw.input, anchor),
                                ctx.cfg().generator_lr);
    }
  }
}

/// One model-update phase (minibatch SGD over `epochs`); applies the
/// frozen client prompt when present. `grad_hook` may add regularizer
/// terms; `trainable` restricts the updated blocks. Returns the mean batch
/// loss.
double run_model_phase(const TrainerCtx& ctx, Network<float>& net, PhaseStreams streams,
                       int epochs, double lr, bool prompted,
                       const std::function<bool(size_t)>& trainable = nullptr,
                       const std::function<void(Gradients<float>&)>& grad_hook = nullptr) {
  double loss_sum = 0;
  std::int64_t batches = 0;
  for (int e = 0; e < epochs; ++e) {
    Rng arng = ctx.stream(streams.anchor_tag, e);
    for (const auto& batch : epoch_batches(ctx.state.shard->train_idx, ctx.cfg().batch_size,
                                           ctx.stream(streams.shuffle_tag, e))) {
      Tensor<float> x = ctx.train().gather(batch);
      if (prompted) x = apply_prompt_at(x, *ctx.state.prompt, draw_anchor(ctx.state.prompt->spec, arng));
      const auto fl = forward_loss(net, x, batch_labels(ctx.train(), batch));
      loss_sum += fl.loss;
      ++batches;
      auto bw = backward(net);
      if (grad_hook) grad_hook(bw.params);
      net.apply_sgd(bw.params, lr, trainable);
    }
  }
  return batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
}

void record_loss(const LocalEnv& env, double loss) {
  if (env.train_loss_out) *env.train_loss_out = loss;
}

}  // namespace

ParameterVector<float> local_train_fedavg(ClientState& state, const ParameterVector<float>& w,
                                          const LocalEnv& env) {
  Network<float> net = build_model<float>(*env.model, 0);
  net.load_params(w);
  TrainerCtx ctx{env, state};
  record_loss(env, run_model_phase(ctx, net, kBackbonePhase, env.cfg->backbone_epochs,
                                   env.cfg->backbone_lr, /*prompted=*/false));
  return net.flatten_params();
}

ParameterVector<float> local_train_fedprox(ClientState& state, const ParameterVector<float>& w,
                                           const LocalEnv& env) {
  Network<float> net = build_model<float>(*env.model, 0);
  net.load_params(w);
  TrainerCtx ctx{env, state};
  const float mu = static_cast<float>(env.cfg->prox_mu);
  std::function<void(Gradients<float>&)> prox;
  if (mu != 0.0f)
    prox = [&](Gradients<float>& g) { g.values += mu * (net.flatten_params().values - w.values); };
  record_loss(env, run_model_phase(ctx, net, kBackbonePhase, env.cfg->backbone_epochs,
                                   env.cfg->backbone_lr, /*prompted=*/false, nullptr, prox));
  return net.flatten_params();
}

ParameterVector<float> local_train_pfedpt(ClientState& state, const ParameterVector<float>& w,
                                          const LocalEnv& env) {
  if (!state.prompt) throw std::logic_error("pfedpt: client has no prompt state");
  Network<float> net = build_model<float>(*env.model, 0);
  net.load_params(w);
  TrainerCtx ctx{env, state};
  run_prompt_phase(ctx, net);
  record_loss(env, run_model_phase(ctx, net, kBackbonePhase, env.cfg->backbone_epochs,
                                   env.cfg->backbone_lr, /*prompted=*/true));
  return net.flatten_params();
}

ParameterVector<float> local_train_decoupled(ClientState& state, const ParameterVector<float>& w,
                                             const LocalEnv& env, DecoupledVariant variant) {
  Network<float> net = build_model<float>(*env.model, 0);
  auto lay = net.layout();
  if (state.head.size() != lay->total - lay->body_size)
    throw std::logic_error("decoupled: client head not initialized");

  ParameterVector<float> assembled = w;
  assembled.values.tail(state.head.size()) = state.head;
  net.load_params(assembled);

  TrainerCtx ctx{env, state};
  const bool prompted = state.prompt.has_value();
  if (prompted) run_prompt_phase(ctx, net);

  auto in_head = [lay](size_t bi) { return lay->blocks[bi].offset >= lay->body_size; };
  auto in_body = [lay](size_t bi) { return lay->blocks[bi].offset < lay->body_size; };

  if (variant == DecoupledVariant::FedRep)
    run_model_phase(ctx, net, kHeadPhase, env.cfg->head_epochs, env.cfg->head_lr, prompted,
                    in_head);
  const std::function<bool(size_t)> trainable =
      variant == DecoupledVariant::FedPer ? std::function<bool(size_t)>(nullptr)
                                          : std::function<bool(size_t)>(in_body);
  record_loss(env, run_model_phase(ctx, net, kBackbonePhase, env.cfg->backbone_epochs,
                                   env.cfg->backbone_lr, prompted, trainable));

  ParameterVector<float> full = net.flatten_params();
  state.head = full.values.tail(state.head.size());
  ParameterVector<float> body(VectorX<float>(full.values.head(lay->body_size)), nullptr);
  return body;
}

RunResult run_experiment(const TrainConfig& cfg, const FederatedData& data,
                         const ModelSpec& model_spec, const std::optional<PromptSpec>& prompt_spec,
                         const std::function<void(const RoundReport&)>& on_round) {
  cfg.validate();
  model_spec.validate();
  const AlgorithmSpec alg = parse_algorithm(cfg.algorithm);
  if (static_cast<int>(data.shards.size()) != cfg.num_clients)
    throw std::invalid_argument("run_experiment: shard count " +
                                std::to_string(data.shards.size()) + " != num_clients " +
                                std::to_string(cfg.num_clients));
  if (alg.prompted && !prompt_spec)
    throw std::invalid_argument("run_experiment: algorithm '" + cfg.algorithm +
                                "' needs a prompt spec");
  if (!data.train || !data.test || !data.train->normalized)
    throw std::invalid_argument("run_experiment: normalized train/test datasets required");

  Network<float> proto = build_model<float>(model_spec, derive_seed(cfg.seed, {stream_tag("model-init")}));
  ParameterVector<float> w = proto.flatten_params();
  const auto lay = proto.layout();
  const Index head_size = lay->total - lay->body_size;

  RunResult result;
  result.clients.resize(data.shards.size());
  for (size_t i = 0; i < data.shards.size(); ++i) {
    auto& c = result.clients[i];
    c.id = static_cast<int>(i);
    c.shard = &data.shards[i];
    if (alg.prompted)
      c.prompt = init_prompt<float>(*prompt_spec, derive_seed(cfg.seed, {stream_tag("prompt"), i}),
                                    c.id);
    if (alg.decoupled()) c.head = w.values.tail(head_size);
    if (alg.base == BaseAlgorithm::Local) c.local_model = w;
  }

  double total_train = 0;
  for (const auto& s : data.shards) total_train += static_cast<double>(s.train_idx.size());

  for (int round = 0; round < cfg.rounds; ++round) {
    const auto t0 = Clock::now();
    Rng srng(derive_seed(cfg.seed, {stream_tag("sample"), static_cast<std::uint64_t>(round)}));
    const std::vector<int> sampled = sample_clients(cfg.num_clients, cfg.sample_fraction, srng);

    std::vector<ParameterVector<float>> uploads(sampled.size());
    std::vector<double> losses(sampled.size(), 0.0);
    std::vector<double> drifts(sampled.size(), 0.0);
    parallel_for(static_cast<int>(sampled.size()), cfg.workers, [&](int k) {
      ClientState& st = result.clients[static_cast<size_t>(sampled[static_cast<size_t>(k)])];
      LocalEnv env{&data, &model_spec, &cfg, round, &losses[static_cast<size_t>(k)]};
      std::optional<PromptState<float>> before;
      if (st.prompt) before = *st.prompt;
      switch (alg.base) {
        case BaseAlgorithm::FedAvg:
          uploads[static_cast<size_t>(k)] =
              alg.prompted ? local_train_pfedpt(st, w, env) : local_train_fedavg(st, w, env);
          break;
        case BaseAlgorithm::FedProx: {
          if (alg.prompted) {
            // prompt phase, then the proximal backbone phase on prompted inputs
            Network<float> net = build_model<float>(model_spec, 0);
            net.load_params(w);
            TrainerCtx ctx{env, st};
            run_prompt_phase(ctx, net);
            const float mu = static_cast<float>(cfg.prox_mu);
            std::function<void(Gradients<float>&)> prox;
            if (mu != 0.0f)
              prox = [&](Gradients<float>& g) {
                g.values += mu * (net.flatten_params().values - w.values);
              };
            losses[static_cast<size_t>(k)] =
                run_model_phase(ctx, net, kBackbonePhase, cfg.backbone_epochs, cfg.backbone_lr,
                                /*prompted=*/true, nullptr, prox);
            uploads[static_cast<size_t>(k)] = net.flatten_params();
          } else {
            uploads[static_cast<size_t>(k)] = local_train_fedprox(st, w, env);
          }
          break;
        }
        case BaseAlgorithm::FedPer:
          uploads[static_cast<size_t>(k)] =
              local_train_decoupled(st, w, env, DecoupledVariant::FedPer);
          break;
        case BaseAlgorithm::FedRep:
          uploads[static_cast<size_t>(k)] =
              local_train_decoupled(st, w, env, DecoupledVariant::FedRep);
          break;
        case BaseAlgorithm::Local: {
          uploads[static_cast<size_t>(k)] = local_train_fedavg(st, *st.local_model, env);
          st.local_model = uploads[static_cast<size_t>(k)];
          break;
        }
      }
      if (st.prompt) drifts[static_cast<size_t>(k)] = prompt_drift(*before, *st.prompt);
    });

    if (alg.base != BaseAlgorithm::Local) {
      std::vector<double> agg_weights(sampled.size());
      for (size_t k = 0; k < sampled.size(); ++k)
        agg_weights[k] =
            static_cast<double>(data.shards[static_cast<size_t>(sampled[k])].train_idx.size());
      if (alg.decoupled()) {
        ParameterVector<float> body = aggregate(uploads, agg_weights);
        w.values.head(lay->body_size) = body.values;
      } else {
        ParameterVector<float> agg = aggregate(uploads, agg_weights);
        w.values = agg.values;
      }
    }

    std::vector<double> accs(result.clients.size(), 0.0);
    parallel_for(static_cast<int>(result.clients.size()), cfg.workers, [&](int i) {
      ClientState& st = result.clients[static_cast<size_t>(i)];
      Network<float> net = build_model<float>(model_spec, 0);
      if (alg.base == BaseAlgorithm::Local) {
        net.load_params(*st.local_model);
      } else if (alg.decoupled()) {
        ParameterVector<float> v = w;
        v.values.tail(head_size) = st.head;
        net.load_params(v);
      } else {
        net.load_params(w);
      }
      Rng erng(derive_seed(cfg.seed, {stream_tag("eval"), static_cast<std::uint64_t>(round),
                                      static_cast<std::uint64_t>(i)}));
      accs[static_cast<size_t>(i)] =
          evaluate_client(net, st.prompt, *data.test, st.shard->test_idx, std::move(erng));
    });

    RoundReport report;
    report.round = round;
    report.sampled = sampled;
    report.clients.resize(result.clients.size());
    double weighted = 0;
    for (size_t i = 0; i < result.clients.size(); ++i) {
      auto& rec = report.clients[i];
      rec.client_id = static_cast<int>(i);
      rec.test_acc = accs[i];
      weighted += accs[i] * static_cast<double>(data.shards[i].train_idx.size()) / total_train;
    }
    double drift_sum = 0;
    for (size_t k = 0; k < sampled.size(); ++k) {
      auto& rec = report.clients[static_cast<size_t>(sampled[k])];
      rec.sampled = true;
      rec.train_loss = losses[k];
      rec.prompt_drift = drifts[k];
      drift_sum += drifts[k];
    }
    report.weighted_acc = weighted;
    report.mean_drift = alg.prompted && !sampled.empty()
                            ? drift_sum / static_cast<double>(sampled.size())
                            : 0.0;
    report.wall_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();

    if (weighted > result.best_weighted_acc || result.best_round < 0) {
      result.best_weighted_acc = weighted;
      result.best_round = round;
    }
    result.final_weighted_acc = weighted;
    if (on_round) on_round(report);
    result.rounds.push_back(std::move(report));
  }

  result.model = std::move(w);
  result.model.layout = lay;
  return result;
}

Network<float> client_eval_model(const RunResult& result, const AlgorithmSpec& alg,
                                 const ModelSpec& model_spec, int client_id) {
  const ClientState& st = result.clients.at(static_cast<size_t>(client_id));
  Network<float> net = build_model<float>(model_spec, 0);
  if (alg.base == BaseAlgorithm::Local) {
    net.load_params(*st.local_model);
  } else if (alg.decoupled()) {
    ParameterVector<float> v = result.model;
    v.values.tail(st.head.size()) = st.head;
    net.load_params(v);
  } else {
    net.load_params(result.model);
  }
  return net;
}

}  // namespace pfedpt
