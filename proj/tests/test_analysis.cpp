#include <doctest.h>

#include <algorithm>

#include "pfedpt/analysis.hpp"
#include "pfedpt/fl.hpp"

using namespace pfedpt;

namespace {

struct Fixture {
  Dataset train, test;
  std::vector<ClientShard> shards;
  ModelSpec model;

  explicit Fixture(double sigma, int per_class = 20, int clients = 2) {
    SyntheticConfig sc;
    sc.classes = 4;
    sc.shape = {1, 6, 6};
    sc.n_per_class = per_class;
    sc.noise_sigma = sigma;
    sc.seed = 5;
    auto [tr, te] = make_synthetic(sc);
    train = std::move(tr);
    test = std::move(te);

    PartitionConfig pc;
    pc.scheme = PartitionScheme::Iid;
    pc.num_clients = clients;
    pc.seed = 6;
    pc.min_samples = 1;
    shards = partition(train, test, pc);

    model.architecture = "mlp-tiny";
    model.input = sc.shape;
    model.num_classes = 4;
    model.mlp_hidden = 0;
  }
};

PromptSpec small_prompt(Shape image) {
  PromptSpec s;
  s.kind = PromptTemplate::Padding;
  s.size = 1;
  s.image = std::move(image);
  return s;
}

}  // namespace

TEST_CASE("evaluate_client") {
  Fixture fx(0.5);
  Network<float> net = build_model<float>(fx.model, 0);
  const auto zeros = ParameterVector<float>(
      VectorX<float>::Zero(net.parameter_count()), net.layout());
  net.load_params(zeros);  // all-zero logits, argmax ties resolve to class 0

  const auto& shard = fx.shards[0];
  std::int64_t class0 = 0;
  for (int i : shard.test_idx) class0 += fx.test.labels[static_cast<size_t>(i)] == 0;

  SUBCASE("constant predictor scores the class fraction") {
    const double acc = evaluate_client(net, std::nullopt, fx.test, shard.test_idx, Rng(1));
    CHECK(acc == doctest::Approx(static_cast<double>(class0) / shard.test_idx.size()));
  }
  SUBCASE("accuracy is invariant to shard ordering") {
    std::vector<int> reversed(shard.test_idx.rbegin(), shard.test_idx.rend());
    CHECK(evaluate_client(net, std::nullopt, fx.test, shard.test_idx, Rng(1)) ==
          evaluate_client(net, std::nullopt, fx.test, reversed, Rng(1)));
  }
  SUBCASE("a zero prompt evaluates exactly like no prompt") {
    Network<float> trained = build_model<float>(fx.model, 8);
    const auto prompt = init_prompt<float>(small_prompt(fx.model.input), 0);
    CHECK(evaluate_client(trained, prompt, fx.test, shard.test_idx, Rng(2)) ==
          evaluate_client(trained, std::nullopt, fx.test, shard.test_idx, Rng(2)));
  }
  SUBCASE("empty shards are rejected") {
    const std::vector<int> empty;
    CHECK_THROWS_AS(evaluate_client(net, std::nullopt, fx.test, empty, Rng(1)),
                    std::invalid_argument);
  }
}

TEST_CASE("a converged model on noiseless synthetic data is perfect") {
  Fixture fx(0.0, 24, 2);
  FederatedData fed{&fx.train, &fx.test, fx.shards};
  TrainConfig cfg;
  cfg.rounds = 12;
  cfg.num_clients = 2;
  cfg.sample_fraction = 1.0;
  cfg.batch_size = 16;
  cfg.backbone_epochs = 3;
  cfg.generator_epochs = 0;
  cfg.backbone_lr = 0.2;
  cfg.algorithm = "fedavg";
  cfg.seed = 17;
  const auto result = run_experiment(cfg, fed, fx.model, std::nullopt);
  CHECK(result.best_weighted_acc == 1.0);
}

TEST_CASE("prompt_drift") {
  auto a = init_prompt<float>(small_prompt({1, 6, 6}), 0);
  auto b = a;
  CHECK(prompt_drift(a, b) == 0.0);

  VectorX<float> shift = VectorX<float>::Constant(a.param_count(), -0.75f);
  b.unpack(shift);  // delta_curr = delta_prev + c on every mask entry
  CHECK(prompt_drift(a, b) == doctest::Approx(0.75));

  auto other = init_prompt<float>(small_prompt({1, 8, 8}), 0);
  CHECK_THROWS_AS(prompt_drift(a, other), std::invalid_argument);
}

TEST_CASE("pure_color_probe") {
  Fixture fx(0.5);
  Network<float> net = build_model<float>(fx.model, 0);

  SUBCASE("histogram is normalized and deterministic in the seed") {
    Network<float> trained = build_model<float>(fx.model, 3);
    const auto h1 = pure_color_probe(trained, std::nullopt, 100, fx.model.input, Rng(9));
    const auto h2 = pure_color_probe(trained, std::nullopt, 100, fx.model.input, Rng(9));
    CHECK(h1.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(h1 == h2);
  }
  SUBCASE("a constant-output model yields a one-hot histogram") {
    net.load_params(
        ParameterVector<float>(VectorX<float>::Zero(net.parameter_count()), net.layout()));
    const auto h = pure_color_probe(net, std::nullopt, 32, fx.model.input, Rng(4));
    CHECK(h[0] == 1.0);
    CHECK(h.sum() == 1.0);
  }
  SUBCASE("prompts are applied to the probe images") {
    Network<float> trained = build_model<float>(fx.model, 3);
    auto prompt = init_prompt<float>(small_prompt(fx.model.input), 0);
    VectorX<float> big = VectorX<float>::Constant(prompt.param_count(), 40.0f);
    prompt.unpack(big);
    const auto base = pure_color_probe(trained, std::nullopt, 64, fx.model.input, Rng(9));
    const auto prompted = pure_color_probe(trained, prompt, 64, fx.model.input, Rng(9));
    CHECK(base != prompted);
  }
}

TEST_CASE("distribution_similarity") {
  VectorX<double> a(3), b(3), z(3);
  a << 0.5, 0.5, 0.0;
  b << 0.0, 0.0, 1.0;
  z.setZero();
  CHECK(distribution_similarity(a, a) == doctest::Approx(1.0));
  CHECK(distribution_similarity(a, b) == doctest::Approx(0.0));
  CHECK_THROWS_AS(distribution_similarity(a, z), std::invalid_argument);
  CHECK_THROWS_AS(distribution_similarity(a, b, "hellinger"), std::invalid_argument);
  VectorX<double> c(2);
  c << 1.0, 0.0;
  CHECK_THROWS_AS(distribution_similarity(a, c), std::invalid_argument);
}

TEST_CASE("finetune_new_client") {
  Fixture fx(0.6, 30, 3);
  const auto& shard = fx.shards[2];
  Network<float> proto = build_model<float>(fx.model, 21);
  const auto w = proto.flatten_params();

  FinetuneConfig cfg;
  cfg.budget = std::min<int>(20, static_cast<int>(shard.train_idx.size()));
  cfg.epochs = 2;
  cfg.seed = 30;
  cfg.prompt_spec = small_prompt(fx.model.input);

  SUBCASE("zero epochs start at the unadapted accuracy") {
    FinetuneConfig c0 = cfg;
    c0.epochs = 0;
    const auto curve = finetune_new_client(w, fx.model, fx.train, fx.test, shard,
                                           FinetuneMode::PromptOnly, c0);
    REQUIRE(curve.size() == 1);
    Network<float> net = build_model<float>(fx.model, 0);
    net.load_params(w);
    const auto zero_prompt = init_prompt<float>(*cfg.prompt_spec, 0);
    // padding prompts never consume the eval stream, so any rng matches
    const double unadapted = evaluate_client(net, zero_prompt, fx.test, shard.test_idx, Rng(0));
    CHECK(curve[0] == unadapted);
  }
  SUBCASE("prompt-only with zero lr never moves (backbone frozen, prompt frozen)") {
    FinetuneConfig c0 = cfg;
    c0.prompt_lr = 0.0;
    c0.epochs = 3;
    const VectorX<float> w_before = w.values;
    const auto curve = finetune_new_client(w, fx.model, fx.train, fx.test, shard,
                                           FinetuneMode::PromptOnly, c0);
    for (double v : curve) CHECK(v == curve[0]);
    CHECK(w.values == w_before);  // the backbone vector is untouched
  }
  SUBCASE("head-only training moves the accuracy") {
    FinetuneConfig ch = cfg;
    ch.epochs = 4;
    ch.head_lr = 0.1;
    const auto curve = finetune_new_client(w, fx.model, fx.train, fx.test, shard,
                                           FinetuneMode::HeadOnly, ch);
    CHECK(curve.size() == 5);
    CHECK(curve.back() != curve.front());
  }
  SUBCASE("budget larger than the shard is rejected") {
    FinetuneConfig cb = cfg;
    cb.budget = static_cast<int>(shard.train_idx.size()) + 1;
    CHECK_THROWS_AS(finetune_new_client(w, fx.model, fx.train, fx.test, shard,
                                        FinetuneMode::PromptOnly, cb),
                    std::invalid_argument);
  }
  SUBCASE("prompt-only mode requires a prompt spec") {
    FinetuneConfig cb = cfg;
    cb.prompt_spec.reset();
    CHECK_THROWS_AS(finetune_new_client(w, fx.model, fx.train, fx.test, shard,
                                        FinetuneMode::PromptOnly, cb),
                    std::invalid_argument);
  }
}

TEST_CASE("last_layer_embeddings exposes penultimate features") {
  Fixture fx(0.4);
  ModelSpec spec = fx.model;
  spec.mlp_hidden = 8;
  Network<float> net = build_model<float>(spec, 2);
  const std::vector<int> idx = {0, 1, 2};
  const auto emb = last_layer_embeddings(net, std::nullopt, fx.test, idx, Rng(1));
  CHECK(emb.rows() == 3);
  CHECK(emb.cols() == 8);
  const auto again = last_layer_embeddings(net, std::nullopt, fx.test, idx, Rng(1));
  CHECK(emb == again);
}
