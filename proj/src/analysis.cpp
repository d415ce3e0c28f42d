#include "pfedpt/analysis.hpp"

#include <algorithm>
#include <stdexcept>

namespace pfedpt {

namespace {

Index argmax_row(Eigen::Map<const RowMatrix<float>> m, Index r) {
  Index best = 0;
  for (Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return best;
}

std::vector<std::vector<int>> chunk(std::span<const int> idx, Index cap) {
  std::vector<std::vector<int>> out;
  for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(cap)) {
    const size_t n = std::min(static_cast<size_t>(cap), idx.size() - at);
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(at),
                     idx.begin() + static_cast<std::ptrdiff_t>(at + n));
  }
  return out;
}

}  // namespace

double evaluate_client(Network<float>& model, const std::optional<PromptState<float>>& prompt,
                       const Dataset& test, std::span<const int> test_idx, Rng eval_rng,
                       Index batch_cap) {
  if (test_idx.empty()) throw std::invalid_argument("evaluate_client: empty test shard");
  std::int64_t correct = 0;
  for (const auto& batch : chunk(test_idx, batch_cap)) {
    Tensor<float> x = test.gather(batch);
    if (prompt) x = apply_prompt(x, *prompt, eval_rng);
    Tensor<float> logits = model.forward(x);
    Eigen::Map<const RowMatrix<float>> lm(logits.raw(), logits.dim(0), logits.dim(1));
    for (Index r = 0; r < lm.rows(); ++r)
      correct += argmax_row(lm, r) == test.labels[static_cast<size_t>(batch[static_cast<size_t>(r)])];
  }
  return static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

double evaluate_client(const ParameterVector<float>& w, const ModelSpec& spec,
                       const std::optional<PromptState<float>>& prompt, const Dataset& test,
                       std::span<const int> test_idx, Rng eval_rng) {
  Network<float> net = build_model<float>(spec, 0);
  net.load_params(w);
  return evaluate_client(net, prompt, test, test_idx, std::move(eval_rng));
}

double prompt_drift(const PromptState<float>& prev, const PromptState<float>& curr) {
  if (prev.spec.kind != curr.spec.kind || prev.spec.size != curr.spec.size ||
      prev.spec.image != curr.spec.image)
    throw std::invalid_argument("prompt_drift: spec mismatch");
  if (prev.param_count() == 0) return 0.0;
  const VectorX<float> a = prev.packed(), b = curr.packed();
  return (b - a).cast<double>().cwiseAbs().mean();
}

VectorX<double> pure_color_probe(Network<float>& model,
                                 const std::optional<PromptState<float>>& prompt, int n_images,
                                 const Shape& shape, Rng rng) {
  if (n_images < 1) throw std::invalid_argument("pure_color_probe: n_images must be >= 1");
  if (shape.size() != 3) throw std::invalid_argument("pure_color_probe: shape must be (C,H,W)");
  const Index c = shape[0], hw = shape[1] * shape[2];
  Tensor<float> x(Shape{n_images, shape[0], shape[1], shape[2]});
  Rng colors = rng.child(stream_tag("colors"));
  for (Index b = 0; b < n_images; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const float v = static_cast<float>(colors.uniform(-1.0, 1.0));
      float* plane = x.raw() + (b * c + ch) * hw;
      std::fill(plane, plane + hw, v);
    }
  if (prompt) {
    Rng arng = rng.child(stream_tag("anchor"));
    x = apply_prompt(x, *prompt, arng);
  }
  Tensor<float> logits = model.forward(x);
  Eigen::Map<const RowMatrix<float>> lm(logits.raw(), logits.dim(0), logits.dim(1));
  VectorX<double> hist = VectorX<double>::Zero(lm.cols());
  for (Index r = 0; r < lm.rows(); ++r) hist[argmax_row(lm, r)] += 1.0;
  return hist / static_cast<double>(n_images);
}

double distribution_similarity(const VectorX<double>& a, const VectorX<double>& b,
                               const std::string& metric) {
  if (metric != "cosine")
    throw std::invalid_argument("distribution_similarity: unknown metric '" + metric + "'");
  if (a.size() != b.size())
    throw std::invalid_argument("distribution_similarity: histogram size mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("distribution_similarity: zero histogram");
  return a.dot(b) / (na * nb);
}

FinetuneMode finetune_mode_from(const std::string& s) {
  if (s == "prompt-only") return FinetuneMode::PromptOnly;
  if (s == "head-only") return FinetuneMode::HeadOnly;
  throw std::invalid_argument("finetune: unknown mode '" + s + "'");
}

const char* to_string(FinetuneMode m) {
  return m == FinetuneMode::PromptOnly ? "prompt-only" : "head-only";
}

std::vector<double> finetune_new_client(const ParameterVector<float>& w, const ModelSpec& spec,
                                        const Dataset& train, const Dataset& test,
                                        const ClientShard& shard, FinetuneMode mode,
                                        const FinetuneConfig& cfg) {
  if (cfg.budget < 1 || cfg.budget > static_cast<int>(shard.train_idx.size()))
    throw std::invalid_argument("finetune: budget must be in [1, shard size]");
  if (mode == FinetuneMode::PromptOnly && !cfg.prompt_spec)
    throw std::invalid_argument("finetune: prompt-only mode needs a prompt spec");

  Network<float> net = build_model<float>(spec, 0);
  net.load_params(w);
  const Rng root(derive_seed(cfg.seed, {stream_tag("finetune")}));

  std::vector<int> pool = shard.train_idx;
  Rng srng = root.child(stream_tag("subsample"));
  for (size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[static_cast<size_t>(srng.uniform_int(i))]);
  pool.resize(static_cast<size_t>(cfg.budget));

  std::optional<PromptState<float>> prompt;
  if (mode == FinetuneMode::PromptOnly)
    prompt = init_prompt<float>(*cfg.prompt_spec, 0, shard.client_id);

  auto lay = net.layout();
  auto head_only = [&](size_t bi) { return lay->blocks[bi].offset >= lay->body_size; };

  std::vector<double> curve;
  curve.push_back(
      evaluate_client(net, prompt, test, shard.test_idx, root.child(stream_tag("eval"), 0)));

  for (int e = 0; e < cfg.epochs; ++e) {
    Rng erng = root.child(stream_tag("epoch"), static_cast<std::uint64_t>(e));
    std::vector<int> order = pool;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(i))]);
    Rng arng = root.child(stream_tag("anchor"), static_cast<std::uint64_t>(e));
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t n = std::min(static_cast<size_t>(cfg.batch_size), order.size() - at);
      std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(at + n));
      std::vector<int> ys(batch.size());
      for (size_t i = 0; i < batch.size(); ++i)
        ys[i] = train.labels[static_cast<size_t>(batch[i])];
      Tensor<float> x = train.gather(batch);
      if (mode == FinetuneMode::PromptOnly) {
        const PromptAnchor anchor = draw_anchor(prompt->spec, arng);
        Tensor<float> xp = apply_prompt_at(x, *prompt, anchor);
        forward_loss(net, xp, ys);
        auto bw = backward(net, /*need_input_grad=*/true);
        *prompt = prompt_grad_step(*prompt, prompt_gradient(*prompt, bw.input, anchor),
                                   cfg.prompt_lr);
      } else {
        forward_loss(net, x, ys);
        auto bw = backward(net);
        net.apply_sgd(bw.params, cfg.head_lr, head_only);
      }
    }
    curve.push_back(evaluate_client(net, prompt, test, shard.test_idx,
                                    root.child(stream_tag("eval"), static_cast<std::uint64_t>(e + 1))));
  }
  return curve;
}

RowMatrix<float> last_layer_embeddings(Network<float>& model,
                                       const std::optional<PromptState<float>>& prompt,
                                       const Dataset& ds, std::span<const int> idx, Rng rng) {
  if (idx.empty()) throw std::invalid_argument("embeddings: empty index set");
  Tensor<float> x = ds.gather(idx);
  if (prompt) x = apply_prompt(x, *prompt, rng);
  Tensor<float> feat = model.penultimate(x);
  const Index rows = feat.dim(0);
  const Index cols = feat.size() / rows;
  return Eigen::Map<const RowMatrix<float>>(feat.raw(), rows, cols);
}

}  // namespace pfedpt
