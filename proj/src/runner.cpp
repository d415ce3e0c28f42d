#include "pfedpt/runner.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "pfedpt/checkpoint.hpp"
#include "pfedpt/reports.hpp"

namespace pfedpt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kArtifactVersion = "0.1.0";

void log(int verbosity, int level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= verbosity) std::cerr << "[" << names[level] << "] " << msg << "\n";
}

struct PreparedData {
  Dataset train, test;
  std::vector<ClientShard> shards;
};

PreparedData prepare_data(const ExperimentConfig& cfg, int verbosity) {
  PreparedData out;
  if (cfg.dataset_source == "synthetic") {
    auto [tr, te] = make_synthetic(cfg.synthetic);
    out.train = std::move(tr);
    out.test = std::move(te);
  } else {
    auto [tr, te] = cfg.dataset_source == "cifar10" ? load_cifar10(cfg.dataset_path)
                                                    : load_cifar100(cfg.dataset_path);
    log(verbosity, 2, "loaded " + cfg.dataset_source + ": " + std::to_string(tr.size()) +
                          " train / " + std::to_string(te.size()) + " test");
    if (cfg.normalize_input) {
      out.train = normalize(tr);
      out.test = normalize(te);
    } else {
      out.train = std::move(tr);
      out.test = std::move(te);
    }
  }
  out.shards = partition(out.train, out.test, cfg.partition);
  return out;
}

std::string safe_tag(const std::string& tag) {
  std::string s = tag;
  for (auto& c : s)
    if (c == '+') c = '_';
  return s;
}

std::vector<std::string> planned_outputs(const ExperimentConfig& cfg) {
  std::vector<std::string> files;
  const int fed_clients =
      cfg.partition.num_clients - (cfg.output.emit_finetune ? 1 : 0);
  for (const auto& tag : cfg.algorithms) {
    const std::string t = safe_tag(tag);
    if (cfg.output.emit_round_csv) files.push_back("rounds_" + t + ".csv");
    if (cfg.output.emit_drift && parse_algorithm(tag).prompted)
      files.push_back("drift_" + t + ".csv");
    if (cfg.output.emit_checkpoints) {
      files.push_back("model_" + t + ".ckpt");
      if (parse_algorithm(tag).prompted)
        for (int i = 0; i < fed_clients; ++i)
          files.push_back("prompt_" + t + "_client" + std::to_string(i) + ".ckpt");
    }
    if (cfg.output.emit_embeddings) files.push_back("embeddings_" + t + ".csv");
  }
  if (cfg.output.emit_probe) files.push_back("similarity.csv");
  if (cfg.output.emit_shards) files.push_back("shards.csv");
  if (cfg.output.emit_summary) files.push_back("summary.json");
  if (cfg.output.emit_manifest) files.push_back("manifest.json");
  if (cfg.output.emit_finetune) files.push_back("finetune.csv");
  return files;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("run: cannot write " + path.string());
  return out;
}

}  // namespace

void run(const ExperimentConfig& cfg_in, const RunOverrides& over) {
  ExperimentConfig cfg = cfg_in;
  if (!over.out_dir.empty()) cfg.output.dir = over.out_dir;
  if (over.overwrite) cfg.output.overwrite = true;
  if (over.workers > 0) cfg.train.workers = over.workers;
  const int verbosity = over.verbosity;

  const fs::path dir(cfg.output.dir);
  fs::create_directories(dir);
  const auto files = planned_outputs(cfg);
  if (!cfg.output.overwrite)
    for (const auto& f : files)
      if (fs::exists(dir / f))
        throw std::runtime_error("run: refusing to overwrite " + (dir / f).string() +
                                 " (enable output.overwrite or pass --overwrite)");

  PreparedData data = prepare_data(cfg, verbosity);
  log(verbosity, 2, "partitioned " + std::to_string(data.train.size()) + " train samples over " +
                        std::to_string(data.shards.size()) + " clients (" +
                        to_string(cfg.partition.scheme) + ")");

  // The finetune probe holds the highest-id client out of the federation.
  std::optional<ClientShard> holdout;
  FederatedData fed{&data.train, &data.test, data.shards};
  if (cfg.output.emit_finetune) {
    holdout = fed.shards.back();
    fed.shards.pop_back();
    cfg.train.num_clients = static_cast<int>(fed.shards.size());
    log(verbosity, 2, "holding client " + std::to_string(holdout->client_id) +
                          " out for new-client fine-tuning");
  }

  if (cfg.output.emit_shards) {
    auto out = open_output(dir / "shards.csv");
    write_shard_manifest_csv(out, data.shards);
  }

  json summary;
  summary["algorithms"] = json::object();
  std::vector<SimilarityRow> similarity_rows;

  for (const auto& tag : cfg.algorithms) {
    const AlgorithmSpec alg = parse_algorithm(tag);
    TrainConfig tc = cfg.train;
    tc.algorithm = tag;
    std::optional<PromptSpec> pspec;
    if (alg.prompted) pspec = cfg.prompt;

    std::ofstream round_out;
    if (cfg.output.emit_round_csv) {
      round_out = open_output(dir / ("rounds_" + safe_tag(tag) + ".csv"));
      write_round_csv_header(round_out);
    }
    auto on_round = [&](const RoundReport& r) {
      if (round_out.is_open()) {
        append_round_csv(round_out, r);
        round_out.flush();
      }
      if (r.round % 10 == 0 || verbosity >= 3)
        log(verbosity, r.round % 10 == 0 ? 2 : 3,
            tag + ": round " + std::to_string(r.round) + "/" + std::to_string(tc.rounds) +
                " weighted_acc=" + format_metric(r.weighted_acc));
    };

    log(verbosity, 2, "running " + tag + " for " + std::to_string(tc.rounds) + " rounds");
    RunResult result = run_experiment(tc, fed, cfg.model, pspec, on_round);

    summary["algorithms"][tag] = {{"rounds", tc.rounds},
                                  {"best_weighted_acc", result.best_weighted_acc},
                                  {"best_round", result.best_round},
                                  {"final_weighted_acc", result.final_weighted_acc}};

    if (cfg.output.emit_drift && alg.prompted) {
      auto out = open_output(dir / ("drift_" + safe_tag(tag) + ".csv"));
      write_drift_csv(out, result.rounds);
    }
    if (cfg.output.emit_checkpoints) {
      save_model_checkpoint((dir / ("model_" + safe_tag(tag) + ".ckpt")).string(), result.model,
                            cfg.model.tag());
      if (alg.prompted)
        for (const auto& c : result.clients)
          save_prompt_checkpoint(
              (dir / ("prompt_" + safe_tag(tag) + "_client" + std::to_string(c.id) + ".ckpt"))
                  .string(),
              *c.prompt);
    }
    if (cfg.output.emit_probe) {
      for (const auto& c : result.clients) {
        Network<float> net = client_eval_model(result, alg, cfg.model, c.id);
        Rng prng(derive_seed(cfg.train.seed,
                             {stream_tag("probe"), static_cast<std::uint64_t>(c.id)}));
        const VectorX<double> hist = pure_color_probe(net, c.prompt, cfg.output.probe_images,
                                                      cfg.model.input, std::move(prng));
        VectorX<double> label_hist = VectorX<double>::Zero(cfg.model.num_classes);
        for (size_t k = 0; k < c.shard->label_hist.size(); ++k)
          label_hist[static_cast<Index>(k)] = static_cast<double>(c.shard->label_hist[k]);
        label_hist /= label_hist.sum();
        similarity_rows.push_back({c.id, tag, distribution_similarity(hist, label_hist)});
      }
    }
    if (cfg.output.emit_embeddings) {
      auto out = open_output(dir / ("embeddings_" + safe_tag(tag) + ".csv"));
      bool header = false;
      for (const auto& c : result.clients) {
        const size_t n =
            std::min<size_t>(c.shard->test_idx.size(),
                             static_cast<size_t>(cfg.output.embeddings_per_client));
        if (n == 0) continue;
        std::vector<int> ids(c.shard->test_idx.begin(),
                             c.shard->test_idx.begin() + static_cast<std::ptrdiff_t>(n));
        Network<float> net = client_eval_model(result, alg, cfg.model, c.id);
        Rng erng(derive_seed(cfg.train.seed,
                             {stream_tag("embed"), static_cast<std::uint64_t>(c.id)}));
        const RowMatrix<float> emb =
            last_layer_embeddings(net, c.prompt, data.test, ids, std::move(erng));
        if (!header) {
          write_embeddings_header(out, emb.cols());
          header = true;
        }
        append_embeddings(out, c.id, ids, emb);
      }
    }
    if (cfg.output.emit_finetune && &tag == &cfg.algorithms.front()) {
      FinetuneConfig fc;
      fc.budget = std::min<int>(cfg.output.finetune_budget,
                                static_cast<int>(holdout->train_idx.size()));
      if (fc.budget < cfg.output.finetune_budget)
        log(verbosity, 1, "finetune budget clamped to shard size " + std::to_string(fc.budget));
      fc.epochs = cfg.output.finetune_epochs;
      fc.batch_size = cfg.train.batch_size;
      fc.prompt_lr = cfg.train.generator_lr;
      fc.head_lr = cfg.train.head_lr;
      fc.seed = derive_seed(cfg.train.seed, {stream_tag("finetune")});
      fc.prompt_spec = cfg.prompt;
      const FinetuneMode mode = finetune_mode_from(cfg.output.finetune_mode);
      const auto curve = finetune_new_client(result.model, cfg.model, data.train, data.test,
                                             *holdout, mode, fc);
      auto out = open_output(dir / "finetune.csv");
      write_finetune_csv(out, cfg.output.finetune_mode, curve);
    }
  }

  if (cfg.output.emit_probe) {
    auto out = open_output(dir / "similarity.csv");
    write_similarity_csv(out, similarity_rows);
  }

  if (cfg.algorithms.size() >= 2 && cfg.output.emit_summary) {
    json paired = json::object();
    const auto& base = cfg.algorithms.front();
    const double base_best = summary["algorithms"][base]["best_weighted_acc"].get<double>();
    for (size_t i = 1; i < cfg.algorithms.size(); ++i) {
      const auto& other = cfg.algorithms[i];
      paired[other + "_vs_" + base] =
          summary["algorithms"][other]["best_weighted_acc"].get<double>() - base_best;
    }
    summary["paired_best_acc_delta"] = paired;
  }

  if (cfg.output.emit_summary) {
    auto out = open_output(dir / "summary.json");
    out << summary.dump(2) << "\n";
  }
  if (cfg.output.emit_manifest) {
    const std::string canon = cfg.canonical_json();
    char hash[24];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canon)));
    json manifest;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["format_versions"] = {{"model_checkpoint", 1}, {"prompt_checkpoint", 1},
                                   {"round_csv", 1}};
    manifest["config_hash"] = hash;
    manifest["config"] = json::parse(canon);
    manifest["seeds"] = {{"global", cfg.train.seed},
                         {"dataset", cfg.synthetic.seed},
                         {"partition", cfg.partition.seed}};
    manifest["outputs"] = files;
    manifest["metrics"] = {
        {"drift", "mean |delta_t - delta_{t-1}| over mask support, sampled prompted clients"},
        {"similarity", "cosine"}};
    auto out = open_output(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
  }
  log(verbosity, 2, "done; outputs in " + dir.string());
}

std::vector<SweepPoint> sweep(const ExperimentConfig& cfg,
                              const std::vector<std::string>& templates,
                              const std::vector<Index>& sizes, const RunOverrides& over) {
  if (templates.empty() || sizes.empty())
    throw std::invalid_argument("sweep: empty template or size axis");
  PreparedData data = prepare_data(cfg, over.verbosity);
  FederatedData fed{&data.train, &data.test, data.shards};

  std::vector<SweepPoint> points;
  for (const auto& t : templates)
    for (Index p : sizes) {
      SweepPoint point;
      point.prompt_template = t;
      point.size = p;
      try {
        PromptSpec ps = cfg.prompt;
        ps.kind = prompt_template_from(t);
        ps.size = p;
        ps.validate();
        TrainConfig tc = cfg.train;
        if (over.workers > 0) tc.workers = over.workers;
        RunResult r = run_experiment(tc, fed, cfg.model, ps);
        point.ok = true;
        point.best_weighted_acc = r.best_weighted_acc;
        point.best_round = r.best_round;
      } catch (const std::exception& e) {
        point.error = e.what();
      }
      log(over.verbosity, 2,
          "sweep " + t + " p=" + std::to_string(p) + ": " +
              (point.ok ? "best=" + format_metric(point.best_weighted_acc) : point.error));
      points.push_back(std::move(point));
    }
  return points;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points) {
  out << "template,size,status,best_weighted_acc,best_round\n";
  for (const auto& p : points) {
    out << p.prompt_template << ',' << p.size << ',' << (p.ok ? "ok" : "error") << ',';
    if (p.ok) out << format_metric(p.best_weighted_acc);
    out << ',';
    if (p.ok) out << p.best_round;
    out << "\n";
  }
}

}  // namespace pfedpt
