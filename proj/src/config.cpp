#include "pfedpt/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pfedpt {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, std::string msg) {
  // inner validators often prefix their own domain; avoid "model: model:"
  const auto colon = msg.find(": ");
  if (colon != std::string::npos && msg.compare(0, colon, path.substr(0, colon)) == 0)
    msg = msg.substr(colon + 2);
  throw std::invalid_argument("config: " + path + ": " + msg);
}

/// Typed field access with key-path diagnostics and unknown-key rejection.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_, "expected an object");
  }

  ~Section() = default;

  bool has(const char* key) const { return node_.contains(key); }

  template <typename T>
  T get(const char* key, T fallback) {
    touch(key);
    if (!node_.contains(key)) return fallback;
    return read<T>(key);
  }

  template <typename T>
  std::optional<T> get_optional(const char* key) {
    touch(key);
    if (!node_.contains(key)) return std::nullopt;
    return read<T>(key);
  }

  json raw(const char* key) {
    touch(key);
    return node_.at(key);
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (!seen_.count(it.key())) fail(path_ + "." + it.key(), "unknown key");
  }

  const std::string& path() const { return path_; }

 private:
  void touch(const char* key) { seen_.insert(key); }

  template <typename T>
  T read(const char* key) {
    try {
      return node_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(path_ + "." + key, "wrong type");
    }
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

Shape read_shape(Section& sec, const char* key, Shape fallback) {
  if (!sec.has(key)) return fallback;
  const json arr = sec.raw(key);
  if (!arr.is_array() || arr.size() != 3) fail(sec.path() + "." + key, "expected [C,H,W]");
  Shape s;
  for (const auto& v : arr) {
    if (!v.is_number_integer() || v.get<Index>() <= 0)
      fail(sec.path() + "." + key, "extents must be positive integers");
    s.push_back(v.get<Index>());
  }
  return s;
}

ExperimentConfig parse_json(const json& root) {
  if (!root.is_object()) throw std::invalid_argument("config: top level must be an object");
  ExperimentConfig cfg;
  std::set<std::string> blocks;

  // train comes first: its seed feeds the derived defaults elsewhere.
  if (root.contains("train")) {
    blocks.insert("train");
    Section t(root.at("train"), "train");
    cfg.train.rounds = t.get<int>("rounds", cfg.train.rounds);
    cfg.train.sample_fraction = t.get<double>("sample_fraction", cfg.train.sample_fraction);
    cfg.train.batch_size = t.get<int>("batch_size", cfg.train.batch_size);
    cfg.train.backbone_epochs = t.get<int>("backbone_epochs", cfg.train.backbone_epochs);
    cfg.train.generator_epochs = t.get<int>("generator_epochs", cfg.train.generator_epochs);
    cfg.train.backbone_lr = t.get<double>("backbone_lr", cfg.train.backbone_lr);
    cfg.train.generator_lr = t.get<double>("generator_lr", cfg.train.generator_lr);
    cfg.train.prox_mu = t.get<double>("prox_mu", cfg.train.prox_mu);
    cfg.train.head_lr = t.get<double>("head_lr", cfg.train.head_lr);
    cfg.train.head_epochs = t.get<int>("head_epochs", cfg.train.head_epochs);
    cfg.train.seed = t.get<std::uint64_t>("seed", cfg.train.seed);
    cfg.train.workers = t.get<int>("workers", cfg.train.workers);
    if (t.has("algorithm")) {
      const json a = t.raw("algorithm");
      if (a.is_string())
        cfg.algorithms = {a.get<std::string>()};
      else if (a.is_array()) {
        for (const auto& v : a) {
          if (!v.is_string()) fail("train.algorithm", "expected a tag or list of tags");
          cfg.algorithms.push_back(v.get<std::string>());
        }
      } else
        fail("train.algorithm", "expected a tag or list of tags");
    }
    t.finish();
  }
  if (cfg.algorithms.empty()) cfg.algorithms = {cfg.train.algorithm};
  cfg.train.algorithm = cfg.algorithms.front();
  if (cfg.train.rounds < 0) fail("train.rounds", "rounds must be >= 0");
  if (!(cfg.train.sample_fraction > 0 && cfg.train.sample_fraction <= 1))
    fail("train.sample_fraction", "sample_fraction must be in (0,1]");
  if (cfg.train.batch_size < 1) fail("train.batch_size", "batch_size must be >= 1");
  if (cfg.train.backbone_lr < 0 || cfg.train.generator_lr < 0 || cfg.train.head_lr < 0)
    fail("train.backbone_lr", "learning rates must be >= 0");
  if (cfg.train.workers < 1) fail("train.workers", "workers must be >= 1");
  for (const auto& tag : cfg.algorithms) {
    try {
      parse_algorithm(tag);
    } catch (const std::exception& e) {
      fail("train.algorithm", e.what());
    }
  }

  cfg.synthetic.seed = derive_seed(cfg.train.seed, {stream_tag("dataset")});
  if (root.contains("dataset")) {
    blocks.insert("dataset");
    Section d(root.at("dataset"), "dataset");
    cfg.dataset_source = d.get<std::string>("source", cfg.dataset_source);
    cfg.dataset_path = d.get<std::string>("path", cfg.dataset_path);
    cfg.synthetic.classes = d.get<int>("classes", cfg.synthetic.classes);
    cfg.synthetic.shape = read_shape(d, "shape", cfg.synthetic.shape);
    cfg.synthetic.n_per_class = d.get<int>("n_per_class", cfg.synthetic.n_per_class);
    cfg.synthetic.noise_sigma = d.get<double>("noise_sigma", cfg.synthetic.noise_sigma);
    cfg.synthetic.seed = d.get<std::uint64_t>("seed", cfg.synthetic.seed);
    cfg.normalize_input = d.get<bool>("normalize", cfg.normalize_input);
    d.finish();
  }
  if (cfg.dataset_source != "synthetic" && cfg.dataset_source != "cifar10" &&
      cfg.dataset_source != "cifar100")
    fail("dataset.source", "expected synthetic, cifar10 or cifar100");
  if (cfg.dataset_source == "synthetic") {
    if (cfg.synthetic.classes < 2) fail("dataset.classes", "classes must be >= 2");
    if (cfg.synthetic.n_per_class < 1) fail("dataset.n_per_class", "n_per_class must be >= 1");
    if (cfg.synthetic.noise_sigma < 0) fail("dataset.noise_sigma", "noise_sigma must be >= 0");
  } else if (cfg.dataset_path.empty()) {
    if (const char* env = std::getenv("PFEDPT_DATA_ROOT")) cfg.dataset_path = env;
    if (cfg.dataset_path.empty())
      fail("dataset.path", "required for " + cfg.dataset_source +
                               " (or set PFEDPT_DATA_ROOT)");
  }

  const Shape data_shape =
      cfg.dataset_source == "synthetic" ? cfg.synthetic.shape : Shape{3, 32, 32};
  const int data_classes = cfg.dataset_source == "synthetic" ? cfg.synthetic.classes
                           : cfg.dataset_source == "cifar10" ? 10
                                                             : 100;

  cfg.partition.seed = derive_seed(cfg.train.seed, {stream_tag("partition")});
  if (root.contains("partition")) {
    blocks.insert("partition");
    Section p(root.at("partition"), "partition");
    if (auto s = p.get_optional<std::string>("scheme")) {
      try {
        cfg.partition.scheme = partition_scheme_from(*s);
      } catch (const std::exception& e) {
        fail("partition.scheme", e.what());
      }
    }
    cfg.partition.alpha = p.get<double>("alpha", cfg.partition.alpha);
    cfg.partition.classes_per_client =
        p.get<int>("classes_per_client", cfg.partition.classes_per_client);
    cfg.partition.num_clients = p.get<int>("num_clients", cfg.partition.num_clients);
    cfg.partition.seed = p.get<std::uint64_t>("seed", cfg.partition.seed);
    cfg.partition.min_samples = p.get<int>("min_samples", cfg.partition.min_samples);
    cfg.partition.max_retries = p.get<int>("max_retries", cfg.partition.max_retries);
    p.finish();
  }
  if (cfg.partition.scheme == PartitionScheme::Dirichlet && !(cfg.partition.alpha > 0))
    fail("partition.alpha", "alpha must be positive");
  try {
    cfg.partition.validate(data_classes);
  } catch (const std::exception& e) {
    fail("partition", e.what());
  }
  cfg.train.num_clients = cfg.partition.num_clients;

  cfg.model.input = data_shape;
  cfg.model.num_classes = data_classes;
  cfg.model.architecture = "cnn-paper";
  if (root.contains("model")) {
    blocks.insert("model");
    Section m(root.at("model"), "model");
    cfg.model.architecture = m.get<std::string>("architecture", cfg.model.architecture);
    cfg.model.num_classes = m.get<int>("num_classes", cfg.model.num_classes);
    cfg.model.conv_channels = m.get<Index>("conv_channels", cfg.model.conv_channels);
    cfg.model.fc1_units = m.get<Index>("fc1_units", cfg.model.fc1_units);
    cfg.model.fc2_units = m.get<Index>("fc2_units", cfg.model.fc2_units);
    cfg.model.mlp_hidden = m.get<Index>("mlp_hidden", cfg.model.mlp_hidden);
    m.finish();
  }
  if (cfg.model.num_classes != data_classes)
    fail("model.num_classes", "must match the dataset's " + std::to_string(data_classes) +
                                  " classes");
  try {
    cfg.model.validate();
  } catch (const std::exception& e) {
    fail("model", e.what());
  }

  cfg.prompt.image = data_shape;
  if (root.contains("prompt")) {
    blocks.insert("prompt");
    Section pr(root.at("prompt"), "prompt");
    if (auto t = pr.get_optional<std::string>("template")) {
      try {
        cfg.prompt.kind = prompt_template_from(*t);
      } catch (const std::exception& e) {
        fail("prompt.template", e.what());
      }
    }
    cfg.prompt.size = pr.get<Index>("size", cfg.prompt.size);
    if (auto m = pr.get_optional<std::string>("mode")) {
      if (*m == "add")
        cfg.prompt.mode = PromptMode::Add;
      else if (*m == "replace")
        cfg.prompt.mode = PromptMode::Replace;
      else
        fail("prompt.mode", "expected add or replace");
    }
    pr.finish();
  }
  bool prompt_needed = false;
  for (const auto& tag : cfg.algorithms) prompt_needed |= parse_algorithm(tag).prompted;
  if (prompt_needed || root.contains("prompt")) {
    try {
      cfg.prompt.validate();
    } catch (const std::exception& e) {
      fail("prompt.size", e.what());
    }
  }

  if (root.contains("output")) {
    blocks.insert("output");
    Section o(root.at("output"), "output");
    auto& out = cfg.output;
    out.dir = o.get<std::string>("dir", out.dir);
    out.overwrite = o.get<bool>("overwrite", out.overwrite);
    out.emit_round_csv = o.get<bool>("emit_round_csv", out.emit_round_csv);
    out.emit_summary = o.get<bool>("emit_summary", out.emit_summary);
    out.emit_manifest = o.get<bool>("emit_manifest", out.emit_manifest);
    out.emit_checkpoints = o.get<bool>("emit_checkpoints", out.emit_checkpoints);
    out.emit_shards = o.get<bool>("emit_shards", out.emit_shards);
    out.emit_drift = o.get<bool>("emit_drift", out.emit_drift);
    out.emit_probe = o.get<bool>("emit_probe", out.emit_probe);
    out.probe_images = o.get<int>("probe_images", out.probe_images);
    out.emit_embeddings = o.get<bool>("emit_embeddings", out.emit_embeddings);
    out.embeddings_per_client = o.get<int>("embeddings_per_client", out.embeddings_per_client);
    out.emit_finetune = o.get<bool>("emit_finetune", out.emit_finetune);
    out.finetune_budget = o.get<int>("finetune_budget", out.finetune_budget);
    out.finetune_epochs = o.get<int>("finetune_epochs", out.finetune_epochs);
    out.finetune_mode = o.get<std::string>("finetune_mode", out.finetune_mode);
    o.finish();
    if (out.probe_images < 1) fail("output.probe_images", "must be >= 1");
    if (out.finetune_budget < 1) fail("output.finetune_budget", "must be >= 1");
    if (out.finetune_mode != "prompt-only" && out.finetune_mode != "head-only")
      fail("output.finetune_mode", "expected prompt-only or head-only");
  }
  if (cfg.output.emit_finetune && cfg.partition.num_clients < 2)
    fail("output.emit_finetune", "needs at least 2 clients (one is held out)");

  for (auto it = root.begin(); it != root.end(); ++it)
    if (!blocks.count(it.key()) && it.key() != "train") fail(it.key(), "unknown key");

  return cfg;
}

}  // namespace

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["dataset"] = {{"source", dataset_source},
                  {"path", dataset_path},
                  {"classes", synthetic.classes},
                  {"shape", synthetic.shape},
                  {"n_per_class", synthetic.n_per_class},
                  {"noise_sigma", synthetic.noise_sigma},
                  {"seed", synthetic.seed},
                  {"normalize", normalize_input}};
  j["partition"] = {{"scheme", to_string(partition.scheme)},
                    {"alpha", partition.alpha},
                    {"classes_per_client", partition.classes_per_client},
                    {"num_clients", partition.num_clients},
                    {"seed", partition.seed},
                    {"min_samples", partition.min_samples},
                    {"max_retries", partition.max_retries}};
  j["model"] = {{"architecture", model.architecture},
                {"num_classes", model.num_classes},
                {"conv_channels", model.conv_channels},
                {"fc1_units", model.fc1_units},
                {"fc2_units", model.fc2_units},
                {"mlp_hidden", model.mlp_hidden}};
  j["prompt"] = {{"template", to_string(prompt.kind)},
                 {"size", prompt.size},
                 {"mode", prompt.mode == PromptMode::Add ? "add" : "replace"}};
  j["train"] = {{"algorithm", algorithms},
                {"rounds", train.rounds},
                {"sample_fraction", train.sample_fraction},
                {"batch_size", train.batch_size},
                {"backbone_epochs", train.backbone_epochs},
                {"generator_epochs", train.generator_epochs},
                {"backbone_lr", train.backbone_lr},
                {"generator_lr", train.generator_lr},
                {"prox_mu", train.prox_mu},
                {"head_lr", train.head_lr},
                {"head_epochs", train.head_epochs},
                {"seed", train.seed}};
  // workers and output wiring are execution details, not experiment
  // identity, so they stay out of the fingerprint.
  return j.dump();
}

ExperimentConfig parse_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("config: cannot open " + file);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + file + " is not valid JSON: " + e.what());
  }
  return parse_json(root);
}

ExperimentConfig parse_config_text(const std::string& json_text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_json(root);
}

}  // namespace pfedpt
