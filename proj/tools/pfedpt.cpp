// pfedpt — federated-learning experiment runner.
//
//   pfedpt run   --config cfg.json [--out DIR] [--overwrite] [--workers N]
//   pfedpt sweep --config cfg.json --templates padding,patch-fixed --sizes 2,4,8

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pfedpt/runner.hpp"

namespace {

int verbosity_from(const std::string& level) {
  if (level == "error") return 0;
  if (level == "warn") return 1;
  if (level == "info") return 2;
  if (level == "debug") return 3;
  throw CLI::ValidationError("--log-level", "expected error, warn, info or debug");
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pFedPT federated-learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, log_level = "info", templates_csv = "padding",
              sizes_csv = "4";
  bool overwrite = false;
  int workers = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", out_dir, "output directory (overrides config)");
    cmd->add_flag("--overwrite", overwrite, "allow overwriting existing outputs");
    cmd->add_option("--workers", workers, "client worker threads (results are identical)");
    cmd->add_option("--log-level", log_level, "error|warn|info|debug");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "run the configured experiment");
  add_common(run_cmd);

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "prompt template x size ablation grid");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--templates", templates_csv, "comma-separated prompt templates");
  sweep_cmd->add_option("--sizes", sizes_csv, "comma-separated prompt sizes");

  CLI11_PARSE(app, argc, argv);

  try {
    pfedpt::RunOverrides over;
    over.out_dir = out_dir;
    over.overwrite = overwrite;
    over.workers = workers;
    over.verbosity = verbosity_from(log_level);

    const pfedpt::ExperimentConfig cfg = pfedpt::parse_config(config_path);

    if (app.got_subcommand(run_cmd)) {
      pfedpt::run(cfg, over);
    } else {
      std::vector<pfedpt::Index> sizes;
      for (const auto& s : split_list(sizes_csv)) sizes.push_back(std::stol(s));
      const auto points = pfedpt::sweep(cfg, split_list(templates_csv), sizes, over);
      const std::string dir = out_dir.empty() ? cfg.output.dir : out_dir;
      std::filesystem::create_directories(dir);
      const auto path = std::filesystem::path(dir) / "sweep.csv";
      if (std::filesystem::exists(path) && !overwrite && !cfg.output.overwrite)
        throw std::runtime_error("sweep: refusing to overwrite " + path.string());
      std::ofstream out(path);
      pfedpt::write_sweep_csv(out, points);
      std::cout << path.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "pfedpt: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
