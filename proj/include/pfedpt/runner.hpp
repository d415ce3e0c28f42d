#pragma once

#include <string>
#include <vector>

#include "pfedpt/config.hpp"

namespace pfedpt {

/// CLI-level knobs layered over the parsed config.
struct RunOverrides {
  std::string out_dir;  // empty = config's output.dir
  bool overwrite = false;
  int workers = 0;  // 0 = config's value
  int verbosity = 2;  // 0 error, 1 warn, 2 info, 3 debug
};

/// Executes the full pipeline: data, partition, one run per algorithm tag,
/// analysis emissions, summary and manifest. Throws on failure; outputs
/// written so far are retained. Existing output files are refused unless
/// overwrite is set.
void run(const ExperimentConfig& cfg, const RunOverrides& over = {});

struct SweepPoint {
  std::string prompt_template;
  Index size = 0;
  bool ok = false;
  std::string error;
  double best_weighted_acc = 0;
  int best_round = -1;
};

/// One pFedPT run per (template, size) grid point over a shared dataset
/// and partition; per-point failures are recorded and the sweep continues.
std::vector<SweepPoint> sweep(const ExperimentConfig& cfg,
                              const std::vector<std::string>& templates,
                              const std::vector<Index>& sizes, const RunOverrides& over = {});

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points);

}  // namespace pfedpt
