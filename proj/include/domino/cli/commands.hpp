#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "domino/cli/run_config.hpp"
#include "domino/costmodel/costmodel.hpp"
#include "domino/lm/tabular.hpp"
#include "domino/specdec/decode.hpp"

namespace domino {

// The target named by cfg.target: "chain" (constructed word-chain
// transformer), "cycle-tabular", a tabular file ending in .tab, or a
// transformer checkpoint.
struct LoadedTarget {
  std::optional<TinyTransformer> transformer;
  std::optional<TabularTarget> tabular;

  const TinyTransformer& require_transformer() const;
};
LoadedTarget load_target(const RunConfig& cfg);

// Writes <out>/corpus.txt (and <out>/target.ckpt for transformer targets).
// Returns the corpus path.
std::string cmd_gen_corpus(const RunConfig& cfg);

struct TrainOutputs {
  std::string bundle_path;
  std::string curves_path;
  std::uint64_t bundle_hash = 0;
  double final_loss_base = 0.0;
  double final_loss_final = 0.0;
};
// Writes config.txt, bundle.bin, curves.csv and train.json into cfg.out.
TrainOutputs cmd_train(const RunConfig& cfg, const std::string& corpus_path);

struct BenchOutputs {
  SpecMetrics metrics;
  SpeedupReport report;
  double draft_ms = 0.0;   // per cycle, median of 5 repetitions
  double verify_ms = 0.0;  // per cycle
  double target_ms = 0.0;  // per AR token
  double measured_speedup = 0.0;
};

// Evaluation prompts: `eval_path` sequences if given, else the first 4 tokens
// of cfg.eval_prompts sequences sampled from the target with cfg.eval_seed.
std::vector<TokenSeq> eval_prompts(const RunConfig& cfg, const TinyTransformer& target,
                                   const std::string& eval_path = "");

// Decodes every prompt with the same per-prompt rng streams; returns the
// merged metrics.
SpecMetrics run_eval(const TinyTransformer& target, Drafter& drafter,
                     const std::vector<TokenSeq>& prompts, const RunConfig& cfg);

// drafter: "oracle" or a bundle path. Writes metrics.json and speedup.json.
BenchOutputs cmd_bench(const RunConfig& cfg, const std::string& drafter,
                       const std::string& eval_path = "");

struct LosslessnessRow {
  std::uint64_t target_seed = 0;
  int vocab = 0;
  int order = 1;
  int gamma = 0;
  int horizon = 0;
  std::string drafter;
  double tv = 0.0;
};

// Grid of seeded random tabular targets (V in {3, 4}, order in {1, 2},
// gamma in {1, 2, 3}, horizon 3) against the reference drafters.
std::vector<LosslessnessRow> losslessness_grid(int n_targets, std::uint64_t seed);
// Writes losslessness.csv; returns the rows.
std::vector<LosslessnessRow> cmd_losslessness(const RunConfig& cfg, int n_targets);

struct ReportedChecks {
  double speedup_ratio_predicted = 0.0;  // 1.166 / 1.028
  double speedup_ratio_reported = 0.0;   // 1.123
  double speedup_ratio_rel_err = 0.0;
  double eagle3_cycle_ratio = 0.0;       // 4.86 / 3.28
  double dflash_cycle_ratio = 0.0;       // 4.03 / 3.42
  double dhead_delta_s = 0.0;            // par cost(2.64 ms) - par cost(1.20 ms)
};
ReportedChecks reported_checks(const LatencyProfile& profile);

// Reported-figure checks plus a calibration table for the given metrics files.
// Writes costmodel.json and calibration.csv.
ReportedChecks cmd_costmodel(const RunConfig& cfg, const std::string& profile_path,
                          const std::vector<std::string>& metrics_paths);

// Collects every metrics.json below `dir` into <dir>/report.csv; returns the
// number of rows.
std::size_t cmd_report(const std::string& dir);

// Output root: $DOMINO_OUT if set, else "domino_out".
std::string default_out_root();

}  // namespace domino
