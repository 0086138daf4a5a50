#pragma once

// Multi-run drivers: the four-layout ablation and the pretraining
// sample-efficiency study. Every sub-run gets its own directory holding a
// resolved config, metrics.csv and model.fvc.

#include <filesystem>
#include <string>
#include <vector>

#include "flowcot/config.hpp"

namespace flowcot {

/// Runs one sub-run, skipping it when `dir` already holds a finished run with
/// the same resolved config.
TrainSummary run_or_reuse(const RunConfig& cfg, bool policy, const std::filesystem::path& dir,
                          const std::optional<std::filesystem::path>& init, int threads);

struct AblationRow {
  Layout layout = Layout::kInterleavedCot;
  double mean_eval_token_acc = 0;
  std::vector<double> eval_token_acc;  // per seed, final eval row
  double mean_final_total = 0;
};

inline constexpr Layout kAblationLayouts[] = {Layout::kInterleavedCot, Layout::kNoFlowLoss, Layout::kFramesOnly,
                                              Layout::kGrouped};

/// Rows sorted by mean held-out frame-token accuracy, descending. Writes
/// comparison.csv into out_dir.
std::vector<AblationRow> ablate(const RunConfig& cfg, const std::filesystem::path& out_dir, int threads);
std::vector<AblationRow> read_ablation_runs(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct Curve {
  std::vector<std::int64_t> steps;
  std::vector<double> success;  // mean over seeds
};

struct EfficiencyArm {
  std::string name;  // "cot" or "baseline"
  Layout pretrain_layout = Layout::kInterleavedCot;
};

inline const EfficiencyArm kEfficiencyArms[] = {{"cot", Layout::kInterleavedCot},
                                                {"baseline", Layout::kFramesOnly}};

struct FractionComparison {
  double fraction = 1.0;
  Curve cot, baseline;
  double baseline_best = 0;
  std::int64_t baseline_steps_to_best = 0;
  /// -1 when the CoT curve never reaches baseline_best.
  std::int64_t cot_steps_to_baseline_best = -1;
  double cot_final = 0, baseline_final = 0;
};

/// Pretrains both arms, fine-tunes arms x fractions x seeds, writes
/// curves.csv, efficiency.svg and efficiency_summary.json.
std::vector<FractionComparison> efficiency_study(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                                 int threads);
/// Rebuilds the comparison from finished sub-run directories.
std::vector<FractionComparison> read_efficiency_runs(const RunConfig& cfg, const std::filesystem::path& out_dir);

std::string fraction_tag(double f);

}  // namespace flowcot
