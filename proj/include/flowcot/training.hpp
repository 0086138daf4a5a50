#pragma once

// World-model pretraining and policy fine-tuning over windowed token
// sequences, with per-term mean cross-entropy and deterministic batching.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowcot/model.hpp"
#include "flowcot/sequence.hpp"

namespace flowcot {

struct TrainConfig {
  Layout layout = Layout::kInterleavedCot;
  double lambda = 1.0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  /// Cosine decay of lr to lr/10 over this many steps, then constant; 0
  /// keeps lr constant. Independent of `steps` so truncated runs match.
  int lr_decay_steps = 0;
  int batch_size = 8;
  int steps = 1000;
  int eval_every = 100;
  std::uint64_t seed = 0;
  double data_fraction = 1.0;
  /// Transitions per training sequence; rollouts keep the same context width.
  int window = 2;
  /// Stops after an eval row whose training total is below this; 0 disables.
  double stop_below = 0.0;
  /// Training windows scored for the loss columns of each eval row.
  int train_eval_windows = 256;
  /// Held-out episodes for eval_token_acc / eval_success; 0 disables.
  int eval_episodes = 32;
  std::uint64_t eval_seed_base = 1'000'000;
  /// Cap on held-out windows scored per eval row.
  int eval_max_windows = 128;
  /// Drops instruction words from every sequence (SEP_TEXT stays).
  bool blank_instruction = false;

  /// Throws ConfigError.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr double kClipNorm = 1.0;

struct LossReport {
  double total = 0;
  double flow_term = 0;
  double frame_term = 0;
  double action_term = 0;
  int n_flow = 0;
  int n_frame = 0;
  int n_action = 0;
};

/// Per-position loss weights reproducing the LossReport total:
/// flow 1/n_flow, frame lambda/n_frame, action 1/n_action.
std::vector<float> loss_weights(const TokenSequence& seq, double lambda);

LossReport wm_loss(const ModelParams<float>& p, const TokenSequence& seq, double lambda = 1.0);
LossReport policy_loss(const ModelParams<float>& p, const TokenSequence& seq);
/// Scores already computed logits; the shared core of wm_loss/policy_loss.
LossReport loss_report(const Logits<float>& logits, const TokenSequence& seq, double lambda);

/// Number of episodes kept for a fraction: ceil(fraction * n).
int fraction_count(double fraction, int n);

struct TrainJob {
  std::filesystem::path data_dir;
  std::filesystem::path codebook_path;
  std::filesystem::path out_dir;
  /// Initial weights (policy fine-tuning); absent means fresh init.
  std::optional<std::filesystem::path> init_checkpoint;
  ModelConfig model;  // vocab is filled in from the codebook
  TrainConfig train;
  double sigma = 0.15;
  int threads = 1;
};

struct MetricsRow {
  std::int64_t step = 0;
  LossReport loss;
  std::optional<double> eval_token_acc;
  std::optional<double> eval_success;
};

struct TrainSummary {
  std::vector<MetricsRow> rows;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_csv;
  std::int64_t steps_run = 0;
};

/// WM layouts only. Writes metrics.csv and model.fvc (+ codebook.bin) into
/// out_dir. Throws DivergenceError on a non-finite loss, leaving the last
/// eval-point checkpoint in place.
TrainSummary train_world_model(const TrainJob& job);
/// POLICY layout; initializes from job.init_checkpoint when present.
TrainSummary finetune_policy(const TrainJob& job);

/// Learning rate used by optimizer step `step` (1-based).
double scheduled_lr(const TrainConfig& tc, std::int64_t step);

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& r);

}  // namespace flowcot
