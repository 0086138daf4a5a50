#pragma once

// Autoregressive world-model rollouts, their scoring against ground truth,
// closed-loop policy evaluation and SVG line charts.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowcot/checkpoint.hpp"
#include "flowcot/sequence.hpp"

namespace flowcot {

/// Where a context token came from.
enum class Provenance : std::uint8_t { kPrompt = 0, kPrefix, kGrammar, kGenerated };

struct RolloutOptions {
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

/// Token-level rollout. Frames/flows are code-id grids.
struct TokenRollout {
  std::vector<std::vector<std::uint32_t>> frames;  // predicted frames 1..horizon after the prefix
  std::vector<std::vector<std::uint32_t>> flows;   // empty for layouts without flow blocks
  int coercion_count = 0;
  /// Context of the last generation step, one entry per position.
  std::vector<Provenance> last_context;
  /// Frame index of the first predicted frame.
  int first_predicted = 0;
};

/// prefix_flows must hold prefix_frames.size() - 1 grids for layouts with
/// flow blocks (it is ignored otherwise). Each step conditions on the last
/// `window` frames, exactly as in training.
TokenRollout rollout_tokens(const ModelParams<float>& p, Layout layout, int window,
                            std::span<const std::uint32_t> instruction,
                            std::span<const std::vector<std::uint32_t>> prefix_frames,
                            std::span<const std::vector<std::uint32_t>> prefix_flows, int horizon,
                            const RolloutOptions& opt = {});

struct RolloutResult {
  std::vector<Frame> predicted_frames;
  std::vector<FlowField> predicted_flows;
  std::vector<Frame> predicted_flow_images;
  TokenRollout tokens;
};

/// Throws ConfigError for a POLICY checkpoint or an empty prefix.
RolloutResult rollout_wm(const Checkpoint& ckpt, const Codebook& cb, const Instruction& instruction,
                         std::span<const Frame> prefix, int horizon, const RolloutOptions& opt = {},
                         std::span<const FlowField> prefix_flows = {});

struct StepScore {
  int step = 0;  // index of the predicted frame in the episode
  double token_acc = 0;
  double pixel_match = 0;
  std::optional<double> flow_epe;
};

struct RolloutScore {
  std::vector<StepScore> steps;
  /// First step with pixel match below 0.5; -1 if none.
  int divergence_step = -1;
};

inline constexpr double kDivergencePixelMatch = 0.5;

/// Steps beyond the truth episode are ignored.
RolloutScore score_rollout(const RolloutResult& pred, const Episode& truth, const Codebook& cb);

double token_accuracy(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);
double pixel_match(const Frame& a, const Frame& b);
/// Mean Euclidean endpoint error over pixels.
double endpoint_error(const FlowField& a, const FlowField& b);

/// Held-out next-frame token accuracy: teacher-forced context up to the last
/// frame of each window, then the layout's reasoning blocks and the frame are
/// generated greedily. Returns the mean over all predicted tokens.
double heldout_frame_accuracy(const ModelParams<float>& p, Layout layout, int window,
                              std::span<const TokenizedEpisode> windows);

struct PolicyOutcome {
  std::uint64_t seed = 0;
  bool success = false;
  int steps = 0;
  int invalid_actions = 0;
};

struct PolicyModel {
  const ModelParams<float>& params;
  int window = 2;
  bool blank_instruction = false;
  const Codebook& codebook;
};

/// Closed loop: render, append the frame block and SEP_ACTION, take the
/// greedy token (NOOP if it is not an action), step the world.
PolicyOutcome run_policy_episode(const PolicyModel& m, const WorldConfig& cfg, std::uint64_t seed,
                                 int max_steps);

struct PolicyEvalReport {
  int n_episodes = 0;
  double success_rate = 0;
  /// Over successful episodes; 0 when there are none.
  double mean_steps_to_success = 0;
  std::vector<PolicyOutcome> outcomes;
};

PolicyEvalReport aggregate(std::vector<PolicyOutcome> outcomes);

/// Throws ContaminationError if a seed was used in training.
PolicyEvalReport eval_policy(const Checkpoint& ckpt, const Codebook& cb, const WorldConfig& cfg,
                             std::span<const std::uint64_t> seeds, int threads = 1);

/// Uniform random actions drawn from counter_uniform(rng_seed, episode seed, t).
PolicyEvalReport random_policy_baseline(const WorldConfig& cfg, std::span<const std::uint64_t> seeds,
                                        int max_steps, std::uint64_t rng_seed);

/// Throws ContaminationError when the two seed sets intersect.
void check_disjoint(std::span<const std::uint64_t> eval_seeds, std::span<const std::uint64_t> train_seeds);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// Column by name; throws ParseError if absent.
  int column(const std::string& name) const;
};

/// Throws ParseError naming the offending line.
CsvTable read_csv(const std::filesystem::path& path);

struct PlotOptions {
  std::string x_column = "step";
  /// Empty selects eval_success when present, otherwise total.
  std::string y_column;
  std::string title;
};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  /// Fixed y range; derived from the data when absent.
  std::optional<std::pair<double, double>> y_range;
};

/// Panels side by side in one fixed-size SVG; every point gets a marker.
std::string render_panels(std::span<const Panel> panels);

/// Deterministic SVG line chart, one polyline per CSV, legend from file stems.
std::string render_plot(std::span<const CsvTable> tables, std::span<const std::string> labels,
                        const PlotOptions& opt);
void emit_plot(std::span<const std::filesystem::path> csvs, const std::filesystem::path& out_svg,
               const PlotOptions& opt = {});

}  // namespace flowcot
