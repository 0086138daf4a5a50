// Acceptance checks. Prints one PASS/FAIL line per criterion.
//
// Criteria 8 and 9 read finished study runs from FLOWCOT_RESULTS_DIR
// (default: <source>/results). Criterion 10 reruns sub-runs from their
// resolved configs; by default each rerun is truncated to its first eval
// point and compared against the prefix of the stored CSV. Set
// FLOWCOT_ACCEPT_FULL=1 to rerun every study sub-run to completion instead.
// FLOWCOT_ACCEPT_ONLY=1,2,3 runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowcot/checkpoint.hpp"
#include "flowcot/config.hpp"
#include "flowcot/dataset.hpp"
#include "flowcot/error.hpp"
#include "flowcot/evalrollout.hpp"
#include "flowcot/experiments.hpp"
#include "flowcot/flowcodec.hpp"
#include "flowcot/tokenizer.hpp"
#include "flowcot/training.hpp"
#include "fixtures.hpp"
#include "model_checks.hpp"
#include "test_util.hpp"

using namespace flowcot;
namespace fs = std::filesystem;

#ifndef FLOWCOT_SOURCE_DIR
#error "FLOWCOT_SOURCE_DIR must be defined"
#endif

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kSource = FLOWCOT_SOURCE_DIR;

fs::path results_dir() {
  if (const char* e = std::getenv("FLOWCOT_RESULTS_DIR")) return e;
  return kSource / "results";
}

bool full_mode() {
  const char* e = std::getenv("FLOWCOT_ACCEPT_FULL");
  return e && std::string(e) == "1";
}

fs::path work_dir() {
  const fs::path d = fs::current_path() / "acceptance_work";
  fs::create_directories(d);
  return d;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

// 1. codec lattice round trip and golden file
Outcome codec_exactness() {
  const FlowCodecConfig cfg;
  double worst = 0;
  bool snapped = true;
  for (int u = -4; u <= 4; ++u)
    for (int v = -4; v <= 4; ++v) {
      FlowField f(32, 32);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) f.set(y, x, {float(u), float(v)});
      const FlowField back = rgb_to_flow(flow_to_rgb(f, cfg), cfg);
      for (std::size_t k = 0; k < f.uv.size(); ++k) worst = std::max(worst, double(std::abs(back.uv[k] - f.uv[k])));
      snapped = snapped && snap_to_lattice(back) == f;
    }
  FlowField g(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) g.set(y, x, {3.0f, 0.0f});
  const fs::path out = work_dir() / "flow_u3_v0.ppm";
  write_ppm(out, flow_to_rgb(g, cfg));
  const bool golden = read_bytes(out) == read_bytes(test_data_path("flow_u3_v0_32x32.ppm"));
  return {worst <= 0.1 && snapped && golden,
          fmt("max component error %.4g", worst) + (snapped ? ", snap exact" : ", snap MISMATCH") +
              (golden ? ", golden PPM identical" : ", golden PPM differs")};
}

// 2. tokenizer losslessness on held-out seeds
Outcome tokenizer_lossless() {
  const WorldConfig world;
  const FlowCodecConfig codec;
  CodebookBuilder b;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Episode ep = gen_episode(world, s);
    for (const auto& f : ep.frames) b.add(f);
    for (const auto& f : ep.flows) b.add(flow_to_rgb(f, codec));
  }
  const Codebook cb = std::move(b).finish();
  int images = 0, bad = 0;
  for (std::uint64_t s = 1'000'000; s < 1'000'100; ++s) {
    const Episode ep = gen_episode(world, s);
    auto check = [&](const Frame& f) {
      ++images;
      if (!(detokenize(tokenize(f, cb), cb) == f)) ++bad;
    };
    for (const auto& f : ep.frames) check(f);
    for (const auto& f : ep.flows) check(flow_to_rgb(f, codec));
  }
  return {bad == 0, std::to_string(images) + " images, " + std::to_string(bad) + " mismatches, codebook " +
                        std::to_string(cb.size()) + " entries"};
}

// 3. finite-difference gradients
Outcome gradients() {
  double worst = 0;
  std::string name;
  for (const auto& e : modelcheck::gradient_check())
    if (e.rel_error >= worst) worst = e.rel_error, name = e.name;
  return {worst < 1e-3, fmt("worst relative error %.3g", worst) + " (" + name + ")"};
}

// 4. causality
Outcome causality() {
  const int v = modelcheck::causality_violations(1000, 2024);
  return {v == 0, "1000 trials, " + std::to_string(v) + " prefix changes"};
}

// 5. loss-mask isolation
Outcome mask_isolation() {
  const Codebook cb = fixture::small_codebook(10);
  const VocabLayout v = fixture::vocab_for(cb);
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 512;
  c.vocab = v;
  const auto p = init_params(c, 3);
  int identical = 0, trials = 0;
  bool flow_zero = true;
  std::mt19937 rng(5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto te = tokenize_episode(gen_episode(WorldConfig{}, seed), cb, FlowCodecConfig{}).window(0, 2);
    const auto s = assemble(te, Layout::kPolicy, v, 512);
    const auto w = loss_weights(s, 1.0);
    const auto segs = s.segments();
    auto targets = s.targets();
    Gradients<float> g1(p.values.size()), g2(p.values.size());
    const float l1 = loss_and_grad<float>(p, s.ids, segs, targets, w, g1);
    for (std::size_t i = 0; i < targets.size(); ++i)
      if (!s.mask[i]) targets[i] = static_cast<std::uint32_t>(rng() % v.total());
    const float l2 = loss_and_grad<float>(p, s.ids, segs, targets, w, g2);
    ++trials;
    identical += l1 == l2 && g1.values == g2.values;
    flow_zero = flow_zero && wm_loss(p, assemble(te, Layout::kNoFlowLoss, v, 512)).flow_term == 0.0;
  }
  return {identical == trials && flow_zero, std::to_string(identical) + "/" + std::to_string(trials) +
                                                " policy losses bit-identical, no-flow-loss flow_term " +
                                                (flow_zero ? "0" : "NONZERO")};
}

// 6. uniform-logit cross-entropy
Outcome analytic_ce() {
  double worst = 0;
  for (int V : {16, 37, 101, 331}) {
    const int n = 7;
    Logits<double> l{n, V, std::vector<double>(static_cast<std::size_t>(n) * V, -1.25)};
    std::vector<std::uint32_t> tgt;
    for (int i = 0; i < n; ++i) tgt.push_back(static_cast<std::uint32_t>((i * 5) % V));
    const std::vector<std::uint8_t> mask(n, 1);
    worst = std::max(worst, std::abs(masked_ce<double>(l, tgt, mask) - std::log(double(V))));
  }
  return {worst < 1e-6, fmt("max |CE - ln V| = %.3g", worst)};
}

// 7. overfit sanity
constexpr int kOverfitEpisodes = 8;
constexpr int kOverfitSteps = 3000;
constexpr int kOverfitEvalEvery = 250;

TrainJob overfit_job(const fs::path& root, const fs::path& out, int steps) {
  TrainJob job;
  job.data_dir = root / "data";
  job.codebook_path = root / "codebook.bin";
  job.out_dir = out;
  job.train.layout = Layout::kInterleavedCot;
  job.train.batch_size = 3;
  job.train.lr = 1e-3;
  job.train.lr_decay_steps = kOverfitSteps;
  job.train.steps = steps;
  job.train.eval_every = kOverfitEvalEvery;
  job.train.eval_episodes = 0;
  return job;
}

void prepare_overfit(const fs::path& root) {
  const WorldConfig world;
  const auto m = write_dataset(root / "data", world, kOverfitEpisodes, 0, 1);
  CodebookBuilder b;
  for (auto s : m.seeds) {
    const Episode ep = read_episode(root / "data", s, world);
    for (const auto& f : ep.frames) b.add(f);
    for (const auto& f : ep.flows) b.add(flow_to_rgb(f, FlowCodecConfig{}));
  }
  save_codebook(root / "codebook.bin", std::move(b).finish());
}

Outcome overfit() {
  const fs::path root = work_dir() / "overfit";
  fs::remove_all(root);
  prepare_overfit(root);
  const TrainSummary s = train_world_model(overfit_job(root, root / "run", kOverfitSteps));
  const double total = s.rows.back().loss.total;
  const Checkpoint ck = load_checkpoint(s.checkpoint);
  const Codebook cb = load_codebook(root / "codebook.bin");
  const auto m = read_manifest(root / "data");
  int frames = 0, exact = 0;
  for (auto seed : m.seeds) {
    const Episode ep = read_episode(root / "data", seed, m.world);
    const auto r = rollout_wm(ck, cb, ep.instruction, std::span<const Frame>(ep.frames.data(), 1),
                              static_cast<int>(ep.frames.size()) - 1);
    for (const auto& st : score_rollout(r, ep, cb).steps) {
      ++frames;
      exact += st.pixel_match == 1.0;
    }
  }
  return {total < 0.05 && s.steps_run <= kOverfitSteps && exact == frames,
          fmt("total %.4f after %.0f steps", total, double(s.steps_run)) + ", " + std::to_string(exact) + "/" +
              std::to_string(frames) + " rolled-out frames pixel-exact"};
}

// 8. pretraining sample efficiency
Outcome efficiency() {
  const fs::path dir = results_dir() / "efficiency";
  if (!fs::exists(dir / "resolved_config.json")) return {false, "no study results in " + dir.string()};
  const RunConfig cfg = load_run_config(dir / "resolved_config.json");
  const auto cmp = read_efficiency_runs(cfg, dir);
  bool ok = true;
  std::string detail;
  double gap_full = 0, gap_half = 0;
  for (const auto& fc : cmp) {
    const bool fast = fc.cot_steps_to_baseline_best >= 0 &&
                      2 * fc.cot_steps_to_baseline_best <= fc.baseline_steps_to_best;
    const bool final_ok = fc.cot_final >= fc.baseline_final;
    ok = ok && fast && final_ok;
    if (fc.fraction == 1.0) gap_full = fc.cot_final - fc.baseline_final;
    if (fc.fraction == 0.5) gap_half = fc.cot_final - fc.baseline_final;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "f=%.2f: baseline best %.3f at step %lld, cot reaches it at %lld; final %.3f vs %.3f; ",
                  fc.fraction, fc.baseline_best, static_cast<long long>(fc.baseline_steps_to_best),
                  static_cast<long long>(fc.cot_steps_to_baseline_best), fc.cot_final, fc.baseline_final);
    detail += buf;
  }
  ok = ok && gap_half > gap_full;
  return {ok, detail + fmt("gap at 0.5 (%.3f) > gap at 1.0 (%.3f)", gap_half, gap_full) +
                  (gap_half > gap_full ? "" : " does not hold")};
}

// 9. layout ablation ranking
Outcome ablation() {
  const fs::path dir = results_dir() / "ablation";
  if (!fs::exists(dir / "resolved_config.json")) return {false, "no study results in " + dir.string()};
  const RunConfig cfg = load_run_config(dir / "resolved_config.json");
  const auto rows = read_ablation_runs(cfg, dir);
  double inter = 0, grouped = 0, best_other = -1, worst_other = 2;
  std::string detail;
  for (const auto& r : rows) {
    detail += layout_name(r.layout) + fmt(" %.4f, ", r.mean_eval_token_acc);
    if (r.layout == Layout::kInterleavedCot) inter = r.mean_eval_token_acc;
    if (r.layout == Layout::kGrouped) grouped = r.mean_eval_token_acc;
    if (r.layout != Layout::kInterleavedCot) best_other = std::max(best_other, r.mean_eval_token_acc);
    if (r.layout != Layout::kGrouped) worst_other = std::min(worst_other, r.mean_eval_token_acc);
  }
  detail += "mean over " + std::to_string(cfg.experiment.seeds.size()) + " seeds";
  return {inter > best_other && grouped < worst_other, detail};
}

// 10. determinism

// Resolves a path stored in a resolved config; relative paths are relative to
// the source tree, where the studies are launched.
fs::path resolve(const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : kSource / q;
}

// Regenerates the study dataset and codebook when the stored paths are gone.
void ensure_study_data(RunConfig& c) {
  const fs::path data = resolve(c.experiment.data), cb = resolve(c.experiment.codebook);
  if (fs::exists(data / "manifest.json") && fs::exists(cb)) {
    c.experiment.data = data.string();
    c.experiment.codebook = cb.string();
    return;
  }
  const fs::path root = work_dir() / ("study_data_" + std::to_string(c.experiment.episodes) + "_" +
                                      std::to_string(c.experiment.data_seed));
  if (!fs::exists(root / "codebook.bin")) {
    const auto m = write_dataset(root / "data", c.world, c.experiment.episodes, c.experiment.data_seed, 1);
    CodebookBuilder b(c.tokenizer.patch_size, static_cast<std::size_t>(c.tokenizer.max_entries));
    for (auto s : m.seeds) {
      const Episode ep = read_episode(root / "data", s, c.world);
      for (const auto& f : ep.frames) b.add(f);
      for (const auto& f : ep.flows) b.add(flow_to_rgb(f, c.flow));
    }
    save_codebook(root / "codebook.bin", std::move(b).finish());
  }
  c.experiment.data = (root / "data").string();
  c.experiment.codebook = (root / "codebook.bin").string();
}

// Reruns one stored sub-run and compares metrics.csv. Truncated reruns stop
// at the first eval point after the initial row.
bool rerun_matches(const fs::path& run_dir, bool policy, bool full, std::string& why) {
  if (!fs::exists(run_dir / "resolved_config.json")) {
    why = "missing " + run_dir.string();
    return false;
  }
  RunConfig c = load_run_config(run_dir / "resolved_config.json");
  ensure_study_data(c);
  TrainConfig& tc = policy ? c.policy : c.train;
  if (!full) tc.steps = std::min<std::int64_t>(tc.steps, tc.eval_every);
  std::optional<fs::path> init;
  if (!c.experiment.init.empty()) init = resolve(c.experiment.init);
  const fs::path out = work_dir() / "rerun" / run_dir.lexically_relative(results_dir());
  fs::remove_all(out);
  const TrainSummary s = run_or_reuse(c, policy, out, init, 1);
  const auto a = read_lines(run_dir / "metrics.csv"), b = read_lines(s.metrics_csv);
  const bool same = full ? a == b : b.size() <= a.size() && std::equal(b.begin(), b.end(), a.begin());
  if (!same) why = run_dir.string() + " differs";
  return same;
}

Outcome determinism() {
  const bool full = full_mode();
  int checked = 0, ok = 0;
  std::string why;

  // Overfit run: truncated rerun against the live criterion-7 CSV.
  const fs::path root = work_dir() / "overfit";
  if (fs::exists(root / "run" / "metrics.csv")) {
    const TrainSummary s = train_world_model(overfit_job(root, root / "rerun", kOverfitEvalEvery));
    const auto a = read_lines(root / "run" / "metrics.csv"), b = read_lines(s.metrics_csv);
    ++checked;
    if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.begin())) ++ok;
    else why = "overfit rerun differs";
  } else {
    why = "overfit run missing";
    ++checked;
  }

  const fs::path abl = results_dir() / "ablation";
  if (fs::exists(abl / "resolved_config.json")) {
    const RunConfig cfg = load_run_config(abl / "resolved_config.json");
    for (Layout l : kAblationLayouts)
      for (std::size_t i = 0; i < cfg.experiment.seeds.size() && (full || i == 0); ++i) {
        ++checked;
        ok += rerun_matches(abl / layout_name(l) / ("seed_" + std::to_string(cfg.experiment.seeds[i])), false, full, why);
      }
  } else {
    ++checked;
    why = "ablation results missing";
  }

  const fs::path eff = results_dir() / "efficiency";
  if (fs::exists(eff / "resolved_config.json")) {
    const RunConfig cfg = load_run_config(eff / "resolved_config.json");
    if (full)
      for (const auto& arm : kEfficiencyArms) {
        ++checked;
        ok += rerun_matches(eff / ("pretrain_" + arm.name), false, true, why);
      }
    for (double f : cfg.experiment.fractions)
      for (const auto& arm : kEfficiencyArms)
        for (std::size_t i = 0; i < cfg.experiment.seeds.size() && (full || (i == 0 && f == 1.0)); ++i) {
          ++checked;
          ok += rerun_matches(eff / (arm.name + "_f" + fraction_tag(f) + "_seed" + std::to_string(cfg.experiment.seeds[i])),
                              true, full, why);
        }
  } else {
    ++checked;
    why = "efficiency results missing";
  }
  std::string detail = std::to_string(ok) + "/" + std::to_string(checked) +
                       (full ? " full reruns identical" : " truncated reruns match the stored CSV prefix");
  if (!why.empty()) detail += "; " + why;
  return {ok == checked, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, codec_exactness}, {2, tokenizer_lossless}, {3, gradients}, {4, causality}, {5, mask_isolation},
      {6, analytic_ce},     {7, overfit},            {8, efficiency}, {9, ablation}, {10, determinism}};
  std::set<int> only;
  if (const char* e = std::getenv("FLOWCOT_ACCEPT_ONLY")) {
    std::stringstream ss(e);
    for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
  }
  int failed = 0, ran = 0;
  for (const auto& [n, fn] : criteria) {
    if (!only.empty() && !only.count(n)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d: %s  %s  [%.1fs]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %d criteria failed\n", failed, ran);
  return failed == 0 ? 0 : 1;
}
