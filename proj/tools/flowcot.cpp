// flowcot: data generation, tokenization, training, rollout and evaluation
// of flow-reasoning world models on the sprite world.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"

#include "flowcot/checkpoint.hpp"
#include "flowcot/config.hpp"
#include "flowcot/dataset.hpp"
#include "flowcot/error.hpp"
#include "flowcot/evalrollout.hpp"
#include "flowcot/experiments.hpp"
#include "flowcot/hash.hpp"
#include "flowcot/parallel.hpp"

namespace fs = std::filesystem;
using namespace flowcot;

namespace {

// Flags that override fields of the run config, applied after --config is read.
class Overrides {
 public:
  template <class T, class Apply>
  void add(CLI::App* app, const std::string& flag, const std::string& help, Apply apply) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    fns_.push_back([opt, value, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c, *value);
    });
  }
  void apply(RunConfig& c) const {
    for (const auto& f : fns_) f(c);
  }

 private:
  std::vector<std::function<void(RunConfig&)>> fns_;
};

struct Common {
  std::string config_path;
  int threads = 1;
};

RunConfig load_config(const Common& common, const Overrides& ov) {
  RunConfig c = common.config_path.empty() ? RunConfig{} : load_run_config(common.config_path);
  ov.apply(c);
  apply_seed_override(c);
  c.train.validate();
  c.policy.validate();
  return c;
}

void add_train_flags(CLI::App* app, Overrides& ov, bool policy) {
  auto tc = [policy](RunConfig& c) -> TrainConfig& { return policy ? c.policy : c.train; };
  ov.add<std::string>(app, "--data", "dataset directory", [](RunConfig& c, const std::string& v) { c.experiment.data = v; });
  ov.add<std::string>(app, "--codebook", "codebook.bin", [](RunConfig& c, const std::string& v) { c.experiment.codebook = v; });
  ov.add<int>(app, "--steps", "optimizer steps", [tc](RunConfig& c, int v) { tc(c).steps = v; });
  ov.add<int>(app, "--batch", "sequences per step", [tc](RunConfig& c, int v) { tc(c).batch_size = v; });
  ov.add<std::uint64_t>(app, "--seed", "init and batching seed", [tc](RunConfig& c, std::uint64_t v) { tc(c).seed = v; });
  ov.add<double>(app, "--lr", "Adam learning rate", [tc](RunConfig& c, double v) { tc(c).lr = v; });
  ov.add<int>(app, "--lr-decay-steps", "cosine decay horizon, 0 = constant lr", [tc](RunConfig& c, int v) { tc(c).lr_decay_steps = v; });
  ov.add<int>(app, "--eval-every", "steps between eval rows", [tc](RunConfig& c, int v) { tc(c).eval_every = v; });
  ov.add<int>(app, "--window", "transitions per sequence", [tc](RunConfig& c, int v) { tc(c).window = v; });
  ov.add<double>(app, "--data-fraction", "seed-ordered prefix of the dataset", [tc](RunConfig& c, double v) { tc(c).data_fraction = v; });
  ov.add<double>(app, "--stop-below", "stop once the eval total is below this", [tc](RunConfig& c, double v) { tc(c).stop_below = v; });
  ov.add<int>(app, "--eval-episodes", "held-out episodes per eval row", [tc](RunConfig& c, int v) { tc(c).eval_episodes = v; });
  ov.add<bool>(app, "--blank-instruction", "drop instruction words", [tc](RunConfig& c, bool v) { tc(c).blank_instruction = v; });
  ov.add<double>(app, "--sigma", "flow magnitude scale", [](RunConfig& c, double v) { c.flow.sigma = v; });
  ov.add<int>(app, "--d-model", "model width", [](RunConfig& c, int v) { c.model.d_model = v; });
  ov.add<int>(app, "--layers", "transformer blocks", [](RunConfig& c, int v) { c.model.n_layers = v; });
  ov.add<int>(app, "--heads", "attention heads", [](RunConfig& c, int v) { c.model.n_heads = v; });
  ov.add<int>(app, "--d-ff", "MLP width", [](RunConfig& c, int v) { c.model.d_ff = v; });
}

std::vector<std::uint64_t> read_seed_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open seed file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  std::vector<std::uint64_t> seeds;
  if (text.find('[') != std::string::npos) {
    try {
      seeds = Json::parse(text).get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    return seeds;
  }
  for (char& ch : text)
    if (ch == ',') ch = ' ';
  std::istringstream words(text);
  std::string w;
  while (words >> w) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(w.c_str(), &end, 10);
    if (*end != '\0') throw DataError(path.string() + ": not a seed: '" + w + "'");
    seeds.push_back(v);
  }
  return seeds;
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << s;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowcot: flow-reasoning world models on a synthetic sprite world"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate expert episodes");
  Overrides gen_ov;
  std::string gen_out;
  int gen_n = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_option("--episodes", gen_n, "episode count")->required()->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "first episode seed");
  gen->add_option("--config", common.config_path, "run config (world section)");
  gen->callback([&] {
    action = [&] {
      RunConfig c = load_config(common, gen_ov);
      c.experiment.data = gen_out;
      c.experiment.episodes = gen_n;
      c.experiment.data_seed = gen_seed;
      const auto m = write_dataset(gen_out, c.world, gen_n, gen_seed, common.threads);
      write_json_file(fs::path(gen_out) / "resolved_config.json", to_json(c));
      std::printf("wrote %zu episodes (%zu seeds skipped), %lld transitions to %s\n", m.seeds.size(), m.skipped.size(),
                  static_cast<long long>(m.transitions), gen_out.c_str());
    };
  });

  // build-codebook
  auto* bcb = app.add_subcommand("build-codebook", "collect the patch codebook of frames and flow images");
  Overrides bcb_ov;
  std::string bcb_data, bcb_out;
  bcb->add_option("--data", bcb_data, "dataset directory")->required();
  bcb->add_option("--out", bcb_out, "codebook.bin path")->required();
  bcb->add_option("--config", common.config_path, "run config (flow and tokenizer sections)");
  bcb_ov.add<double>(bcb, "--sigma", "flow magnitude scale", [](RunConfig& c, double v) { c.flow.sigma = v; });
  bcb_ov.add<int>(bcb, "--patch-size", "patch edge in pixels", [](RunConfig& c, int v) { c.tokenizer.patch_size = v; });
  bcb_ov.add<int>(bcb, "--max-entries", "codebook capacity", [](RunConfig& c, int v) { c.tokenizer.max_entries = v; });
  bcb->callback([&] {
    action = [&] {
      RunConfig c = load_config(common, bcb_ov);
      c.flow.validate();
      const auto m = read_manifest(bcb_data);
      CodebookBuilder builder(c.tokenizer.patch_size, static_cast<std::size_t>(c.tokenizer.max_entries));
      for (auto seed : m.seeds) {
        const Episode ep = read_episode(bcb_data, seed, m.world);
        for (const auto& f : ep.frames) builder.add(f);
        for (const auto& f : ep.flows) builder.add(flow_to_rgb(f, c.flow));
      }
      const Codebook cb = std::move(builder).finish();
      const fs::path out(bcb_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      save_codebook(out, cb);
      save_codebook_summary(fs::path(out).replace_extension(".json"), cb);
      std::printf("codebook: %zu entries, hash %s\n", cb.size(), hex64(cb.content_hash()).c_str());
    };
  });

  // train-wm / train-policy
  auto* twm = app.add_subcommand("train-wm", "pretrain a world model");
  Overrides twm_ov;
  std::string twm_out;
  twm->add_option("--out", twm_out, "run directory")->required();
  twm->add_option("--config", common.config_path, "run config");
  twm_ov.add<std::string>(twm, "--layout", "interleaved|grouped|frames-only|no-flow-loss",
                          [](RunConfig& c, const std::string& v) { c.train.layout = parse_layout(v); });
  twm_ov.add<double>(twm, "--lambda", "frame-loss weight", [](RunConfig& c, double v) { c.train.lambda = v; });
  add_train_flags(twm, twm_ov, false);
  twm->callback([&] {
    action = [&] {
      RunConfig c = load_config(common, twm_ov);
      if (!is_wm_layout(c.train.layout)) throw ConfigError("train-wm needs a world-model layout");
      if (c.experiment.data.empty() || c.experiment.codebook.empty())
        throw ConfigError("--data and --codebook are required");
      c.experiment.init.clear();
      const auto s = run_or_reuse(c, false, twm_out, std::nullopt, common.threads);
      std::printf("trained %lld steps; checkpoint %s\n", static_cast<long long>(s.steps_run), s.checkpoint.c_str());
    };
  });

  auto* tpol = app.add_subcommand("train-policy", "fine-tune a policy");
  Overrides tpol_ov;
  std::string tpol_out;
  tpol->add_option("--out", tpol_out, "run directory")->required();
  tpol->add_option("--config", common.config_path, "run config");
  tpol_ov.add<std::string>(tpol, "--init", "pretrained checkpoint (omit to train from scratch)",
                           [](RunConfig& c, const std::string& v) { c.experiment.init = v; });
  add_train_flags(tpol, tpol_ov, true);
  tpol->callback([&] {
    action = [&] {
      RunConfig c = load_config(common, tpol_ov);
      if (c.experiment.data.empty() || c.experiment.codebook.empty())
        throw ConfigError("--data and --codebook are required");
      std::optional<fs::path> init;
      if (!c.experiment.init.empty()) init = c.experiment.init;
      const auto s = run_or_reuse(c, true, tpol_out, init, common.threads);
      std::printf("trained %lld steps; checkpoint %s\n", static_cast<long long>(s.steps_run), s.checkpoint.c_str());
    };
  });

  // rollout
  auto* roll = app.add_subcommand("rollout", "autoregressive world-model rollout from an episode's first frames");
  std::string roll_ckpt, roll_data, roll_out;
  std::uint64_t roll_ep = 0, roll_sample_seed = 0;
  int roll_h = 0, roll_prefix = 1;
  double roll_temp = 0.0;
  roll->add_option("--ckpt", roll_ckpt, "model.fvc")->required();
  roll->add_option("--data", roll_data, "dataset directory")->required();
  roll->add_option("--episode", roll_ep, "episode seed")->required();
  roll->add_option("--horizon", roll_h, "predicted frames")->required()->check(CLI::NonNegativeNumber);
  roll->add_option("--out", roll_out, "output directory")->required();
  roll->add_option("--prefix", roll_prefix, "ground-truth frames given as context")->check(CLI::PositiveNumber);
  roll->add_option("--temperature", roll_temp, "0 is greedy")->check(CLI::NonNegativeNumber);
  roll->add_option("--sample-seed", roll_sample_seed, "sampling seed when temperature > 0");
  roll->callback([&] {
    action = [&] {
      const Checkpoint ck = load_checkpoint(roll_ckpt);
      const Codebook cb = load_checkpoint_codebook(roll_ckpt, ck);
      const auto m = read_manifest(roll_data);
      const Episode ep = read_episode(roll_data, roll_ep, m.world);
      if (roll_prefix > static_cast<int>(ep.frames.size())) throw ConfigError("--prefix exceeds the episode length");
      std::span<const Frame> prefix(ep.frames.data(), static_cast<std::size_t>(roll_prefix));
      std::span<const FlowField> pflows(ep.flows.data(), static_cast<std::size_t>(roll_prefix - 1));
      const RolloutResult r = rollout_wm(ck, cb, ep.instruction, prefix, roll_h, {roll_temp, roll_sample_seed}, pflows);
      const RolloutScore sc = score_rollout(r, ep, cb);
      fs::create_directories(roll_out);
      const fs::path out(roll_out);
      for (std::size_t i = 0; i < r.predicted_frames.size(); ++i) {
        const int t = r.tokens.first_predicted + static_cast<int>(i);
        write_ppm(out / ("pred_frame_" + std::to_string(t) + ".ppm"), r.predicted_frames[i]);
        if (i < r.predicted_flow_images.size())
          write_ppm(out / ("pred_flow_" + std::to_string(t - 1) + ".ppm"), r.predicted_flow_images[i]);
      }
      std::string csv = "step,token_acc,pixel_match,flow_epe\n";
      for (const auto& s : sc.steps)
        csv += std::to_string(s.step) + "," + fmt(s.token_acc) + "," + fmt(s.pixel_match) + "," +
               (s.flow_epe ? fmt(*s.flow_epe) : "") + "\n";
      write_text(out / "metrics.csv", csv);
      write_json_file(out / "summary.json", Json{{"checkpoint", roll_ckpt},
                                                 {"episode", roll_ep},
                                                 {"layout", layout_name(ck.layout)},
                                                 {"horizon", roll_h},
                                                 {"prefix", roll_prefix},
                                                 {"temperature", roll_temp},
                                                 {"coercion_count", r.tokens.coercion_count},
                                                 {"divergence_step", sc.divergence_step}});
      std::printf("rollout: %zu frames scored, divergence step %d, %d coerced tokens\n", sc.steps.size(),
                  sc.divergence_step, r.tokens.coercion_count);
    };
  });

  // eval-policy
  auto* evp = app.add_subcommand("eval-policy", "closed-loop success rate on held-out seeds");
  std::string evp_ckpt, evp_seeds, evp_out;
  evp->add_option("--ckpt", evp_ckpt, "policy model.fvc")->required();
  evp->add_option("--seeds", evp_seeds, "file of seeds (whitespace/comma separated or a JSON array)")->required();
  evp->add_option("--out", evp_out, "report.json")->required();
  evp->callback([&] {
    action = [&] {
      const Checkpoint ck = load_checkpoint(evp_ckpt);
      const Codebook cb = load_checkpoint_codebook(evp_ckpt, ck);
      const auto seeds = read_seed_file(evp_seeds);
      const PolicyEvalReport rep = eval_policy(ck, cb, ck.world, seeds, common.threads);
      Json per = Json::array();
      for (const auto& o : rep.outcomes)
        per.push_back({{"seed", o.seed}, {"success", o.success}, {"steps", o.steps}, {"invalid_actions", o.invalid_actions}});
      write_json_file(evp_out, Json{{"checkpoint", evp_ckpt},
                                    {"n_episodes", rep.n_episodes},
                                    {"success_rate", rep.success_rate},
                                    {"mean_steps_to_success", rep.mean_steps_to_success},
                                    {"outcomes", per}});
      std::printf("success rate %.4f over %d episodes\n", rep.success_rate, rep.n_episodes);
    };
  });

  // ablate / efficiency
  auto* abl = app.add_subcommand("ablate", "train the four world-model layouts under one budget");
  Overrides abl_ov;
  std::string abl_out;
  abl->add_option("--config", common.config_path, "run config")->required();
  abl->add_option("--out", abl_out, "output directory")->required();
  abl_ov.add<std::string>(abl, "--data", "dataset directory", [](RunConfig& c, const std::string& v) { c.experiment.data = v; });
  abl_ov.add<std::string>(abl, "--codebook", "codebook.bin", [](RunConfig& c, const std::string& v) { c.experiment.codebook = v; });
  abl->callback([&] {
    action = [&] {
      RunConfig c = load_config(common, abl_ov);
      const auto rows = ablate(c, abl_out, common.threads);
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::printf("%zu. %-13s eval_token_acc %.4f\n", i + 1, layout_name(rows[i].layout).c_str(),
                    rows[i].mean_eval_token_acc);
    };
  });

  auto* eff = app.add_subcommand("efficiency", "policy fine-tuning curves from flow vs frames-only pretraining");
  Overrides eff_ov;
  std::string eff_out;
  eff->add_option("--config", common.config_path, "run config")->required();
  eff->add_option("--out", eff_out, "output directory")->required();
  eff_ov.add<std::string>(eff, "--data", "dataset directory", [](RunConfig& c, const std::string& v) { c.experiment.data = v; });
  eff_ov.add<std::string>(eff, "--codebook", "codebook.bin", [](RunConfig& c, const std::string& v) { c.experiment.codebook = v; });
  eff->callback([&] {
    action = [&] {
      RunConfig c = load_config(common, eff_ov);
      for (const auto& fc : efficiency_study(c, eff_out, common.threads))
        std::printf("fraction %s: cot final %.3f, baseline final %.3f, baseline best %.3f at step %lld, cot reaches it at %lld\n",
                    fraction_tag(fc.fraction).c_str(), fc.cot_final, fc.baseline_final, fc.baseline_best,
                    static_cast<long long>(fc.baseline_steps_to_best), static_cast<long long>(fc.cot_steps_to_baseline_best));
    };
  });

  // plot
  auto* plt = app.add_subcommand("plot", "line chart of metrics CSVs");
  std::vector<std::string> plt_in;
  std::string plt_out;
  PlotOptions plt_opt;
  plt->add_option("csv", plt_in, "metrics CSV files")->required();
  plt->add_option("--out", plt_out, "output SVG")->required();
  plt->add_option("--x", plt_opt.x_column, "x column");
  plt->add_option("--y", plt_opt.y_column, "y column (default eval_success, else total)");
  plt->add_option("--title", plt_opt.title, "chart title");
  plt->callback([&] {
    action = [&] {
      std::vector<fs::path> paths(plt_in.begin(), plt_in.end());
      emit_plot(paths, plt_out, plt_opt);
    };
  });

  // flow2img / img2flow
  auto* f2i = app.add_subcommand("flow2img", "colorize a .f32 flow field");
  std::string f2i_in, f2i_out;
  double f2i_sigma = 0.15;
  f2i->add_option("input", f2i_in, "flow .f32")->required();
  f2i->add_option("output", f2i_out, "image .ppm")->required();
  f2i->add_option("--sigma", f2i_sigma, "flow magnitude scale");
  f2i->callback([&] {
    action = [&] {
      FlowCodecConfig codec{f2i_sigma};
      codec.validate();
      write_ppm(f2i_out, flow_to_rgb(read_flow_square(f2i_in), codec));
    };
  });

  auto* i2f = app.add_subcommand("img2flow", "decode a colorized flow image back to .f32");
  std::string i2f_in, i2f_out;
  double i2f_sigma = 0.15;
  bool i2f_snap = false;
  i2f->add_option("input", i2f_in, "image .ppm")->required();
  i2f->add_option("output", i2f_out, "flow .f32")->required();
  i2f->add_option("--sigma", i2f_sigma, "flow magnitude scale");
  i2f->add_flag("--snap", i2f_snap, "round vectors to the integer lattice");
  i2f->callback([&] {
    action = [&] {
      FlowCodecConfig codec{i2f_sigma};
      codec.validate();
      FlowField f = rgb_to_flow(read_ppm(i2f_in), codec);
      if (i2f_snap) f = snap_to_lattice(f);
      write_flow(i2f_out, f);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    std::fprintf(stderr, "flowcot: %s\n", e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "flowcot: %s\n", e.what());
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
