#include "flowcot/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "flowcot/error.hpp"
#include "flowcot/evalrollout.hpp"

namespace flowcot {

namespace fs = std::filesystem;

namespace {

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int cs = t.column("step"), ct = t.column("total"), cfl = t.column("flow_term"),
            cfr = t.column("frame_term"), ca = t.column("action_term"), cacc = t.column("eval_token_acc"),
            csucc = t.column("eval_success");
  auto num = [](const std::string& s) { return s.empty() ? 0.0 : std::strtod(s.c_str(), nullptr); };
  std::vector<MetricsRow> rows;
  for (const auto& r : t.rows) {
    MetricsRow m;
    m.step = std::strtoll(r[cs].c_str(), nullptr, 10);
    m.loss.total = num(r[ct]);
    m.loss.flow_term = num(r[cfl]);
    m.loss.frame_term = num(r[cfr]);
    m.loss.action_term = num(r[ca]);
    if (!r[cacc].empty()) m.eval_token_acc = num(r[cacc]);
    if (!r[csucc].empty()) m.eval_success = num(r[csucc]);
    rows.push_back(m);
  }
  return rows;
}

// Only the inputs that change the run; sweep settings and the other stage are
// left out so a pretraining run survives edits to the fine-tuning section.
Json done_record(const RunConfig& cfg, bool policy) {
  const Json full = to_json(cfg);
  Json rec = {{"stage", policy ? "train-policy" : "train-wm"}};
  for (const char* k : {"world", "flow", "tokenizer", "model"}) rec[k] = full.at(k);
  rec["train"] = full.at(policy ? "policy" : "train");
  rec["data"] = cfg.experiment.data;
  rec["codebook"] = cfg.experiment.codebook;
  rec["init"] = cfg.experiment.init;
  rec["out"] = cfg.experiment.out;
  return rec;
}

void write_partial_note(const fs::path& out_dir, const std::vector<std::string>& finished, const std::string& failed,
                        const std::string& what) {
  std::ofstream out(out_dir / "PARTIAL.txt");
  out << "aborted in sub-run " << failed << ": " << what << "\n";
  out << "finished sub-runs:\n";
  for (const auto& f : finished) out << "  " << f << "\n";
}

// Rethrows after recording which sub-runs already finished.
template <class Fn>
void guarded(const fs::path& out_dir, std::vector<std::string>& finished, const std::string& name, Fn&& fn) {
  try {
    fn();
    finished.push_back(name);
  } catch (const std::exception& e) {
    write_partial_note(out_dir, finished, name, e.what());
    throw;
  }
}

}  // namespace

std::string fraction_tag(double f) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", f);
  return buf;
}

TrainSummary run_or_reuse(const RunConfig& cfg, bool policy, const fs::path& dir,
                          const std::optional<fs::path>& init, int threads) {
  RunConfig resolved = cfg;
  resolved.experiment.out = dir.string();
  resolved.experiment.init = init ? init->string() : "";
  const Json record = done_record(resolved, policy);
  const fs::path done = dir / "done.json";
  if (fs::exists(done) && fs::exists(dir / "metrics.csv") && fs::exists(dir / "model.fvc")) {
    if (read_json_file(done) == record) {
      TrainSummary s;
      s.rows = read_metrics(dir / "metrics.csv");
      s.checkpoint = dir / "model.fvc";
      s.metrics_csv = dir / "metrics.csv";
      s.steps_run = s.rows.empty() ? 0 : s.rows.back().step;
      return s;
    }
  }
  fs::create_directories(dir);
  fs::remove(done);
  write_json_file(dir / "resolved_config.json", to_json(resolved));
  TrainJob job;
  job.data_dir = cfg.experiment.data;
  job.codebook_path = cfg.experiment.codebook;
  job.out_dir = dir;
  job.init_checkpoint = init;
  job.model = cfg.model;
  job.train = policy ? cfg.policy : cfg.train;
  job.sigma = cfg.flow.sigma;
  job.threads = threads;
  TrainSummary s = policy ? finetune_policy(job) : train_world_model(job);
  write_json_file(done, record);
  return s;
}

namespace {

fs::path ablation_dir(const fs::path& out, Layout l, std::uint64_t seed) {
  return out / layout_name(l) / ("seed_" + std::to_string(seed));
}

RunConfig ablation_config(const RunConfig& cfg, Layout l, std::uint64_t seed) {
  RunConfig c = cfg;
  c.train.layout = l;
  c.train.seed = seed;
  return c;
}

std::vector<AblationRow> summarize_ablation(const std::map<Layout, std::vector<std::vector<MetricsRow>>>& runs) {
  std::vector<AblationRow> rows;
  for (Layout l : kAblationLayouts) {
    AblationRow r;
    r.layout = l;
    double acc = 0, total = 0;
    for (const auto& m : runs.at(l)) {
      if (m.empty()) throw DataError("ablation run for " + layout_name(l) + " has no metrics rows");
      const double a = m.back().eval_token_acc.value_or(0.0);
      r.eval_token_acc.push_back(a);
      acc += a;
      total += m.back().loss.total;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, r.eval_token_acc.size()));
    r.mean_eval_token_acc = acc / n;
    r.mean_final_total = total / n;
    rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AblationRow& a, const AblationRow& b) { return a.mean_eval_token_acc > b.mean_eval_token_acc; });
  return rows;
}

void write_comparison(const fs::path& path, const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "rank,layout,eval_token_acc_mean";
  for (auto s : seeds) out << ",eval_token_acc_seed" << s;
  out << ",final_total_mean\n";
  char buf[40];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << i + 1 << "," << layout_name(rows[i].layout);
    std::snprintf(buf, sizeof(buf), ",%.9g", rows[i].mean_eval_token_acc);
    out << buf;
    for (double a : rows[i].eval_token_acc) {
      std::snprintf(buf, sizeof(buf), ",%.9g", a);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.9g\n", rows[i].mean_final_total);
    out << buf;
  }
}

}  // namespace

std::vector<AblationRow> ablate(const RunConfig& cfg, const fs::path& out_dir, int threads) {
  fs::create_directories(out_dir);
  write_json_file(out_dir / "resolved_config.json", to_json(cfg));
  std::map<Layout, std::vector<std::vector<MetricsRow>>> runs;
  std::vector<std::string> finished;
  for (Layout l : kAblationLayouts)
    for (auto seed : cfg.experiment.seeds) {
      const fs::path dir = ablation_dir(out_dir, l, seed);
      guarded(out_dir, finished, dir.string(), [&] {
        runs[l].push_back(run_or_reuse(ablation_config(cfg, l, seed), false, dir, std::nullopt, threads).rows);
      });
    }
  auto rows = summarize_ablation(runs);
  write_comparison(out_dir / "comparison.csv", rows, cfg.experiment.seeds);
  fs::remove(out_dir / "PARTIAL.txt");
  return rows;
}

std::vector<AblationRow> read_ablation_runs(const RunConfig& cfg, const fs::path& out_dir) {
  std::map<Layout, std::vector<std::vector<MetricsRow>>> runs;
  for (Layout l : kAblationLayouts)
    for (auto seed : cfg.experiment.seeds) runs[l].push_back(read_metrics(ablation_dir(out_dir, l, seed) / "metrics.csv"));
  return summarize_ablation(runs);
}

namespace {

fs::path pretrain_dir(const fs::path& out, const EfficiencyArm& arm) { return out / ("pretrain_" + arm.name); }

fs::path finetune_dir(const fs::path& out, const EfficiencyArm& arm, double f, std::uint64_t seed) {
  return out / (arm.name + "_f" + fraction_tag(f) + "_seed" + std::to_string(seed));
}

RunConfig finetune_config(const RunConfig& cfg, double f, std::uint64_t seed) {
  RunConfig c = cfg;
  c.policy.data_fraction = f;
  c.policy.seed = seed;
  return c;
}

Curve mean_curve(const std::vector<std::vector<MetricsRow>>& runs) {
  Curve c;
  if (runs.empty()) return c;
  for (const auto& r : runs[0]) c.steps.push_back(r.step);
  c.success.assign(c.steps.size(), 0.0);
  for (const auto& run : runs) {
    if (run.size() != c.steps.size()) throw DataError("fine-tuning curves do not share the eval step grid");
    for (std::size_t i = 0; i < run.size(); ++i) {
      if (run[i].step != c.steps[i]) throw DataError("fine-tuning curves do not share the eval step grid");
      c.success[i] += run[i].eval_success.value_or(0.0);
    }
  }
  for (auto& s : c.success) s /= static_cast<double>(runs.size());
  return c;
}

std::vector<FractionComparison> compare(const RunConfig& cfg,
                                        const std::map<std::string, std::vector<std::vector<MetricsRow>>>& runs) {
  std::vector<FractionComparison> out;
  for (double f : cfg.experiment.fractions) {
    FractionComparison fc;
    fc.fraction = f;
    fc.cot = mean_curve(runs.at("cot_" + fraction_tag(f)));
    fc.baseline = mean_curve(runs.at("baseline_" + fraction_tag(f)));
    if (fc.baseline.steps.empty() || fc.cot.steps.empty()) throw DataError("empty fine-tuning curves");
    const auto best = std::max_element(fc.baseline.success.begin(), fc.baseline.success.end());
    fc.baseline_best = *best;
    fc.baseline_steps_to_best = fc.baseline.steps[best - fc.baseline.success.begin()];
    for (std::size_t i = 0; i < fc.cot.steps.size(); ++i)
      if (fc.cot.success[i] >= fc.baseline_best) {
        fc.cot_steps_to_baseline_best = fc.cot.steps[i];
        break;
      }
    fc.cot_final = fc.cot.success.back();
    fc.baseline_final = fc.baseline.success.back();
    out.push_back(fc);
  }
  return out;
}

void write_efficiency_outputs(const fs::path& out_dir, const std::vector<FractionComparison>& cmp) {
  {
    std::ofstream csv(out_dir / "curves.csv", std::ios::binary);
    if (!csv) throw DataError("cannot write curves.csv");
    csv << "fraction,arm,step,eval_success_mean\n";
    char buf[64];
    for (const auto& fc : cmp)
      for (const auto* arm : {&fc.cot, &fc.baseline})
        for (std::size_t i = 0; i < arm->steps.size(); ++i) {
          std::snprintf(buf, sizeof(buf), ",%lld,%.9g\n", static_cast<long long>(arm->steps[i]), arm->success[i]);
          csv << fraction_tag(fc.fraction) << "," << (arm == &fc.cot ? "cot" : "baseline") << buf;
        }
  }
  std::vector<Panel> panels;
  Json summary = Json::array();
  for (const auto& fc : cmp) {
    Panel p;
    p.title = "data fraction " + fraction_tag(fc.fraction);
    p.x_label = "fine-tuning step";
    p.y_label = "success rate";
    p.y_range = std::make_pair(0.0, 1.0);
    for (const auto* arm : {&fc.cot, &fc.baseline}) {
      Series s;
      s.label = arm == &fc.cot ? "interleaved flow pretraining" : "frames-only pretraining";
      for (std::size_t i = 0; i < arm->steps.size(); ++i)
        s.points.emplace_back(static_cast<double>(arm->steps[i]), arm->success[i]);
      p.series.push_back(std::move(s));
    }
    panels.push_back(std::move(p));
    summary.push_back({{"fraction", fc.fraction},
                       {"baseline_best", fc.baseline_best},
                       {"baseline_steps_to_best", fc.baseline_steps_to_best},
                       {"cot_steps_to_baseline_best", fc.cot_steps_to_baseline_best},
                       {"cot_final", fc.cot_final},
                       {"baseline_final", fc.baseline_final}});
  }
  std::ofstream svg(out_dir / "efficiency.svg", std::ios::binary);
  svg << render_panels(panels);
  write_json_file(out_dir / "efficiency_summary.json", summary);
}

}  // namespace

std::vector<FractionComparison> efficiency_study(const RunConfig& cfg, const fs::path& out_dir, int threads) {
  fs::create_directories(out_dir);
  write_json_file(out_dir / "resolved_config.json", to_json(cfg));
  std::vector<std::string> finished;
  std::map<std::string, fs::path> pretrained;
  for (const auto& arm : kEfficiencyArms) {
    RunConfig c = cfg;
    c.train.layout = arm.pretrain_layout;
    const fs::path dir = pretrain_dir(out_dir, arm);
    guarded(out_dir, finished, dir.string(), [&] { pretrained[arm.name] = run_or_reuse(c, false, dir, std::nullopt, threads).checkpoint; });
  }
  std::map<std::string, std::vector<std::vector<MetricsRow>>> runs;
  for (double f : cfg.experiment.fractions)
    for (const auto& arm : kEfficiencyArms)
      for (auto seed : cfg.experiment.seeds) {
        const fs::path dir = finetune_dir(out_dir, arm, f, seed);
        guarded(out_dir, finished, dir.string(), [&] {
          runs[arm.name + "_" + fraction_tag(f)].push_back(
              run_or_reuse(finetune_config(cfg, f, seed), true, dir, pretrained.at(arm.name), threads).rows);
        });
      }
  auto cmp = compare(cfg, runs);
  write_efficiency_outputs(out_dir, cmp);
  fs::remove(out_dir / "PARTIAL.txt");
  return cmp;
}

std::vector<FractionComparison> read_efficiency_runs(const RunConfig& cfg, const fs::path& out_dir) {
  std::map<std::string, std::vector<std::vector<MetricsRow>>> runs;
  for (double f : cfg.experiment.fractions)
    for (const auto& arm : kEfficiencyArms)
      for (auto seed : cfg.experiment.seeds)
        runs[arm.name + "_" + fraction_tag(f)].push_back(read_metrics(finetune_dir(out_dir, arm, f, seed) / "metrics.csv"));
  return compare(cfg, runs);
}

}  // namespace flowcot
