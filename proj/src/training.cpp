#include "flowcot/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "flowcot/checkpoint.hpp"
#include "flowcot/config.hpp"
#include "flowcot/dataset.hpp"
#include "flowcot/error.hpp"
#include "flowcot/evalrollout.hpp"
#include "flowcot/hash.hpp"
#include "flowcot/optim.hpp"
#include "flowcot/parallel.hpp"
#include "flowcot/sampling.hpp"

namespace flowcot {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (steps < 0) fail("steps must be >= 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) fail("data_fraction must lie in (0, 1]");
  if (window < 1) fail("window must be >= 1");
  if (!(stop_below >= 0.0)) fail("stop_below must be >= 0");
  if (lr_decay_steps < 0) fail("lr_decay_steps must be >= 0");
  if (train_eval_windows < 0 || eval_episodes < 0 || eval_max_windows < 0) fail("eval sizes must be >= 0");
}

std::vector<float> loss_weights(const TokenSequence& seq, double lambda) {
  int n_flow = 0, n_frame = 0, n_action = 0;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    if (!seq.mask[i]) continue;
    switch (seq.tags[i + 1].kind) {
      case BlockKind::kFlow: ++n_flow; break;
      case BlockKind::kFrame: ++n_frame; break;
      case BlockKind::kAction: ++n_action; break;
      default: break;
    }
  }
  std::vector<float> w(seq.size(), 0.0f);
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    if (!seq.mask[i]) continue;
    switch (seq.tags[i + 1].kind) {
      case BlockKind::kFlow: w[i] = static_cast<float>(1.0 / n_flow); break;
      case BlockKind::kFrame: w[i] = static_cast<float>(lambda / n_frame); break;
      case BlockKind::kAction: w[i] = static_cast<float>(1.0 / n_action); break;
      default: break;
    }
  }
  return w;
}

LossReport loss_report(const Logits<float>& logits, const TokenSequence& seq, double lambda) {
  double flow = 0, frame = 0, action = 0;
  LossReport r;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    if (!seq.mask[i]) continue;
    const auto row = logits.row(static_cast<int>(i));
    double mx = row[0];
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double sum = 0;
    for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
    const double ce = std::log(sum) + mx - static_cast<double>(row[seq.ids[i + 1]]);
    switch (seq.tags[i + 1].kind) {
      case BlockKind::kFlow: flow += ce, ++r.n_flow; break;
      case BlockKind::kFrame: frame += ce, ++r.n_frame; break;
      case BlockKind::kAction: action += ce, ++r.n_action; break;
      default: break;
    }
  }
  r.flow_term = r.n_flow ? flow / r.n_flow : 0.0;
  r.frame_term = r.n_frame ? frame / r.n_frame : 0.0;
  r.action_term = r.n_action ? action / r.n_action : 0.0;
  r.total = r.flow_term + lambda * r.frame_term + r.action_term;
  return r;
}

LossReport wm_loss(const ModelParams<float>& p, const TokenSequence& seq, double lambda) {
  return loss_report(forward(p, seq.ids, seq.segments()), seq, lambda);
}

LossReport policy_loss(const ModelParams<float>& p, const TokenSequence& seq) {
  if (seq.size() == 0) return {};
  LossReport r = loss_report(forward(p, seq.ids, seq.segments()), seq, 0.0);
  r.flow_term = r.frame_term = 0;
  r.n_flow = r.n_frame = 0;
  r.total = r.action_term;
  return r;
}

int fraction_count(double fraction, int n) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
  // Guard against 0.5 * 2000 landing a hair above an integer.
  const double x = fraction * n;
  const double r = std::round(x);
  const int k = std::abs(x - r) < 1e-9 ? static_cast<int>(r) : static_cast<int>(std::ceil(x));
  return std::clamp(k, std::min(1, n), n);
}

std::string metrics_header() { return "step,total,flow_term,frame_term,action_term,eval_token_acc,eval_success"; }

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  const bool policy = r.loss.n_action > 0;
  std::string s = std::to_string(r.step) + "," + fmt(r.loss.total) + ",";
  s += policy ? "," : fmt(r.loss.flow_term) + ",";
  s += policy ? "," : fmt(r.loss.frame_term) + ",";
  s += policy ? fmt(r.loss.action_term) + "," : ",";
  s += opt_fmt(r.eval_token_acc) + "," + opt_fmt(r.eval_success);
  return s;
}

namespace {

struct Item {
  TokenSequence seq;
  std::vector<Segment> segs;
  std::vector<std::uint32_t> targets;
  std::vector<float> weights;
};

Item make_item(TokenSequence seq, double lambda) {
  Item it;
  it.segs = seq.segments();
  it.targets = seq.targets();
  it.weights = loss_weights(seq, lambda);
  it.seq = std::move(seq);
  return it;
}

// Evenly strided selection of at most `cap` indices out of n.
std::vector<std::size_t> strided(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> idx;
  if (cap == 0 || n == 0) return idx;
  const std::size_t k = std::min(n, cap);
  for (std::size_t i = 0; i < k; ++i) idx.push_back(i * n / k);
  return idx;
}

// Epoch-wise Fisher-Yates permutations drawn from a 64-bit Mersenne Twister;
// independent of the total step count, so truncated runs are prefixes.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed) : n_(n), rng_(splitmix64(seed ^ 0x6261746368ULL)) {}
  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
    pos_ = 0;
  }
  std::size_t n_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct Prepared {
  DatasetManifest manifest;
  Codebook codebook;
  ModelConfig model;
  std::vector<std::uint64_t> used_seeds;
  std::vector<Item> train;
  std::vector<std::size_t> train_eval;
  std::vector<TokenizedEpisode> heldout_windows;
  std::vector<Item> heldout_items;
  std::vector<std::uint64_t> heldout_seeds;
};

Prepared prepare(const TrainJob& job) {
  const TrainConfig& tc = job.train;
  tc.validate();
  Prepared d;
  d.manifest = read_manifest(job.data_dir);
  d.codebook = load_codebook(job.codebook_path);
  const FlowCodecConfig codec{job.sigma};
  codec.validate();

  d.model = job.model;
  d.model.vocab.n_text = static_cast<std::uint32_t>(text_vocabulary(d.manifest.world).size());
  d.model.vocab.n_code = static_cast<std::uint32_t>(d.codebook.size());
  d.model.validate();

  const int n_used = fraction_count(tc.data_fraction, static_cast<int>(d.manifest.seeds.size()));
  d.used_seeds.assign(d.manifest.seeds.begin(), d.manifest.seeds.begin() + n_used);

  struct Window {
    int start = 0;
    TokenizedEpisode ep;
  };
  auto windows_of = [&](const TokenizedEpisode& ep) {
    std::vector<Window> out;
    for (int s : window_starts(ep.length(), tc.window))
      out.push_back({s, ep.window(s, std::min(tc.window, ep.length()))});
    return out;
  };
  auto sequence_of = [&](const Window& w) {
    TokenSequence seq = assemble(w.ep, tc.layout, d.model.vocab, d.model.max_seq_len);
    if (w.start > 0) keep_transitions_from(seq, w.ep.length() - 1);
    return make_item(std::move(seq), tc.lambda);
  };
  auto tokenized = [&](const Episode& ep) {
    TokenizedEpisode t = tokenize_episode(ep, d.codebook, codec);
    if (tc.blank_instruction) t.instruction.clear();
    return t;
  };

  for (auto seed : d.used_seeds) {
    const Episode ep = read_episode(job.data_dir, seed, d.manifest.world);
    for (const auto& w : windows_of(tokenized(ep))) d.train.push_back(sequence_of(w));
  }
  if (d.train.empty()) throw DataError("dataset has no training windows");
  d.train_eval = strided(d.train.size(), static_cast<std::size_t>(tc.train_eval_windows));

  if (tc.eval_episodes > 0) {
    d.heldout_seeds = successful_seeds(d.manifest.world, tc.eval_seed_base, tc.eval_episodes);
    check_disjoint(d.heldout_seeds, d.manifest.seeds);
    std::vector<Window> all;
    for (auto seed : d.heldout_seeds)
      for (auto& w : windows_of(tokenized(gen_episode(d.manifest.world, seed)))) all.push_back(std::move(w));
    for (auto i : strided(all.size(), static_cast<std::size_t>(tc.eval_max_windows))) {
      d.heldout_windows.push_back(all[i].ep);
      if (tc.layout == Layout::kPolicy) d.heldout_items.push_back(sequence_of(all[i]));
    }
  }
  return d;
}

double teacher_forced_accuracy(const ModelParams<float>& p, const std::vector<Item>& items) {
  std::size_t same = 0, total = 0;
  for (const auto& it : items) {
    const Logits<float> lg = forward(p, it.seq.ids, it.segs);
    for (std::size_t i = 0; i + 1 < it.seq.size(); ++i) {
      if (!it.seq.mask[i]) continue;
      same += argmax_range(lg.row(static_cast<int>(i)), 0, p.config.vocab.total()) == it.seq.ids[i + 1];
      ++total;
    }
  }
  return total ? static_cast<double>(same) / static_cast<double>(total) : 0.0;
}

MetricsRow evaluate(const ModelParams<float>& p, const Prepared& d, const TrainJob& job, std::int64_t step) {
  const TrainConfig& tc = job.train;
  MetricsRow row;
  row.step = step;
  std::vector<LossReport> reps(d.train_eval.size());
  parallel_for(static_cast<int>(reps.size()), job.threads, [&](int i) {
    reps[i] = loss_report(forward(p, d.train[d.train_eval[i]].seq.ids, d.train[d.train_eval[i]].segs),
                          d.train[d.train_eval[i]].seq, tc.lambda);
  });
  double flow = 0, frame = 0, action = 0;
  int nf = 0, nr = 0, na = 0;
  for (const auto& r : reps) {
    if (r.n_flow) flow += r.flow_term, ++nf;
    if (r.n_frame) frame += r.frame_term, ++nr;
    if (r.n_action) action += r.action_term, ++na;
    row.loss.n_flow += r.n_flow;
    row.loss.n_frame += r.n_frame;
    row.loss.n_action += r.n_action;
  }
  row.loss.flow_term = nf ? flow / nf : 0.0;
  row.loss.frame_term = nr ? frame / nr : 0.0;
  row.loss.action_term = na ? action / na : 0.0;
  row.loss.total = row.loss.flow_term + tc.lambda * row.loss.frame_term + row.loss.action_term;

  if (tc.eval_episodes > 0) {
    if (tc.layout == Layout::kPolicy) {
      row.eval_token_acc = teacher_forced_accuracy(p, d.heldout_items);
      const PolicyModel m{p, tc.window, tc.blank_instruction, d.codebook};
      std::vector<PolicyOutcome> out(d.heldout_seeds.size());
      parallel_for(static_cast<int>(out.size()), job.threads, [&](int i) {
        out[i] = run_policy_episode(m, d.manifest.world, d.heldout_seeds[i], d.manifest.world.horizon_max);
      });
      row.eval_success = aggregate(std::move(out)).success_rate;
    } else {
      // Per-window accuracies are combined in a fixed order.
      std::vector<double> acc(d.heldout_windows.size());
      parallel_for(static_cast<int>(acc.size()), job.threads, [&](int i) {
        acc[i] = heldout_frame_accuracy(p, tc.layout, tc.window, std::span(&d.heldout_windows[i], 1));
      });
      double s = 0;
      for (double a : acc) s += a;
      row.eval_token_acc = acc.empty() ? 0.0 : s / static_cast<double>(acc.size());
    }
  }
  return row;
}

void add_in_place(std::vector<float>& a, const std::vector<float>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

TrainSummary run(const TrainJob& job, bool policy) {
  const TrainConfig& tc = job.train;
  if (policy != (tc.layout == Layout::kPolicy))
    throw ConfigError(policy ? "train-policy requires the policy layout" : "train-wm requires a world-model layout");
  Prepared d = prepare(job);

  Checkpoint ckpt;
  std::set<std::uint64_t> seen(d.used_seeds.begin(), d.used_seeds.end());
  if (job.init_checkpoint) {
    Checkpoint init = load_checkpoint(*job.init_checkpoint);
    if (!(init.params.config.vocab == d.model.vocab))
      throw ConfigError("init checkpoint vocabulary does not match the dataset codebook");
    if (init.codebook_hash != d.codebook.content_hash())
      throw ConfigError("init checkpoint was trained with a different codebook");
    if (init.codec.sigma != job.sigma) throw ConfigError("init checkpoint uses a different flow sigma");
    ModelConfig want = d.model;
    if (!(init.params.config == want))
      throw ConfigError("init checkpoint model shape differs from the configured model");
    ckpt.params = std::move(init.params);
    seen.insert(init.train_seeds.begin(), init.train_seeds.end());
  } else {
    ckpt.params = init_params(d.model, tc.seed);
  }
  ckpt.layout = tc.layout;
  ckpt.window = tc.window;
  ckpt.codebook_hash = d.codebook.content_hash();
  ckpt.world = d.manifest.world;
  ckpt.codec = FlowCodecConfig{job.sigma};
  ckpt.blank_instruction = tc.blank_instruction;
  ckpt.train_seeds.assign(seen.begin(), seen.end());

  fs::create_directories(job.out_dir);
  save_codebook(job.out_dir / "codebook.bin", d.codebook);
  save_codebook_summary(job.out_dir / "codebook.json", d.codebook);
  write_json_file(job.out_dir / "provenance.json",
                  Json{{"tool_version", kToolVersion},
                       {"manifest_hash", hex64(manifest_hash(job.data_dir))},
                       {"codebook_hash", hex64(d.codebook.content_hash())},
                       {"init_checkpoint", job.init_checkpoint ? job.init_checkpoint->string() : ""},
                       {"episodes_used", d.used_seeds.size()},
                       {"train_windows", d.train.size()},
                       {"heldout_seeds", d.heldout_seeds}});

  TrainSummary summary;
  summary.checkpoint = job.out_dir / "model.fvc";
  summary.metrics_csv = job.out_dir / "metrics.csv";
  std::ofstream csv(summary.metrics_csv, std::ios::binary);
  if (!csv) throw DataError("cannot write " + summary.metrics_csv.string());
  csv << metrics_header() << '\n';

  auto record = [&](std::int64_t step) {
    MetricsRow row = evaluate(ckpt.params, d, job, step);
    csv << format_metrics_row(row) << '\n' << std::flush;
    ckpt.step = step;
    save_checkpoint(summary.checkpoint, ckpt);
    std::fprintf(stderr, "[%s] step %lld total %.5f%s\n", layout_name(tc.layout).c_str(),
                 static_cast<long long>(step), row.loss.total,
                 row.eval_success ? (" success " + fmt(*row.eval_success)).c_str()
                 : row.eval_token_acc ? (" acc " + fmt(*row.eval_token_acc)).c_str()
                                      : "");
    summary.rows.push_back(row);
    return row;
  };

  record(0);
  const AdamConfig adam{tc.lr, tc.beta1, tc.beta2, tc.eps};
  AdamState state;
  BatchStream stream(d.train.size(), tc.seed);
  const int B = tc.batch_size;
  const std::size_t np = ckpt.params.values.size();
  std::vector<Gradients<float>> bufs(B, Gradients<float>(np));
  std::vector<double> losses(B);
  std::vector<std::size_t> batch(B);

  for (std::int64_t step = 1; step <= tc.steps; ++step) {
    for (auto& b : batch) b = stream.next();
    parallel_for(B, job.threads, [&](int i) {
      std::fill(bufs[i].values.begin(), bufs[i].values.end(), 0.0f);
      const Item& it = d.train[batch[i]];
      losses[i] = loss_and_grad<float>(ckpt.params, it.seq.ids, it.segs, it.targets, it.weights, bufs[i]);
    });
    // Fixed pairwise reduction tree, independent of the thread count.
    for (int stride = 1; stride < B; stride *= 2)
      for (int i = 0; i + stride < B; i += 2 * stride) add_in_place(bufs[i].values, bufs[i + stride].values);
    std::vector<float>& g = bufs[0].values;
    const float inv = 1.0f / static_cast<float>(B);
    for (auto& x : g) x *= inv;
    double loss = 0;
    for (double l : losses) loss += l;
    const double norm = clip_global_norm(g, kClipNorm);
    if (!std::isfinite(loss) || !std::isfinite(norm))
      throw DivergenceError("non-finite loss at step " + std::to_string(step) + "; last good checkpoint at step " +
                            std::to_string(ckpt.step) + " kept in " + summary.checkpoint.string());
    AdamConfig at = adam;
    at.lr = scheduled_lr(tc, step);
    adam_step(ckpt.params.values, g, state, at);
    summary.steps_run = step;
    if (step % tc.eval_every == 0 || step == tc.steps) {
      const MetricsRow row = record(step);
      if (tc.stop_below > 0.0 && row.loss.total < tc.stop_below) break;
    }
  }
  return summary;
}

}  // namespace

double scheduled_lr(const TrainConfig& tc, std::int64_t step) {
  if (tc.lr_decay_steps <= 0) return tc.lr;
  const double x = static_cast<double>(std::min<std::int64_t>(step - 1, tc.lr_decay_steps)) / tc.lr_decay_steps;
  return tc.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * x)));
}

TrainSummary train_world_model(const TrainJob& job) { return run(job, false); }
TrainSummary finetune_policy(const TrainJob& job) { return run(job, true); }

}  // namespace flowcot
