#include "flowcot/model.hpp"

#include <cmath>
#include <random>

#include "flowcot/error.hpp"
#include "kernels.hpp"

namespace flowcot {

void VocabLayout::validate() const {
  if (n_special != kNumSpecial) throw ConfigError("vocab must have 7 special tokens");
  if (n_action != kNumActionTokens) throw ConfigError("vocab must have 6 action tokens");
}

Segment default_segment(std::uint32_t token, const VocabLayout& v) {
  if (v.is_text(token)) return Segment::kText;
  if (v.is_code(token)) return Segment::kFrame;
  if (v.is_action(token)) return Segment::kAction;
  return Segment::kSpecial;
}

void ModelConfig::validate() const {
  vocab.validate();
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq_len <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

std::vector<TensorInfo> param_layout(const ModelConfig& c) {
  const int d = c.d_model, V = static_cast<int>(c.vocab.total());
  std::vector<TensorInfo> t;
  std::size_t off = 0;
  auto add = [&](std::string name, TensorKind kind, int rows, int cols) {
    t.push_back({std::move(name), kind, rows, cols, off});
    off += static_cast<std::size_t>(rows) * cols;
  };
  add("tok_emb", TensorKind::kTokenEmbedding, V, d);
  add("pos_emb", TensorKind::kPositionEmbedding, c.max_seq_len, d);
  add("seg_emb", TensorKind::kSegmentEmbedding, kNumSegments, d);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.scale", TensorKind::kNormScale, 1, d);
    add(p + "ln1.offset", TensorKind::kNormOffset, 1, d);
    add(p + "attn.wq", TensorKind::kAttention, d, d);
    add(p + "attn.wk", TensorKind::kAttention, d, d);
    add(p + "attn.wv", TensorKind::kAttention, d, d);
    add(p + "attn.wo", TensorKind::kAttention, d, d);
    add(p + "ln2.scale", TensorKind::kNormScale, 1, d);
    add(p + "ln2.offset", TensorKind::kNormOffset, 1, d);
    add(p + "mlp.w1", TensorKind::kMlpWeight, d, c.d_ff);
    add(p + "mlp.b1", TensorKind::kMlpBias, 1, c.d_ff);
    add(p + "mlp.w2", TensorKind::kMlpWeight, c.d_ff, d);
    add(p + "mlp.b2", TensorKind::kMlpBias, 1, d);
  }
  add("lnf.scale", TensorKind::kNormScale, 1, d);
  add("lnf.offset", TensorKind::kNormOffset, 1, d);
  add("out.w", TensorKind::kOutputWeight, d, V);
  add("out.b", TensorKind::kOutputBias, 1, V);
  return t;
}

std::size_t param_count(const ModelConfig& cfg) {
  const auto layout = param_layout(cfg);
  return layout.back().offset + layout.back().size();
}

namespace {

constexpr int kLayerTensors = 12;

struct LayerOff {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Offsets {
  std::size_t tok, pos, seg;
  std::vector<LayerOff> layers;
  std::size_t lnf_g, lnf_b, wout, bout;
};

Offsets offsets_of(const ModelConfig& c) {
  const auto t = param_layout(c);
  Offsets o{t[0].offset, t[1].offset, t[2].offset, {}, 0, 0, 0, 0};
  for (int l = 0; l < c.n_layers; ++l) {
    const std::size_t b = 3 + static_cast<std::size_t>(l) * kLayerTensors;
    o.layers.push_back({t[b].offset, t[b + 1].offset, t[b + 2].offset, t[b + 3].offset, t[b + 4].offset,
                        t[b + 5].offset, t[b + 6].offset, t[b + 7].offset, t[b + 8].offset,
                        t[b + 9].offset, t[b + 10].offset, t[b + 11].offset});
  }
  const std::size_t f = 3 + static_cast<std::size_t>(c.n_layers) * kLayerTensors;
  o.lnf_g = t[f].offset;
  o.lnf_b = t[f + 1].offset;
  o.wout = t[f + 2].offset;
  o.bout = t[f + 3].offset;
  return o;
}

template <class T>
struct LayerActs {
  std::vector<T> x_in, xhat1, h1, mean1, rstd1, q, k, v, kt, probs, att, x_mid, xhat2, h2, mean2,
      rstd2, u, g;
};

template <class T>
struct Acts {
  int n = 0;
  std::vector<LayerActs<T>> layers;
  std::vector<T> x_out, xhatf, hf, meanf, rstdf;
  Logits<T> logits;
};

void check_inputs(const ModelConfig& c, std::span<const std::uint32_t> tokens,
                  std::span<const Segment> segments) {
  if (tokens.empty()) throw DataError("empty token sequence");
  if (static_cast<int>(tokens.size()) > c.max_seq_len)
    throw LengthError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  if (segments.size() != tokens.size()) throw DataError("segments and tokens differ in length");
  for (auto t : tokens)
    if (t >= c.vocab.total()) throw DataError("token id " + std::to_string(t) + " out of vocabulary");
}

template <class T>
void embed_row(const ModelParams<T>& p, const Offsets& o, std::uint32_t tok, int pos, Segment seg, T* x) {
  const int d = p.config.d_model;
  const T* te = p.values.data() + o.tok + static_cast<std::size_t>(tok) * d;
  const T* pe = p.values.data() + o.pos + static_cast<std::size_t>(pos) * d;
  const T* se = p.values.data() + o.seg + static_cast<std::size_t>(seg) * d;
  for (int c = 0; c < d; ++c) x[c] = (te[c] + pe[c]) + se[c];
}

template <class T>
void run_forward(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                 std::span<const Segment> segments, Acts<T>& a) {
  const ModelConfig& c = p.config;
  check_inputs(c, tokens, segments);
  const Offsets o = offsets_of(c);
  const int n = static_cast<int>(tokens.size());
  const int d = c.d_model, H = c.n_heads, hd = c.head_dim(), F = c.d_ff;
  const int V = static_cast<int>(c.vocab.total());
  const T scale = T(1) / std::sqrt(T(hd));
  const T* W = p.values.data();
  const std::size_t nd = static_cast<std::size_t>(n) * d;

  a.n = n;
  a.layers.assign(c.n_layers, {});
  std::vector<T> x(nd);
  for (int i = 0; i < n; ++i) embed_row(p, o, tokens[i], i, segments[i], x.data() + static_cast<std::size_t>(i) * d);

  for (int l = 0; l < c.n_layers; ++l) {
    const LayerOff& lo = o.layers[l];
    LayerActs<T>& L = a.layers[l];
    L.x_in = x;
    L.xhat1.resize(nd);
    L.h1.resize(nd);
    L.mean1.resize(n);
    L.rstd1.resize(n);
    for (int i = 0; i < n; ++i)
      kernels::layernorm_row(x.data() + i * d, W + lo.ln1_g, W + lo.ln1_b, L.xhat1.data() + i * d,
                             L.h1.data() + i * d, d, L.mean1[i], L.rstd1[i]);
    L.q.resize(nd);
    L.k.resize(nd);
    L.v.resize(nd);
    kernels::matmul<T>(L.h1.data(), W + lo.wq, nullptr, L.q.data(), n, d, d);
    kernels::matmul<T>(L.h1.data(), W + lo.wk, nullptr, L.k.data(), n, d, d);
    kernels::matmul<T>(L.h1.data(), W + lo.wv, nullptr, L.v.data(), n, d, d);
    L.kt.resize(nd);
    kernels::transpose(L.k.data(), L.kt.data(), n, d);
    L.probs.assign(static_cast<std::size_t>(H) * n * n, T(0));
    L.att.resize(nd);
    for (int h = 0; h < H; ++h)
      for (int i = 0; i < n; ++i)
        kernels::attend_row(L.q.data() + static_cast<std::size_t>(i) * d + h * hd,
                            L.kt.data() + static_cast<std::size_t>(h) * hd * n, n, L.v.data() + h * hd, d,
                            i + 1, hd, scale, L.probs.data() + (static_cast<std::size_t>(h) * n + i) * n,
                            L.att.data() + static_cast<std::size_t>(i) * d + h * hd);
    std::vector<T> proj(nd);
    kernels::matmul<T>(L.att.data(), W + lo.wo, nullptr, proj.data(), n, d, d);
    for (std::size_t e = 0; e < nd; ++e) x[e] = x[e] + proj[e];
    L.x_mid = x;

    L.xhat2.resize(nd);
    L.h2.resize(nd);
    L.mean2.resize(n);
    L.rstd2.resize(n);
    for (int i = 0; i < n; ++i)
      kernels::layernorm_row(x.data() + i * d, W + lo.ln2_g, W + lo.ln2_b, L.xhat2.data() + i * d,
                             L.h2.data() + i * d, d, L.mean2[i], L.rstd2[i]);
    L.u.resize(static_cast<std::size_t>(n) * F);
    L.g.resize(L.u.size());
    kernels::matmul<T>(L.h2.data(), W + lo.w1, W + lo.b1, L.u.data(), n, d, F);
    for (std::size_t e = 0; e < L.u.size(); ++e) L.g[e] = kernels::gelu(L.u[e]);
    kernels::matmul<T>(L.g.data(), W + lo.w2, W + lo.b2, proj.data(), n, F, d);
    for (std::size_t e = 0; e < nd; ++e) x[e] = x[e] + proj[e];
  }

  a.x_out = x;
  a.xhatf.resize(nd);
  a.hf.resize(nd);
  a.meanf.resize(n);
  a.rstdf.resize(n);
  for (int i = 0; i < n; ++i)
    kernels::layernorm_row(x.data() + i * d, W + o.lnf_g, W + o.lnf_b, a.xhatf.data() + i * d,
                           a.hf.data() + i * d, d, a.meanf[i], a.rstdf[i]);
  a.logits.n = n;
  a.logits.vocab = V;
  a.logits.values.resize(static_cast<std::size_t>(n) * V);
  kernels::matmul<T>(a.hf.data(), W + o.wout, W + o.bout, a.logits.values.data(), n, d, V);
}

template <class T>
T log_sum_exp(std::span<const T> row) {
  T mx = row[0];
  for (T v : row) mx = std::max(mx, v);
  T sum = 0;
  for (T v : row) sum += std::exp(v - mx);
  return std::log(sum) + mx;
}

// dx += layernorm backward of dy; accumulates scale/offset gradients.
template <class T>
void layernorm_backward(const T* dy, const T* xhat, const T* rstd, const T* gamma, T* dgamma, T* dbeta,
                        T* dx, int n, int d) {
  std::vector<T> dxhat(d);
  for (int i = 0; i < n; ++i) {
    const T* dyr = dy + static_cast<std::size_t>(i) * d;
    const T* xr = xhat + static_cast<std::size_t>(i) * d;
    T m1 = 0, m2 = 0;
    for (int c = 0; c < d; ++c) {
      dgamma[c] += dyr[c] * xr[c];
      dbeta[c] += dyr[c];
      dxhat[c] = dyr[c] * gamma[c];
      m1 += dxhat[c];
      m2 += dxhat[c] * xr[c];
    }
    m1 /= T(d);
    m2 /= T(d);
    T* dxr = dx + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) dxr[c] += rstd[i] * (dxhat[c] - m1 - xr[c] * m2);
  }
}

template <class T>
void add_column_sums(const T* m, T* out, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[j] += m[static_cast<std::size_t>(i) * cols + j];
}

}  // namespace

ModelParams<float> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<float> p{cfg, std::vector<float>(param_count(cfg), 0.0f)};
  std::mt19937_64 rng(seed);
  const double out_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& t : param_layout(cfg)) {
    float* v = p.values.data() + t.offset;
    switch (t.kind) {
      case TensorKind::kNormScale:
        std::fill(v, v + t.size(), 1.0f);
        break;
      case TensorKind::kNormOffset:
      case TensorKind::kMlpBias:
      case TensorKind::kOutputBias:
        break;
      default: {
        std::normal_distribution<double> dist(0.0, t.kind == TensorKind::kOutputWeight ? out_std : 0.02);
        for (std::size_t e = 0; e < t.size(); ++e) v[e] = static_cast<float>(dist(rng));
      }
    }
  }
  return p;
}

template <class T>
Logits<T> forward(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                  std::span<const Segment> segments) {
  Acts<T> a;
  run_forward(p, tokens, segments, a);
  return std::move(a.logits);
}

template <class T>
Logits<T> forward(const ModelParams<T>& p, std::span<const std::uint32_t> tokens) {
  std::vector<Segment> segs;
  for (auto t : tokens) segs.push_back(default_segment(t, p.config.vocab));
  return forward(p, tokens, std::span<const Segment>(segs));
}

template <class T>
T masked_ce(const Logits<T>& logits, std::span<const std::uint32_t> targets,
            std::span<const std::uint8_t> mask) {
  if (targets.size() != static_cast<std::size_t>(logits.n) || mask.size() != targets.size())
    throw DataError("masked_ce: logits, targets and mask differ in length");
  T sum = 0;
  int count = 0;
  for (int i = 0; i < logits.n; ++i) {
    if (!mask[i]) continue;
    const auto row = logits.row(i);
    sum += log_sum_exp(row) - row[targets[i]];
    ++count;
  }
  return count == 0 ? T(0) : sum / T(count);
}

template <class T>
T loss_and_grad(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                std::span<const Segment> segments, std::span<const std::uint32_t> targets,
                std::span<const T> weights, Gradients<T>& accum) {
  const ModelConfig& c = p.config;
  if (targets.size() != tokens.size() || weights.size() != tokens.size())
    throw DataError("loss_and_grad: tokens, targets and weights differ in length");
  if (accum.values.size() != p.values.size()) accum.values.assign(p.values.size(), T(0));

  bool any = false;
  for (T w : weights) any = any || w != T(0);
  if (!any) return T(0);

  Acts<T> a;
  run_forward(p, tokens, segments, a);
  const Offsets o = offsets_of(c);
  const int n = a.n, d = c.d_model, H = c.n_heads, hd = c.head_dim(), F = c.d_ff;
  const int V = static_cast<int>(c.vocab.total());
  const T scale = T(1) / std::sqrt(T(hd));
  const T* W = p.values.data();
  T* G = accum.values.data();
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  std::vector<T> scratch;

  // Loss and dL/dlogits.
  T loss = 0;
  std::vector<T> dlogits(static_cast<std::size_t>(n) * V, T(0));
  for (int i = 0; i < n; ++i) {
    const T w = weights[i];
    if (w == T(0)) continue;
    if (targets[i] >= static_cast<std::uint32_t>(V)) throw DataError("target id out of vocabulary");
    const auto row = a.logits.row(i);
    const T lse = log_sum_exp(row);
    loss += w * (lse - row[targets[i]]);
    T* dl = dlogits.data() + static_cast<std::size_t>(i) * V;
    for (int j = 0; j < V; ++j) dl[j] = w * std::exp(row[j] - lse);
    dl[targets[i]] -= w;
  }

  kernels::matmul_tn_acc(a.hf.data(), dlogits.data(), G + o.wout, n, d, V);
  add_column_sums(dlogits.data(), G + o.bout, n, V);
  std::vector<T> dh(nd);
  kernels::matmul_nt(dlogits.data(), W + o.wout, dh.data(), n, V, d, scratch);
  std::vector<T> dx(nd, T(0));
  layernorm_backward(dh.data(), a.xhatf.data(), a.rstdf.data(), W + o.lnf_g, G + o.lnf_g, G + o.lnf_b,
                     dx.data(), n, d);

  std::vector<T> du(static_cast<std::size_t>(n) * F), datt(nd), dq(nd), dk(nd), dv(nd), vt(nd),
      dp(n), ds(n), acc(hd);
  for (int l = c.n_layers - 1; l >= 0; --l) {
    const LayerOff& lo = o.layers[l];
    const LayerActs<T>& L = a.layers[l];

    // MLP branch: x_out = x_mid + gelu(h2 W1 + b1) W2 + b2.
    kernels::matmul_tn_acc(L.g.data(), dx.data(), G + lo.w2, n, F, d);
    add_column_sums(dx.data(), G + lo.b2, n, d);
    kernels::matmul_nt(dx.data(), W + lo.w2, du.data(), n, d, F, scratch);
    for (std::size_t e = 0; e < du.size(); ++e) du[e] = du[e] * kernels::gelu_grad(L.u[e]);
    kernels::matmul_tn_acc(L.h2.data(), du.data(), G + lo.w1, n, d, F);
    add_column_sums(du.data(), G + lo.b1, n, F);
    kernels::matmul_nt(du.data(), W + lo.w1, dh.data(), n, F, d, scratch);
    layernorm_backward(dh.data(), L.xhat2.data(), L.rstd2.data(), W + lo.ln2_g, G + lo.ln2_g, G + lo.ln2_b,
                       dx.data(), n, d);

    // Attention branch: x_mid = x_in + attn(h1) Wo.
    kernels::matmul_tn_acc(L.att.data(), dx.data(), G + lo.wo, n, d, d);
    kernels::matmul_nt(dx.data(), W + lo.wo, datt.data(), n, d, d, scratch);
    std::fill(dq.begin(), dq.end(), T(0));
    std::fill(dk.begin(), dk.end(), T(0));
    std::fill(dv.begin(), dv.end(), T(0));
    kernels::transpose(L.v.data(), vt.data(), n, d);
    for (int h = 0; h < H; ++h) {
      const int hh = h * hd;
      for (int i = 0; i < n; ++i) {
        const int len = i + 1;
        const T* P = L.probs.data() + (static_cast<std::size_t>(h) * n + i) * n;
        const T* dout = datt.data() + static_cast<std::size_t>(i) * d + hh;
        for (int j = 0; j < len; ++j) dp[j] = T(0);
        for (int cc = 0; cc < hd; ++cc) {
          const T g = dout[cc];
          const T* vrow = vt.data() + static_cast<std::size_t>(hh + cc) * n;
          for (int j = 0; j < len; ++j) dp[j] = std::fma(g, vrow[j], dp[j]);
        }
        T dot = 0;
        for (int j = 0; j < len; ++j) dot += P[j] * dp[j];
        for (int j = 0; j < len; ++j) ds[j] = P[j] * (dp[j] - dot);
        std::fill(acc.begin(), acc.end(), T(0));
        const T* qi = L.q.data() + static_cast<std::size_t>(i) * d + hh;
        for (int j = 0; j < len; ++j) {
          const T* kj = L.k.data() + static_cast<std::size_t>(j) * d + hh;
          const T sj = ds[j];
          const T ssj = sj * scale;
          const T pj = P[j];
          T* dkj = dk.data() + static_cast<std::size_t>(j) * d + hh;
          T* dvj = dv.data() + static_cast<std::size_t>(j) * d + hh;
          for (int cc = 0; cc < hd; ++cc) {
            acc[cc] = std::fma(sj, kj[cc], acc[cc]);
            dkj[cc] = std::fma(ssj, qi[cc], dkj[cc]);
            dvj[cc] = std::fma(pj, dout[cc], dvj[cc]);
          }
        }
        T* dqi = dq.data() + static_cast<std::size_t>(i) * d + hh;
        for (int cc = 0; cc < hd; ++cc) dqi[cc] = acc[cc] * scale;
      }
    }
    kernels::matmul_tn_acc(L.h1.data(), dq.data(), G + lo.wq, n, d, d);
    kernels::matmul_tn_acc(L.h1.data(), dk.data(), G + lo.wk, n, d, d);
    kernels::matmul_tn_acc(L.h1.data(), dv.data(), G + lo.wv, n, d, d);
    kernels::matmul_nt(dq.data(), W + lo.wq, dh.data(), n, d, d, scratch);
    kernels::matmul_nt(dk.data(), W + lo.wk, dh.data(), n, d, d, scratch, true);
    kernels::matmul_nt(dv.data(), W + lo.wv, dh.data(), n, d, d, scratch, true);
    layernorm_backward(dh.data(), L.xhat1.data(), L.rstd1.data(), W + lo.ln1_g, G + lo.ln1_g, G + lo.ln1_b,
                       dx.data(), n, d);
  }

  for (int i = 0; i < n; ++i) {
    const T* g = dx.data() + static_cast<std::size_t>(i) * d;
    T* te = G + o.tok + static_cast<std::size_t>(tokens[i]) * d;
    T* pe = G + o.pos + static_cast<std::size_t>(i) * d;
    T* se = G + o.seg + static_cast<std::size_t>(segments[i]) * d;
    for (int cc = 0; cc < d; ++cc) {
      te[cc] += g[cc];
      pe[cc] += g[cc];
      se[cc] += g[cc];
    }
  }
  return loss;
}

template <class T>
Gradients<T> grad(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                  std::span<const Segment> segments, std::span<const std::uint32_t> targets,
                  std::span<const std::uint8_t> mask) {
  if (mask.size() != tokens.size()) throw DataError("grad: mask and tokens differ in length");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  std::vector<T> w(mask.size(), T(0));
  if (count > 0)
    for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? T(1) / T(count) : T(0);
  Gradients<T> g(p.values.size());
  loss_and_grad(p, tokens, segments, targets, std::span<const T>(w), g);
  return g;
}

template <class T>
Gradients<T> grad(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                  std::span<const std::uint32_t> targets, std::span<const std::uint8_t> mask) {
  std::vector<Segment> segs;
  for (auto t : tokens) segs.push_back(default_segment(t, p.config.vocab));
  return grad(p, tokens, std::span<const Segment>(segs), targets, mask);
}

template <class T>
Decoder<T>::Decoder(const ModelParams<T>& p) : p_(&p) {
  const ModelConfig& c = p.config;
  c.validate();
  const std::size_t d = c.d_model, S = c.max_seq_len;
  kt_.assign(c.n_layers, std::vector<T>(d * S));
  v_.assign(c.n_layers, std::vector<T>(d * S));
  x_.resize(d);
  h_.resize(d);
  xhat_.resize(d);
  q_.resize(d);
  k_.resize(d);
  v_row_.resize(d);
  att_.resize(d);
  o_.resize(d);
  u_.resize(c.d_ff);
  g_.resize(c.d_ff);
  m_.resize(d);
  probs_.resize(S);
  logits_.resize(c.vocab.total());
}

template <class T>
void Decoder<T>::reset() {
  len_ = 0;
}

template <class T>
std::span<const T> Decoder<T>::append(std::uint32_t token, Segment segment) {
  const ModelConfig& c = p_->config;
  if (len_ >= c.max_seq_len) throw LengthError("decoder context exceeds max_seq_len");
  if (token >= c.vocab.total()) throw DataError("token id " + std::to_string(token) + " out of vocabulary");
  const Offsets o = offsets_of(c);
  const int d = c.d_model, hd = c.head_dim(), S = c.max_seq_len, F = c.d_ff;
  const int V = static_cast<int>(c.vocab.total());
  const T scale = T(1) / std::sqrt(T(hd));
  const T* W = p_->values.data();
  const int i = len_;
  T mean, rstd;

  embed_row(*p_, o, token, i, segment, x_.data());
  for (int l = 0; l < c.n_layers; ++l) {
    const LayerOff& lo = o.layers[l];
    kernels::layernorm_row(x_.data(), W + lo.ln1_g, W + lo.ln1_b, xhat_.data(), h_.data(), d, mean, rstd);
    kernels::matmul<T>(h_.data(), W + lo.wq, nullptr, q_.data(), 1, d, d);
    kernels::matmul<T>(h_.data(), W + lo.wk, nullptr, k_.data(), 1, d, d);
    kernels::matmul<T>(h_.data(), W + lo.wv, nullptr, v_row_.data(), 1, d, d);
    T* kt = kt_[l].data();
    T* vv = v_[l].data();
    for (int cc = 0; cc < d; ++cc) {
      kt[static_cast<std::size_t>(cc) * S + i] = k_[cc];
      vv[static_cast<std::size_t>(i) * d + cc] = v_row_[cc];
    }
    for (int h = 0; h < c.n_heads; ++h)
      kernels::attend_row(q_.data() + h * hd, kt + static_cast<std::size_t>(h) * hd * S, S, vv + h * hd, d,
                          i + 1, hd, scale, probs_.data(), att_.data() + h * hd);
    kernels::matmul<T>(att_.data(), W + lo.wo, nullptr, o_.data(), 1, d, d);
    for (int cc = 0; cc < d; ++cc) x_[cc] = x_[cc] + o_[cc];
    kernels::layernorm_row(x_.data(), W + lo.ln2_g, W + lo.ln2_b, xhat_.data(), h_.data(), d, mean, rstd);
    kernels::matmul<T>(h_.data(), W + lo.w1, W + lo.b1, u_.data(), 1, d, F);
    for (int e = 0; e < F; ++e) g_[e] = kernels::gelu(u_[e]);
    kernels::matmul<T>(g_.data(), W + lo.w2, W + lo.b2, m_.data(), 1, F, d);
    for (int cc = 0; cc < d; ++cc) x_[cc] = x_[cc] + m_[cc];
  }
  kernels::layernorm_row(x_.data(), W + o.lnf_g, W + o.lnf_b, xhat_.data(), h_.data(), d, mean, rstd);
  kernels::matmul<T>(h_.data(), W + o.wout, W + o.bout, logits_.data(), 1, d, V);
  ++len_;
  return logits_;
}

#define FLOWCOT_INSTANTIATE(T)                                                                          \
  template Logits<T> forward(const ModelParams<T>&, std::span<const std::uint32_t>,                      \
                             std::span<const Segment>);                                                  \
  template Logits<T> forward(const ModelParams<T>&, std::span<const std::uint32_t>);                     \
  template T masked_ce(const Logits<T>&, std::span<const std::uint32_t>, std::span<const std::uint8_t>); \
  template T loss_and_grad(const ModelParams<T>&, std::span<const std::uint32_t>,                        \
                           std::span<const Segment>, std::span<const std::uint32_t>,                     \
                           std::span<const T>, Gradients<T>&);                                           \
  template Gradients<T> grad(const ModelParams<T>&, std::span<const std::uint32_t>,                      \
                             std::span<const Segment>, std::span<const std::uint32_t>,                   \
                             std::span<const std::uint8_t>);                                             \
  template Gradients<T> grad(const ModelParams<T>&, std::span<const std::uint32_t>,                      \
                             std::span<const std::uint32_t>, std::span<const std::uint8_t>);             \
  template class Decoder<T>;

FLOWCOT_INSTANTIATE(float)
FLOWCOT_INSTANTIATE(double)

}  // namespace flowcot
