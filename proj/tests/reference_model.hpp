#pragma once

// Straight-line double-precision evaluation of the transformer, written
// independently of the library kernels. Used to produce and check golden
// logits and as the oracle for small forward passes.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowcot/model.hpp"

namespace reftest {

using Mat = std::vector<std::vector<double>>;

struct Weights {
  std::map<std::string, Mat> t;
  const Mat& operator[](const std::string& k) const { return t.at(k); }
};

inline Weights unpack(const flowcot::ModelParams<double>& p) {
  Weights w;
  for (const auto& info : flowcot::param_layout(p.config)) {
    Mat m(info.rows, std::vector<double>(info.cols));
    for (int r = 0; r < info.rows; ++r)
      for (int c = 0; c < info.cols; ++c) m[r][c] = p.values[info.offset + r * info.cols + c];
    w.t[info.name] = m;
  }
  return w;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const Mat& g, const Mat& b) {
  const double n = static_cast<double>(x.size());
  double mean = 0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[0][i] + b[0][i];
  return y;
}

// Row vector times matrix, plus an optional bias row.
inline std::vector<double> vecmat(const std::vector<double>& x, const Mat& w, const Mat* bias = nullptr) {
  std::vector<double> y(w[0].size(), 0.0);
  for (std::size_t j = 0; j < y.size(); ++j) {
    double s = bias ? (*bias)[0][j] : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i][j];
    y[j] = s;
  }
  return y;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline Mat forward(const flowcot::ModelParams<double>& p, const std::vector<std::uint32_t>& tokens,
                   const std::vector<int>& segments) {
  const auto& c = p.config;
  const Weights w = unpack(p);
  const int n = static_cast<int>(tokens.size()), d = c.d_model, H = c.n_heads, hd = d / H;
  Mat x(n, std::vector<double>(d));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k)
      x[i][k] = w["tok_emb"][tokens[i]][k] + w["pos_emb"][i][k] + w["seg_emb"][segments[i]][k];
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Mat q(n), k(n), v(n);
    for (int i = 0; i < n; ++i) {
      const auto h = layer_norm(x[i], w[pre + "ln1.scale"], w[pre + "ln1.offset"]);
      q[i] = vecmat(h, w[pre + "attn.wq"]);
      k[i] = vecmat(h, w[pre + "attn.wk"]);
      v[i] = vecmat(h, w[pre + "attn.wv"]);
    }
    Mat att(n, std::vector<double>(d, 0.0));
    for (int head = 0; head < H; ++head)
      for (int i = 0; i < n; ++i) {
        std::vector<double> s(i + 1);
        double mx = -1e300;
        for (int j = 0; j <= i; ++j) {
          double dot = 0;
          for (int e = 0; e < hd; ++e) dot += q[i][head * hd + e] * k[j][head * hd + e];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (int j = 0; j <= i; ++j)
          for (int e = 0; e < hd; ++e) att[i][head * hd + e] += s[j] / z * v[j][head * hd + e];
      }
    for (int i = 0; i < n; ++i) {
      const auto o = vecmat(att[i], w[pre + "attn.wo"]);
      for (int e = 0; e < d; ++e) x[i][e] += o[e];
      const auto h = layer_norm(x[i], w[pre + "ln2.scale"], w[pre + "ln2.offset"]);
      auto u = vecmat(h, w[pre + "mlp.w1"], &w[pre + "mlp.b1"]);
      for (double& e : u) e = gelu(e);
      const auto m = vecmat(u, w[pre + "mlp.w2"], &w[pre + "mlp.b2"]);
      for (int e = 0; e < d; ++e) x[i][e] += m[e];
    }
  }
  Mat logits(n);
  for (int i = 0; i < n; ++i)
    logits[i] = vecmat(layer_norm(x[i], w["lnf.scale"], w["lnf.offset"]), w["out.w"], &w["out.b"]);
  return logits;
}

/// d=8, 1 layer, 2 heads, 16-token vocabulary.
inline flowcot::ModelConfig tiny_config(int max_seq_len = 12) {
  flowcot::ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = max_seq_len;
  c.vocab.n_text = 1;
  c.vocab.n_code = 2;
  return c;
}

}  // namespace reftest
