#pragma once

// Decoder-only causal transformer over the shared vocabulary, with exact
// reverse-mode gradients. Templated on the scalar so the same code runs in
// float for training and in double for gradient checks.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowcot/vocab.hpp"

namespace flowcot {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 2048;
  VocabLayout vocab;

  /// Throws ConfigError.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class TensorKind {
  kTokenEmbedding,
  kPositionEmbedding,
  kSegmentEmbedding,
  kNormScale,
  kNormOffset,
  kAttention,
  kMlpWeight,
  kMlpBias,
  kOutputWeight,
  kOutputBias,
};

struct TensorInfo {
  std::string name;
  TensorKind kind;
  int rows = 0, cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Every parameter tensor in storage (and serialization) order.
std::vector<TensorInfo> param_layout(const ModelConfig& cfg);
std::size_t param_count(const ModelConfig& cfg);

template <class T>
struct ModelParams {
  ModelConfig config;
  std::vector<T> values;

  template <class U>
  ModelParams<U> cast() const {
    return {config, std::vector<U>(values.begin(), values.end())};
  }
};

template <class T>
struct Gradients {
  std::vector<T> values;
  explicit Gradients(std::size_t n = 0) : values(n, T(0)) {}
};

template <class T>
struct Logits {
  int n = 0;
  int vocab = 0;
  std::vector<T> values;
  std::span<const T> row(int i) const {
    return {values.data() + static_cast<std::size_t>(i) * vocab, static_cast<std::size_t>(vocab)};
  }
};

/// Normal(0, 0.02) weights, Normal(0, 0.02 / sqrt(2 n_layers)) for the
/// vocabulary projection, unit norm scales and zero biases.
ModelParams<float> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws LengthError for overlong input and DataError for bad ids.
template <class T>
Logits<T> forward(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                  std::span<const Segment> segments);
template <class T>
Logits<T> forward(const ModelParams<T>& p, std::span<const std::uint32_t> tokens);

/// Mean over masked positions of -log softmax(logits)[target]; 0 if the mask is empty.
template <class T>
T masked_ce(const Logits<T>& logits, std::span<const std::uint32_t> targets,
            std::span<const std::uint8_t> mask);

/// Weighted cross-entropy sum_i w_i * CE_i over positions with nonzero
/// weight; accumulates its exact gradient into `accum`. Returns the sum.
template <class T>
T loss_and_grad(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                std::span<const Segment> segments, std::span<const std::uint32_t> targets,
                std::span<const T> weights, Gradients<T>& accum);

/// Gradient of masked_ce(forward(p, tokens), targets, mask).
template <class T>
Gradients<T> grad(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                  std::span<const Segment> segments, std::span<const std::uint32_t> targets,
                  std::span<const std::uint8_t> mask);
template <class T>
Gradients<T> grad(const ModelParams<T>& p, std::span<const std::uint32_t> tokens,
                  std::span<const std::uint32_t> targets, std::span<const std::uint8_t> mask);

/// Incremental decoding with a key/value cache. Produces logits bit-identical
/// to the matching rows of forward().
template <class T>
class Decoder {
 public:
  explicit Decoder(const ModelParams<T>& p);
  void reset();
  /// Feeds one token and returns the logits row predicting the next one. The
  /// span stays valid until the next call.
  std::span<const T> append(std::uint32_t token, Segment segment);
  int length() const { return len_; }
  const ModelParams<T>& params() const { return *p_; }

 private:
  const ModelParams<T>* p_;
  int len_ = 0;
  std::vector<std::vector<T>> kt_;  // per layer [heads][head_dim][max_seq_len]
  std::vector<std::vector<T>> v_;   // per layer [max_seq_len][d_model]
  std::vector<T> x_, h_, xhat_, q_, k_, v_row_, att_, o_, u_, g_, m_, probs_, logits_;
};

}  // namespace flowcot
