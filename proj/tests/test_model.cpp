#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flowcot/checkpoint.hpp"
#include "flowcot/error.hpp"
#include "flowcot/model.hpp"
#include "flowcot/optim.hpp"
#include "flowcot/sampling.hpp"
#include "model_checks.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

using namespace flowcot;

namespace {

std::vector<std::vector<double>> read_golden(const std::string& name) {
  std::ifstream in(test_data_path(name));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> r;
    double v;
    while (ss >> v) r.push_back(v);
    if (!r.empty()) rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_SUITE("arnet") {
  TEST_CASE("golden logits of the tiny model") {
    const auto golden = read_golden("golden_logits_tiny_seed0.txt");
    REQUIRE(golden.size() == 3);
    const auto p = init_params(reftest::tiny_config(), 0).cast<double>();
    const std::vector<std::uint32_t> tok = {1, 2, 3};
    const auto ref = reftest::forward(p, tok, {0, 0, 0});
    const auto lib = forward(p, std::span<const std::uint32_t>(tok));
    REQUIRE(lib.n == 3);
    REQUIRE(lib.vocab == 16);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 16; ++j) {
        CHECK(ref[i][j] == doctest::Approx(golden[i][j]).epsilon(1e-14));
        CHECK(lib.row(i)[j] == doctest::Approx(golden[i][j]).epsilon(1e-12));
      }
  }

  TEST_CASE("single token gives one logit row") {
    const auto p = init_params(reftest::tiny_config(), 0);
    const std::vector<std::uint32_t> tok = {5};
    const auto l = forward(p, std::span<const std::uint32_t>(tok));
    CHECK(l.n == 1);
    CHECK(l.values.size() == 16);
  }

  TEST_CASE("input validation") {
    const auto p = init_params(reftest::tiny_config(4), 0);
    const std::vector<std::uint32_t> longer = {1, 2, 3, 4, 5};
    CHECK_THROWS_AS(forward(p, std::span<const std::uint32_t>(longer)), LengthError);
    const std::vector<std::uint32_t> bad = {1, 99};
    CHECK_THROWS_AS(forward(p, std::span<const std::uint32_t>(bad)), DataError);
    ModelConfig c = reftest::tiny_config();
    c.n_heads = 3;
    CHECK_THROWS_AS(init_params(c, 0), ConfigError);
  }

  TEST_CASE("init is deterministic and the parameter count has its closed form") {
    const ModelConfig tiny = reftest::tiny_config();
    CHECK(init_params(tiny, 3).values == init_params(tiny, 3).values);
    CHECK(init_params(tiny, 3).values != init_params(tiny, 4).values);
    ModelConfig c;
    c.vocab.n_text = 12;
    c.vocab.n_code = 300;
    const std::size_t d = c.d_model, V = c.vocab.total(), F = c.d_ff, P = c.max_seq_len, L = c.n_layers;
    const std::size_t per_layer = 4 * d * d + 2 * d * F + F + 5 * d;
    CHECK(param_count(c) == V * d + P * d + 5 * d + L * per_layer + 2 * d + d * V + V);
  }

  TEST_CASE("masked cross-entropy hand values") {
    const double ln3 = std::log(3.0);
    Logits<double> l{2, 2, {0, ln3, 0, ln3}};
    const std::vector<std::uint32_t> tgt = {0, 1};
    const std::vector<std::uint8_t> both = {1, 1}, none = {0, 0};
    // softmax [1/4, 3/4]: CE = ln 4 and ln(4/3).
    CHECK(masked_ce<double>(l, tgt, both) == doctest::Approx(0.5 * (2 * std::log(4.0) - ln3)).epsilon(1e-15));
    CHECK(masked_ce<double>(l, tgt, none) == 0.0);
    Logits<double> u{3, 37, std::vector<double>(3 * 37, 0.25)};
    const std::vector<std::uint32_t> t3 = {0, 11, 36};
    const std::vector<std::uint8_t> m3 = {1, 1, 1};
    CHECK(masked_ce<double>(u, t3, m3) == doctest::Approx(std::log(37.0)).epsilon(1e-12));
  }

  TEST_CASE("finite-difference gradients agree on every tensor") {
    for (const auto& e : modelcheck::gradient_check()) {
      INFO(e.name);
      CHECK(e.rel_error < 1e-3);
    }
  }

  TEST_CASE("zero mask gives zero gradients and accumulation is linear") {
    const auto p = init_params(reftest::tiny_config(), 0).cast<double>();
    const std::vector<std::uint32_t> tok = {1, 7, 8, 9};
    const std::vector<Segment> seg(4, Segment::kSpecial);
    const std::vector<std::uint32_t> tgt = {7, 8, 9, 2};
    const std::vector<std::uint8_t> zero(4, 0);
    for (double g : grad(p, tok, seg, tgt, zero).values) REQUIRE(g == 0.0);

    const std::vector<double> w = {1, 0.5, 0, 1};
    Gradients<double> once(p.values.size()), twice(p.values.size());
    loss_and_grad<double>(p, tok, seg, tgt, w, once);
    loss_and_grad<double>(p, tok, seg, tgt, w, twice);
    loss_and_grad<double>(p, tok, seg, tgt, w, twice);
    for (std::size_t i = 0; i < once.values.size(); ++i)
      REQUIRE(twice.values[i] == doctest::Approx(2 * once.values[i]).epsilon(1e-12));
  }

  TEST_CASE("causality under randomized suffix edits") {
    CHECK(modelcheck::causality_violations(200, 11) == 0);
  }

  TEST_CASE("softmax shift invariance") {
    std::vector<float> row = {0.1f, 2.0f, -1.0f, 2.0f, 0.5f};
    auto shifted = row;
    for (float& v : shifted) v += 3.0f;
    CHECK(sample_next(row, 0.0, 0) == sample_next(shifted, 0.0, 0));
    Logits<double> a{1, 5, {row.begin(), row.end()}}, b{1, 5, {shifted.begin(), shifted.end()}};
    for (std::uint32_t t = 0; t < 5; ++t) {
      const std::vector<std::uint32_t> tgt = {t};
      const std::vector<std::uint8_t> m = {1};
      CHECK(masked_ce<double>(a, tgt, m) == doctest::Approx(masked_ce<double>(b, tgt, m)).epsilon(1e-6));
    }
  }

  TEST_CASE("decoder matches forward bit for bit") {
    ModelConfig c;
    c.d_model = 32;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 64;
    c.max_seq_len = 64;
    c.vocab.n_text = 12;
    c.vocab.n_code = 20;
    const auto p = init_params(c, 9);
    std::vector<std::uint32_t> tok;
    std::vector<Segment> seg;
    for (int i = 0; i < 40; ++i) {
      tok.push_back(static_cast<std::uint32_t>((i * 13 + 5) % c.vocab.total()));
      seg.push_back(static_cast<Segment>(i % kNumSegments));
    }
    const auto full = forward(p, tok, seg);
    Decoder<float> dec(p);
    for (int i = 0; i < 40; ++i) {
      const auto row = dec.append(tok[i], seg[i]);
      for (std::size_t j = 0; j < row.size(); ++j) REQUIRE(row[j] == full.row(i)[j]);
    }
  }

  TEST_CASE("checkpoint round trip keeps forward bit-identical") {
    Checkpoint ck;
    ck.params = init_params(reftest::tiny_config(), 2);
    ck.train_seeds = {3, 4};
    const auto path = test_tmp_dir("model") / "model.fvc";
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    const std::vector<std::uint32_t> tok = {1, 8, 9, 3};
    CHECK(forward(back.params, std::span<const std::uint32_t>(tok)).values ==
          forward(ck.params, std::span<const std::uint32_t>(tok)).values);
    CHECK(back.train_seeds == ck.train_seeds);
    auto bytes = read_bytes(path);
    bytes[bytes.size() - 3] ^= 1;
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }

  TEST_CASE("Adam first step and determinism") {
    AdamConfig cfg;
    std::vector<float> p = {1.0f, -2.0f, 0.5f};
    const std::vector<float> g = {0.3f, -0.001f, 0.0f};
    AdamState st;
    auto q = p;
    adam_step(q, g, st, cfg);
    // At t = 1 the bias-corrected moments are g and g^2.
    for (int i = 0; i < 2; ++i) {
      const double expect = p[i] - cfg.lr * g[i] / (std::abs(double(g[i])) + cfg.eps);
      CHECK(q[i] == doctest::Approx(expect).epsilon(1e-6));
    }
    CHECK(q[2] == p[2]);
    AdamState s1, s2;
    auto a = p, b = p;
    for (int k = 0; k < 5; ++k) {
      adam_step(a, g, s1, cfg);
      adam_step(b, g, s2, cfg);
    }
    CHECK(a == b);
  }

  TEST_CASE("global norm clipping") {
    std::vector<float> g = {3, 4};
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(g[0] == doctest::Approx(0.6));
    CHECK(g[1] == doctest::Approx(0.8));
  }

  TEST_CASE("sampling rules") {
    std::vector<float> row(10, 0.0f);
    row[3] = row[7] = 2.0f;
    CHECK(sample_next(row, 0.0, 1) == 3);
    row[8] = 5.0f;
    CHECK(sample_next(row, 0.0, 1) == 8);
    CHECK(sample_next(row, 1.0, 42) == sample_next(row, 1.0, 42));
    CHECK(argmax_range(row, 0, 8) == 3);
  }
}
