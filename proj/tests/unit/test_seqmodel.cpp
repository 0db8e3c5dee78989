// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "seqmodel.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace unlearnlab;

namespace {

ModelHyper tiny_hyper(std::size_t adapter_rank = 0) {
  ModelHyper h;
  h.vocab_size = 8;
  h.d_model = 4;
  h.prefix_len = 2;
  h.layers = 2;
  h.heads = 2;
  h.mlp_hidden = 6;
  h.max_positions = 12;
  h.image_dim = 3;
  h.adapter_rank = adapter_rank;
  h.adapter_alpha = 2.0;
  return h;
}

std::vector<double> tiny_image(double a, double b, double c) { return {a, b, c}; }

// Straight-line evaluation of the model with nested loops; shares no code with
// the tape-based implementation.
using Grid = std::vector<std::vector<double>>;

Grid naive_matmul_nt(const Grid& x, std::span<const double> w, std::size_t out, std::size_t in) {
  Grid y(x.size(), std::vector<double>(out, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t c = 0; c < in; ++c) y[i][o] += x[i][c] * w[o * in + c];
  return y;
}

Grid naive_rms(const Grid& x, std::span<const double> gain) {
  Grid y = x;
  for (auto& row : y) {
    double ss = 0.0;
    for (double v : row) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(row.size()) + 1e-6);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] *= inv * gain[c];
  }
  return y;
}

double naive_logprob(const SeqModel& m, const std::vector<double>& image, const Tokens& prompt,
                     const Tokens& target) {
  const ModelHyper& h = m.hyper();
  const std::size_t d = h.d_model;
  Tokens in = prompt;
  in.push_back(h.bos);
  in.insert(in.end(), target.begin(), target.end() - 1);
  const std::size_t n = h.prefix_len + in.size();
  Grid x(n, std::vector<double>(d, 0.0));
  auto proj = m.block("img_proj");
  auto bias = m.block("img_bias");
  for (std::size_t i = 0; i < h.prefix_len; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double s = bias[i * d + c];
      for (std::size_t k = 0; k < h.image_dim; ++k) s += proj[(i * d + c) * h.image_dim + k] * image[k];
      x[i][c] = s;
    }
  auto emb = m.block("tok_emb");
  auto pos = m.block("pos_emb");
  for (std::size_t p = 0; p < in.size(); ++p)
    for (std::size_t c = 0; c < d; ++c) x[h.prefix_len + p][c] = emb[static_cast<std::size_t>(in[p]) * d + c];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) x[i][c] += pos[i * d + c];

  const std::size_t dh = d / h.heads;
  for (std::size_t l = 0; l < h.layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    auto weight = [&](const std::string& w) {
      std::vector<double> out(m.block(p + w).begin(), m.block(p + w).end());
      if (m.adapter_enabled()) {
        auto a = m.block(p + w + ".lora_a");
        auto b = m.block(p + w + ".lora_b");
        const double s = h.adapter_alpha / static_cast<double>(h.adapter_rank);
        for (std::size_t o = 0; o < d; ++o)
          for (std::size_t c = 0; c < d; ++c)
            for (std::size_t r = 0; r < h.adapter_rank; ++r) out[o * d + c] += s * b[o * h.adapter_rank + r] * a[r * d + c];
      }
      return out;
    };
    Grid xn = naive_rms(x, m.block(p + "norm1"));
    Grid q = naive_matmul_nt(xn, weight("wq"), d, d);
    Grid k = naive_matmul_nt(xn, weight("wk"), d, d);
    Grid v = naive_matmul_nt(xn, weight("wv"), d, d);
    Grid att(n, std::vector<double>(d, 0.0));
    for (std::size_t hd = 0; hd < h.heads; ++hd) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(i + 1);
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          s[j] = 0.0;
          for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) s[j] += q[i][c] * k[j][c];
          s[j] /= std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) att[i][c] += s[j] / z * v[j][c];
      }
    }
    Grid o = naive_matmul_nt(att, weight("wo"), d, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) x[i][c] += o[i][c];
    Grid xn2 = naive_rms(x, m.block(p + "norm2"));
    Grid hid = naive_matmul_nt(xn2, m.block(p + "w1"), h.mlp_hidden, d);
    auto b1 = m.block(p + "b1");
    for (auto& row : hid)
      for (std::size_t c = 0; c < row.size(); ++c) {
        const double u = row[c] + b1[c];
        row[c] = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
      }
    Grid out = naive_matmul_nt(hid, m.block(p + "w2"), d, h.mlp_hidden);
    auto b2 = m.block(p + "b2");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) x[i][c] += out[i][c] + b2[c];
  }
  Grid xf = naive_rms(x, m.block("final_norm"));
  Grid logits = naive_matmul_nt(xf, m.block("out_w"), h.vocab_size, d);
  auto ob = m.block("out_b");
  double total = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const auto& row = logits[h.prefix_len + prompt.size() + t];
    double mx = -INFINITY;
    for (std::size_t v = 0; v < row.size(); ++v) mx = std::max(mx, row[v] + ob[v]);
    double z = 0.0;
    for (std::size_t v = 0; v < row.size(); ++v) z += std::exp(row[v] + ob[v] - mx);
    total += row[static_cast<std::size_t>(target[t])] + ob[static_cast<std::size_t>(target[t])] - mx - std::log(z);
  }
  return total;
}

SeqBatch tiny_batch(const ModelHyper& h) {
  const auto img0 = tiny_image(0.3, -0.8, 0.5);
  const auto img1 = tiny_image(-0.6, 0.1, 0.7);
  const std::vector<SeqRow> rows{{img0, {3, 4}, {5, 6, 2}}, {img1, {3}, {7, 2}}, {img0, {4, 4, 3}, {2}}};
  return make_batch(rows, h);
}

void randomize(SeqModel& m, std::uint64_t seed, double scale = 0.4) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : m.params()) v += n(rng);
}

}  // namespace

TEST_CASE("forward log-probability matches a loop-based evaluation") {
  SeqModel m(tiny_hyper(), 11);
  randomize(m, 5);
  const auto img = tiny_image(0.2, 0.9, -0.4);
  const Tokens prompt{3, 4, 5};
  const Tokens target{6, 7, 2};
  CHECK(forward_logprob(m, img, prompt, target) == doctest::Approx(naive_logprob(m, img, prompt, target)).epsilon(1e-12));
}

TEST_CASE("adapter path matches loop-based evaluation and is inert with zero B") {
  SeqModel m(tiny_hyper(2), 3);
  randomize(m, 9);
  const auto img = tiny_image(-0.1, 0.4, 0.8);
  const Tokens prompt{3};
  const Tokens target{4, 5, 2};
  for (const char* w : {"wq", "wk", "wv", "wo"})
    for (std::size_t l = 0; l < 2; ++l)
      for (double& v : m.block("l" + std::to_string(l) + "." + w + ".lora_b")) v = 0.0;
  const double base = forward_logprob(m, img, prompt, target);
  m.set_adapter_enabled(true);
  CHECK(forward_logprob(m, img, prompt, target) == base);
  randomize(m, 10);
  CHECK(forward_logprob(m, img, prompt, target) == doctest::Approx(naive_logprob(m, img, prompt, target)).epsilon(1e-12));
}

TEST_CASE("zero output projection gives uniform per-token log-probability") {
  SeqModel m(tiny_hyper(), 1);
  for (double& v : m.block("out_w")) v = 0.0;
  for (double& v : m.block("out_b")) v = 0.0;
  const Tokens target{4, 5, 6, 2};
  CHECK(forward_logprob(m, tiny_image(1, 0, 0), {3}, target) == doctest::Approx(-4.0 * std::log(8.0)).epsilon(1e-14));
}

TEST_CASE("output-bias-only model matches an exhaustive softmax") {
  ModelHyper h = tiny_hyper();
  h.vocab_size = 3;
  SeqModel m(h, 2);
  for (double& v : m.block("out_w")) v = 0.0;
  auto b = m.block("out_b");
  b[0] = 0.0;
  b[1] = 0.7;
  b[2] = -0.4;
  const double z = std::exp(0.0) + std::exp(0.7) + std::exp(-0.4);
  CHECK(forward_logprob(m, tiny_image(0, 1, 0), {}, {1, 2}) ==
        doctest::Approx(0.7 - std::log(z) + (-0.4) - std::log(z)).epsilon(1e-14));
}

TEST_CASE("PAD after EOS does not change the log-probability") {
  SeqModel m(tiny_hyper(), 4);
  const auto img = tiny_image(0.5, 0.5, 0.5);
  CHECK(forward_logprob(m, img, {3}, {5, 2}) == forward_logprob(m, img, {3}, {5, 2, 0, 0}));
  const std::vector<SeqRow> one{{img, {3}, {5, 2}}};
  const std::vector<SeqRow> padded{{img, {3}, {5, 2}}, {img, {3, 4, 5, 6}, {7, 6, 5, 2}}};
  CHECK(batch_logprob(m, make_batch(one, m.hyper()))[0] == batch_logprob(m, make_batch(padded, m.hyper()))[0]);
}

TEST_CASE("out-of-range tokens and malformed targets are rejected") {
  SeqModel m(tiny_hyper(), 4);
  const auto img = tiny_image(0.5, 0.5, 0.5);
  auto code_of = [&](const Tokens& prompt, const Tokens& target) {
    try {
      forward_logprob(m, img, prompt, target);
    } catch (const Error& e) {
      return static_cast<int>(e.code());
    }
    return -1;
  };
  CHECK(code_of({3}, {9, 2}) == static_cast<int>(ErrorCode::kDomain));
  CHECK(code_of({-1}, {5, 2}) == static_cast<int>(ErrorCode::kDomain));
  CHECK(code_of({3}, {5, 6}) == static_cast<int>(ErrorCode::kDomain));
  CHECK(code_of({3}, {}) == static_cast<int>(ErrorCode::kDomain));
}

TEST_CASE("softmax rows normalize and logits are causal") {
  SeqModel m(tiny_hyper(), 6);
  randomize(m, 6);
  const auto img = tiny_image(0.1, 0.2, 0.3);
  const Tokens a{3, 4, 5, 6, 7};
  Tokens b = a;
  b[3] = 1;
  b[4] = 2;
  const ad::Mat la = token_logits(m, img, a);
  const ad::Mat lb = token_logits(m, img, b);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < la.cols(); ++c) CHECK(la(r, c) == lb(r, c));
  const ad::Mat lsm = ad::log_softmax_rows(la);
  for (Eigen::Index r = 0; r < lsm.rows(); ++r) CHECK(lsm.row(r).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("analytic gradient matches central differences on every coordinate") {
  for (std::size_t rank : {std::size_t{0}, std::size_t{2}}) {
    SeqModel m(tiny_hyper(rank), 21);
    randomize(m, 22, 0.5);
    if (rank > 0) m.set_adapter_enabled(true);
    const SeqBatch batch = tiny_batch(m.hyper());
    const std::vector<int> signs{1, -1, 1};
    const std::vector<double> g = grad_logprob(m, batch, signs);
    auto objective = [&](const SeqModel& mm) {
      const auto lp = batch_logprob(mm, batch);
      return (lp[0] - lp[1] + lp[2]) / 3.0;
    };
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < m.layout().total(); ++i) {
      SeqModel plus = m;
      SeqModel minus = m;
      plus.params()[i] += h;
      minus.params()[i] -= h;
      const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(g[i])));
    }
    CHECK(worst < 1e-7);
  }
}

TEST_CASE("adapter-only training leaves base coordinates without gradient") {
  SeqModel m(tiny_hyper(2), 8);
  randomize(m, 8);
  m.set_adapter_enabled(true);
  m.set_adapter_only(true);
  const SeqBatch batch = tiny_batch(m.hyper());
  const std::vector<double> g = grad_logprob(m, batch, std::vector<int>{1, 1, 1});
  double base_norm = 0.0;
  double adapter_norm = 0.0;
  for (const ParamBlock& b : m.layout().blocks()) {
    const bool adapter = b.name.find("lora") != std::string::npos;
    for (std::size_t i = 0; i < b.size(); ++i) (adapter ? adapter_norm : base_norm) += std::abs(g[b.offset + i]);
  }
  CHECK(base_norm == 0.0);
  CHECK(adapter_norm > 0.0);
}

TEST_CASE("zero mask gives zero gradient; duplicated rows keep mean semantics") {
  SeqModel m(tiny_hyper(), 12);
  randomize(m, 12);
  SeqBatch batch = tiny_batch(m.hyper());
  SeqBatch empty = batch;
  for (auto& row : empty.mask) std::fill(row.begin(), row.end(), 0);
  for (double v : grad_logprob(m, empty, std::vector<int>{1, 1, 1})) CHECK(v == 0.0);

  const auto img = tiny_image(0.3, -0.8, 0.5);
  const std::vector<SeqRow> single{{img, {3, 4}, {5, 6, 2}}};
  const std::vector<SeqRow> twice{{img, {3, 4}, {5, 6, 2}}, {img, {3, 4}, {5, 6, 2}}};
  const auto g1 = grad_logprob(m, make_batch(single, m.hyper()), std::vector<int>{1});
  const auto g2 = grad_logprob(m, make_batch(twice, m.hyper()), std::vector<int>{1, 1});
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(g1[i]).epsilon(1e-13));
}

TEST_CASE("invalid batches are rejected") {
  SeqModel m(tiny_hyper(), 12);
  SeqBatch batch = tiny_batch(m.hyper());
  batch.mask[0].back() = 1;  // row 0 is the longest; make another row's padded tail masked
  batch.mask[1].back() = 1;
  CHECK_THROWS_AS(batch_logprob(m, batch), Error);
  SeqBatch ragged = tiny_batch(m.hyper());
  ragged.targets.pop_back();
  CHECK_THROWS_AS(batch_logprob(m, ragged), Error);
}

TEST_CASE("frozen clones are isolated from later updates") {
  SeqModel m(tiny_hyper(), 13);
  const auto img = tiny_image(0.4, 0.4, 0.2);
  const FrozenModel frozen = clone_frozen(m);
  const double before = forward_logprob(frozen.get(), img, {3}, {4, 2});
  randomize(m, 99);
  CHECK(forward_logprob(frozen.get(), img, {3}, {4, 2}) == before);
  const SeqModel c2 = clone(clone(m));
  CHECK(forward_logprob(c2, img, {3}, {4, 2}) == forward_logprob(clone(m), img, {3}, {4, 2}));
}

TEST_CASE("single-token sample frequencies match the softmax") {
  SeqModel m(tiny_hyper(), 14);
  randomize(m, 14, 0.6);
  const auto img = tiny_image(0.2, -0.3, 0.9);
  const std::vector<double> lp = next_token_logprobs(m, img, {3}, {});
  Rng rng(2024);
  constexpr int kDraws = 100000;
  std::vector<int> counts(8, 0);
  for (int i = 0; i < kDraws; ++i) counts[static_cast<std::size_t>(sample(m, img, {3}, 1.0, 1, rng).at(0))]++;
  for (std::size_t v = 0; v < 8; ++v) {
    const double p = std::exp(lp[v]);
    const double sigma = std::sqrt(kDraws * p * (1.0 - p));
    CHECK(std::abs(counts[v] - kDraws * p) <= 3.0 * sigma + 1e-9);
  }
}

TEST_CASE("greedy decoding follows the argmax and stops at EOS") {
  SeqModel m(tiny_hyper(), 15);
  for (double& v : m.block("out_w")) v = 0.0;
  auto b = m.block("out_b");
  b[5] = 3.0;
  CHECK(greedy_decode(m, tiny_image(1, 0, 0), {3}, 4) == Tokens{5, 5, 5, 5});
  b[2] = 3.0;  // tie between 2 (EOS) and 5: lowest index wins
  CHECK(greedy_decode(m, tiny_image(1, 0, 0), {3}, 4) == Tokens{2});
  Rng rng(1);
  CHECK_THROWS_AS(sample(m, tiny_image(1, 0, 0), {3}, 0.0, 4, rng), Error);
  CHECK_THROWS_AS(sample(m, tiny_image(1, 0, 0), {3}, 1.0, 0, rng), Error);
}

TEST_CASE("checkpoint round trip and layout mismatch") {
  const auto dir = std::filesystem::temp_directory_path() / "unlearnlab_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.ckpt").string();
  SeqModel m(tiny_hyper(2), 16);
  randomize(m, 16);
  save_checkpoint(m, path, {{"role", "test"}});
  const SeqModel back = load_checkpoint(path, m.hyper());
  CHECK(std::equal(back.params().begin(), back.params().end(), m.params().begin()));
  CHECK(checkpoint_meta(path).at("role") == "test");
  ModelHyper other = m.hyper();
  other.d_model = 6;
  try {
    load_checkpoint(path, other);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kLayoutMismatch);
  }
  // Truncated payload.
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  std::filesystem::remove_all(dir);
}
