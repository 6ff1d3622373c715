#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "attnforge/rng.hpp"
#include "attnforge/tensor.hpp"
#include "attnforge/transformer.hpp"

using namespace attnforge;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.heads = 4;
  c.mlp_ratio = 2.0;
  c.patch_size = 4;
  c.image_side = 8;
  c.classes = 3;
  c.seed = 42;
  return c;
}

Tensor random_image(Rng& rng, int side) {
  Tensor img = Tensor::zeros({side, side});
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.values()[i] != b.values()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent combinations") {
  ModelConfig c = toy_config();
  CHECK_NOTHROW(c.validate());
  c.heads = 3;  // does not divide 16
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = toy_config();
  c.patch_size = 3;  // does not divide 8
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = toy_config();
  c.classes = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = toy_config();
  c.mlp_ratio = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("build is deterministic in the seed") {
  VitModel a = build_vit(toy_config());
  VitModel b = build_vit(toy_config());
  auto ta = named_tensors(a);
  auto tb = named_tensors(b);
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) CHECK(bitwise_equal(ta[i].second, tb[i].second));

  ModelConfig other = toy_config();
  other.seed = 43;
  VitModel c = build_vit(other);
  CHECK_FALSE(bitwise_equal(a.patch_w, named_tensors(c)[0].second));

  // biases zero, gains one, weights inside the truncation bound
  for (double v : a.patch_b.values()) CHECK(v == 0.0);
  for (double v : a.layers[0].ln1_gain.values()) CHECK(v == 1.0);
  for (double v : a.layers[0].attn.w_q.values()) CHECK(std::fabs(v) <= 0.04);
}

TEST_CASE("extract_patches lays out rows patch-major") {
  Tensor img = Tensor::from({4, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
  Tensor p = extract_patches(img, 2);
  CHECK(p.shape() == std::vector<int>{4, 4});
  CHECK(p.values() == std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15});
  CHECK_THROWS_AS(extract_patches(img, 3), std::invalid_argument);
}

TEST_CASE("single-head attention matches a hand-rolled oracle") {
  Rng rng(5);
  const int n = 3, d = 4;
  AttentionWeights w;
  auto rnd = [&](std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values()) v = 2.0 * rng.uniform() - 1.0;
    return t;
  };
  w.w_q = rnd({d, d});
  w.b_q = rnd({d});
  w.w_k = rnd({d, d});
  w.b_k = rnd({d});
  w.w_v = rnd({d, d});
  w.b_v = rnd({d});
  w.w_o = rnd({d, d});
  w.b_o = rnd({d});
  Tensor x = rnd({n, d});

  Tensor got = multi_head_attention(x, w, 1);

  // oracle: plain loops, no library ops
  auto mm = [](const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros({a.rows(), b.cols()});
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < b.cols(); ++j) {
        double acc = 0.0;
        for (int k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
        out.at(i, j) = acc;
      }
    return out;
  };
  auto addb = [](Tensor m, const Tensor& b) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) m.at(i, j) += b.at(j);
    return m;
  };
  Tensor q = addb(mm(x, w.w_q), w.b_q);
  Tensor k = addb(mm(x, w.w_k), w.b_k);
  Tensor v = addb(mm(x, w.w_v), w.b_v);
  Tensor scores = mm(q, transpose2d(k));
  for (double& s : scores.values()) s /= std::sqrt(static_cast<double>(d));
  Tensor probs = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) {
    double mx = scores.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, scores.at(i, j));
    double den = 0.0;
    for (int j = 0; j < n; ++j) den += std::exp(scores.at(i, j) - mx);
    for (int j = 0; j < n; ++j) probs.at(i, j) = std::exp(scores.at(i, j) - mx) / den;
  }
  Tensor expect = addb(mm(mm(probs, v), w.w_o), w.b_o);
  for (std::size_t i = 0; i < expect.numel(); ++i)
    CHECK(got.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
}

TEST_CASE("forward emits class logits and a full row-stochastic trace") {
  ModelConfig cfg = toy_config();
  VitModel model = build_vit(cfg);
  Rng rng(9);
  Tensor img = random_image(rng, cfg.image_side);
  ForwardTrace trace;
  Tensor logits = vit_forward(model, img, nullptr, &trace);
  CHECK(logits.shape() == std::vector<int>{cfg.classes});
  REQUIRE(trace.attention.size() == static_cast<std::size_t>(cfg.layers));
  for (const auto& layer_maps : trace.attention) {
    REQUIRE(layer_maps.size() == static_cast<std::size_t>(cfg.heads));
    for (const Tensor& map : layer_maps) {
      CHECK(map.shape() == std::vector<int>{cfg.tokens(), cfg.tokens()});
      for (int i = 0; i < map.rows(); ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < map.cols(); ++j) {
          CHECK(map.at(i, j) >= 0.0);
          rowsum += map.at(i, j);
        }
        CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
  CHECK(bitwise_equal(trace.logits, logits));

  // wrong image size is a contract violation
  Tensor bad = Tensor::zeros({cfg.image_side + 1, cfg.image_side + 1});
  CHECK_THROWS_AS(vit_forward(model, bad), std::invalid_argument);
}

TEST_CASE("all-zero additive bias is bitwise identical to no bias") {
  ModelConfig cfg = toy_config();
  VitModel model = build_vit(cfg);
  Rng rng(11);
  Tensor img = random_image(rng, cfg.image_side);

  Tensor plain = vit_forward(model, img);
  Tensor zero_bias = Tensor::zeros({cfg.tokens(), cfg.tokens()});
  ForwardHooks hooks;
  hooks.attention_additive_bias = [&](int) { return zero_bias; };
  Tensor biased = vit_forward(model, img, &hooks);
  CHECK(bitwise_equal(plain, biased));

  // and a nonzero bias changes the outcome
  Tensor shift = Tensor::full({cfg.tokens(), cfg.tokens()}, 0.0);
  shift.at(0, 1) = 3.0;
  hooks.attention_additive_bias = [&](int) { return shift; };
  Tensor shifted = vit_forward(model, img, &hooks);
  CHECK_FALSE(bitwise_equal(plain, shifted));
}

TEST_CASE("repeated forwards are bitwise reproducible") {
  ModelConfig cfg = toy_config();
  VitModel model = build_vit(cfg);
  Rng rng(13);
  Tensor img = random_image(rng, cfg.image_side);
  CHECK(bitwise_equal(vit_forward(model, img), vit_forward(model, img)));
}

TEST_CASE("gradient flow respects the frozen set") {
  ModelConfig cfg = toy_config();
  VitModel model = build_vit(cfg);
  set_all_requires_grad(model, false);
  model.head_w.set_requires_grad(true);

  Rng rng(17);
  Tensor img = random_image(rng, cfg.image_side);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor logits = vit_forward(model, img);
    tape.backward(cross_entropy_logits(logits, 1));
  }
  CHECK(model.head_w.grad_if() != nullptr);
  bool head_has_signal = false;
  for (double g : model.head_w.grad())
    if (g != 0.0) head_has_signal = true;
  CHECK(head_has_signal);
  // frozen tensors never allocate gradient storage
  CHECK(model.head_b.grad_if() == nullptr);
  CHECK(model.patch_w.grad_if() == nullptr);
  CHECK(model.layers[0].attn.w_q.grad_if() == nullptr);
}

TEST_CASE("full model loss passes grad_check on representative tensors") {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.patch_size = 4;
  cfg.image_side = 8;
  cfg.classes = 2;
  cfg.seed = 3;
  VitModel model = build_vit(cfg);
  set_all_requires_grad(model, false);
  Rng rng(19);
  Tensor img = random_image(rng, cfg.image_side);

  auto loss_wrt = [&](Tensor& slot) {
    return [&](const Tensor& probe) {
      Tensor saved = slot;
      slot = probe;
      Tensor loss = cross_entropy_logits(vit_forward(model, img), 0);
      slot = saved;
      return loss;
    };
  };
  // eps balances rounding noise (wants it large) against truncation through
  // the loss curvature (wants it small relative to each tensor's scale), so
  // it is pinned per tensor: w_q has near-zero gradient entries that need a
  // wide stencil, patch_w sits at 0.02 scale and needs a narrow one
  CHECK(grad_check(loss_wrt(model.layers[0].attn.w_q), model.layers[0].attn.w_q, 1e-2) < 1e-5);
  CHECK(grad_check(loss_wrt(model.layers[0].mlp_w1), model.layers[0].mlp_w1, 1e-3) < 1e-5);
  CHECK(grad_check(loss_wrt(model.patch_w), model.patch_w, 3e-4) < 1e-5);
  CHECK(grad_check(loss_wrt(model.head_w), model.head_w, 1e-3) < 1e-5);
  // gradient wrt the input image itself (patch extraction is differentiable)
  CHECK(grad_check([&](const Tensor& probe) {
          return cross_entropy_logits(vit_forward(model, probe), 0);
        }, img, 3e-3) < 1e-5);
}

TEST_CASE("checkpoint round trip is bitwise and rejects corruption") {
  namespace fs = std::filesystem;
  ModelConfig cfg = toy_config();
  VitModel model = build_vit(cfg);
  model.layers[1].attn_bias = Tensor::zeros({cfg.tokens(), cfg.tokens()});
  model.layers[1].attn_bias.at(2, 3) = -0.75;

  fs::path dir = fs::temp_directory_path() / "attnforge_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(model, dir.string());
  VitModel loaded = load_checkpoint(dir.string());

  CHECK(loaded.config == model.config);
  auto ta = named_tensors(model);
  auto tb = named_tensors(loaded);
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].first == tb[i].first);
    CHECK(bitwise_equal(ta[i].second, tb[i].second));
  }
  Rng rng(23);
  Tensor img = random_image(rng, cfg.image_side);
  CHECK(bitwise_equal(vit_forward(model, img), vit_forward(loaded, img)));

  // truncated blob
  fs::resize_file(dir / "weights.bin", fs::file_size(dir / "weights.bin") - 8);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir.string()),
                       doctest::Contains("size does not match"), std::runtime_error);

  // mangled manifest
  save_checkpoint(model, dir.string());
  {
    std::ofstream m(dir / "manifest.txt", std::ios::app);
    m << "tensor.mystery = 3x3\n";
  }
  CHECK_THROWS_AS(load_checkpoint(dir.string()), std::runtime_error);
  fs::remove_all(dir);
}
