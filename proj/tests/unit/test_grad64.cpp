// Finite-difference gradient oracle. This suite links the 64-bit core: the
// central-difference error at h = 1e-5 sits far below the 1e-4 relative
// tolerance only in double precision.

#include <doctest.h>

#include <cmath>
#include <functional>

#include "icl/dit.hpp"
#include "icl/lora.hpp"
#include "icl/sampler.hpp"
#include "icl/tasks.hpp"
#include "icl/tensor.hpp"

using namespace icl;

static_assert(sizeof(real) == 8, "gradient checks require the 64-bit core");

namespace {

constexpr double kH = 1e-5;
constexpr double kTol = 1e-4;

// Relative error with an absolute escape for near-zero pairs.
bool grad_close(double analytic, double fd) {
  const double diff = std::fabs(analytic - fd);
  if (diff < 1e-10) return true;
  return diff / std::max({1e-8, std::fabs(analytic), std::fabs(fd)}) < kTol;
}

// Checks d(loss)/d(inputs[k]) against central differences on sampled
// coordinates. `loss_fn` must be a pure function of the input values.
void check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                     Rng& coord_rng, int coords_per_input = 6) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = loss_fn();
  REQUIRE(loss.numel() == 1);
  backward(loss);

  for (auto& input : inputs) {
    REQUIRE(input.requires_grad());
    auto analytic = std::vector<double>(input.grad().begin(), input.grad().end());
    auto vals = input.value_mut();
    const int64_t n = input.numel();
    for (int c = 0; c < coords_per_input; ++c) {
      const int64_t i = int64_t(coord_rng.uniform_index(uint64_t(n)));
      const real saved = vals[size_t(i)];
      NoGradGuard ng;
      vals[size_t(i)] = saved + real(kH);
      const double lp = double(loss_fn().item());
      vals[size_t(i)] = saved - real(kH);
      const double lm = double(loss_fn().item());
      vals[size_t(i)] = saved;
      const double fd = (lp - lm) / (2 * kH);
      INFO("coordinate " << i << ": analytic " << analytic[size_t(i)] << " fd " << fd);
      CHECK(grad_close(analytic[size_t(i)], fd));
    }
  }
}

// Scalarize an op output with fixed random weights: loss = mean((y*w)^2).
Tensor weigh(const Tensor& y, const Tensor& w) {
  return mse_loss(mul(y, w), Tensor::zeros(y.shape()));
}

} // namespace

TEST_CASE("elementwise and matmul gradients") {
  Rng rng(100);
  for (int seed = 0; seed < 4; ++seed) {
    Rng r = rng.fork(uint64_t(seed));
    Tensor a = rng_normal(r, {3, 4}, 1, true);
    Tensor b = rng_normal(r, {3, 4}, 1, true);
    Tensor w = rng_normal(r, {3, 4});
    Rng coords = rng.fork(uint64_t(1000 + seed));

    check_gradients([&] { return weigh(add(a, b), w); }, {a, b}, coords);
    check_gradients([&] { return weigh(sub(a, b), w); }, {a, b}, coords);
    check_gradients([&] { return weigh(mul(a, b), w); }, {a, b}, coords);
    check_gradients([&] { return weigh(scale(a, real(1.7)), w); }, {a}, coords);
    check_gradients([&] { return weigh(add_scalar(a, real(-0.3)), w); }, {a}, coords);

    Tensor m1 = rng_normal(r, {3, 5}, 1, true);
    Tensor m2 = rng_normal(r, {5, 4}, 1, true);
    check_gradients([&] { return weigh(matmul(m1, m2), w); }, {m1, m2}, coords);
    Tensor m3 = rng_normal(r, {4, 5}, 1, true);
    check_gradients([&] { return weigh(matmul_nt(m1, m3), w); }, {m1, m3}, coords);
  }
}

TEST_CASE("broadcast, slicing, reshape gradients") {
  Rng rng(200);
  Tensor x = rng_normal(rng, {4, 6}, 1, true);
  Tensor v = rng_normal(rng, {6}, 1, true);
  Tensor w = rng_normal(rng, {4, 6});
  Rng coords = rng.fork(77);

  check_gradients([&] { return weigh(add_rows(x, v), w); }, {x, v}, coords);
  check_gradients([&] { return weigh(mul_rows(x, v), w); }, {x, v}, coords);

  Tensor w2 = rng_normal(rng, {2, 6});
  check_gradients([&] { return weigh(slice_rows(x, 1, 2), w2); }, {x}, coords);
  Tensor w3 = rng_normal(rng, {4, 3});
  check_gradients([&] { return weigh(slice_cols(x, 2, 3), w3); }, {x}, coords);

  Tensor y = rng_normal(rng, {2, 6}, 1, true);
  Tensor w4 = rng_normal(rng, {6, 6});
  check_gradients([&] { return weigh(concat_rows(x, y), w4); }, {x, y}, coords);
  Tensor w5 = rng_normal(rng, {4, 12});
  check_gradients([&] { return weigh(concat_cols({x, x}), w5); }, {x}, coords);
  Tensor w6 = rng_normal(rng, {24});
  check_gradients([&] { return weigh(reshape(x, {24}), w6); }, {x}, coords);
}

TEST_CASE("softmax, layer_norm, gelu gradients") {
  Rng rng(300);
  for (int seed = 0; seed < 3; ++seed) {
    Rng r = rng.fork(uint64_t(seed));
    Rng coords = rng.fork(uint64_t(500 + seed));
    Tensor x = rng_normal(r, {3, 5}, 1, true);
    Tensor w = rng_normal(r, {3, 5});
    check_gradients([&] { return weigh(softmax(x, -1), w); }, {x}, coords);
    check_gradients([&] { return weigh(softmax(x, 0), w); }, {x}, coords);
    check_gradients([&] { return weigh(gelu(x), w); }, {x}, coords);

    Tensor gain = rng_normal(r, {5}, 1, true);
    Tensor bias = rng_normal(r, {5}, 1, true);
    check_gradients([&] { return weigh(layer_norm(x, gain, bias), w); }, {x, gain, bias}, coords);
  }
}

TEST_CASE("embedding and mse gradients") {
  Rng rng(400);
  Tensor table = rng_normal(rng, {7, 4}, 1, true);
  std::vector<int> ids = {2, 0, 2, 6};
  Tensor w = rng_normal(rng, {4, 4});
  Rng coords = rng.fork(9);
  check_gradients([&] { return weigh(embedding_lookup(table, ids), w); }, {table}, coords);

  Tensor p = rng_normal(rng, {3, 3}, 1, true);
  Tensor t = rng_normal(rng, {3, 3}, 1, true);
  check_gradients([&] { return mse_loss(p, t); }, {p, t}, coords);
}

TEST_CASE("patchify and unpatchify gradients") {
  Rng rng(500);
  Tensor canvas = rng_normal(rng, {3, 4, 4}, 1, true);
  Tensor w = rng_normal(rng, {4, 12});
  Rng coords = rng.fork(10);
  check_gradients([&] { return weigh(patchify(canvas, 2), w); }, {canvas}, coords);

  Tensor tokens = rng_normal(rng, {4, 12}, 1, true);
  Tensor w2 = rng_normal(rng, {3, 4, 4});
  check_gradients([&] { return weigh(unpatchify(tokens, 2, 4, 4), w2); }, {tokens}, coords);
}

TEST_CASE("adapted_matmul gradients w.r.t. A, B, x; base stays frozen") {
  Rng rng(600);
  const int out = 6, in = 5, r = 2;
  Tensor w = rng_normal(rng, {out, in}, 1, true); // grad-requiring on purpose
  Tensor a = rng_normal(rng, {r, in}, 1, true);
  Tensor b = rng_normal(rng, {out, r}, 1, true);
  Tensor x = rng_normal(rng, {3, in}, 1, true);
  Tensor wW = rng_normal(rng, {3, out});
  Rng coords = rng.fork(11);

  w.zero_grad();
  check_gradients([&] { return weigh(adapted_matmul(w, a, b, real(1.5), r, x), wW); }, {a, b, x},
                  coords);
  // The base matrix receives no gradient through the adapted path.
  bool base_touched = false;
  if (w.has_grad())
    for (real g : w.grad()) base_touched |= g != 0;
  CHECK_FALSE(base_touched);
}

TEST_CASE("full fm_loss graph matches finite differences") {
  ModelConfig mc;
  mc.patch = 2;
  mc.d_model = 16;
  mc.heads = 2;
  mc.blocks = 2;
  mc.l_text = 32;
  mc.mlp_ratio = 2;
  mc.max_patch_rows = 4;
  mc.max_patch_cols = 4;

  Rng rng(700);
  ModelParams params = init_params(mc, rng);
  params.set_requires_grad(true);
  // Zero-init modulation blocks every gradient path through ada.w at init;
  // nudge it so the full graph (gates, shifts, time MLP) is exercised.
  {
    Rng nudger(701);
    for (auto& [name, t] : params.tensors) {
      if (name.find("ada.") != std::string::npos) {
        for (auto& v : t.value_mut()) v = real(0.05) * real(nudger.normal());
      }
    }
  }

  TaskSpec spec;
  spec.kind = TaskKind::Palette;
  spec.layout = PanelLayout::make("2x2", 4, 4);
  Rng task_rng(702);
  ImageSetRecord rec = gen_set(spec, task_rng);
  rec.finalize(mc.l_text);

  auto loss_fn = [&] {
    Rng loss_rng(703); // replayed on every evaluation
    return fm_loss(params, nullptr, rec, loss_rng, real(0.1));
  };

  Rng coords(704);
  const std::vector<std::string> checked = {
      "patch_embed.w", "tok_emb",          "pos.row",          "pos.text",
      "modality.img",  "time_mlp.w1",      "blocks.0.attn.wq.w", "blocks.0.attn.wo.w",
      "blocks.0.mlp.w1.w", "blocks.1.attn.wv.w", "blocks.1.mlp.w2.w", "blocks.1.ada.w",
      "blocks.0.ada.b", "head.w",          "head.b"};
  for (const auto& name : checked) {
    INFO("parameter " << name);
    check_gradients(loss_fn, {params.at(name)}, coords, 4);
  }
}

TEST_CASE("fm_loss gradients flow to adapter matrices") {
  ModelConfig mc;
  mc.patch = 2;
  mc.d_model = 16;
  mc.heads = 2;
  mc.blocks = 1;
  mc.l_text = 16;
  mc.mlp_ratio = 2;
  mc.max_patch_rows = 4;
  mc.max_patch_cols = 4;

  Rng rng(800);
  ModelParams params = init_params(mc, rng);
  {
    Rng nudger(801);
    for (auto& [name, t] : params.tensors)
      if (name.find("ada.") != std::string::npos)
        for (auto& v : t.value_mut()) v = real(0.05) * real(nudger.normal());
  }
  LoraConfig lc;
  lc.rank = 2;
  lc.alpha = 2;
  LoraAdapter adapter = init_adapter(lc, params, rng);
  // B starts at zero; nudge both so gradients are informative.
  for (auto& [name, ab] : adapter.matrices) {
    (void)name;
    for (auto& v : ab.second.value_mut()) v = real(0.05) * real(rng.normal());
  }
  adapter.set_requires_grad(true);

  TaskSpec spec;
  spec.kind = TaskKind::Identity;
  spec.layout = PanelLayout::make("1x2", 4, 4);
  Rng task_rng(802);
  ImageSetRecord rec = gen_set(spec, task_rng);
  rec.finalize(mc.l_text);

  auto loss_fn = [&] {
    Rng loss_rng(803);
    return fm_loss(params, &adapter, rec, loss_rng, real(0));
  };

  Rng coords(804);
  auto& [a0, b0] = adapter.matrices.at("blocks.0.attn.wq.w");
  check_gradients(loss_fn, {a0, b0}, coords, 4);
  auto& [a1, b1] = adapter.matrices.at("blocks.0.mlp.w2.w");
  check_gradients(loss_fn, {a1, b1}, coords, 4);
}
