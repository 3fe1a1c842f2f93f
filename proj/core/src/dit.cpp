#include "icl/dit.hpp"

#include <cmath>

#include "icl/lora.hpp"

namespace icl {

namespace {

// Timestep features: f(t) = [cos(w_k * 1000t), sin(w_k * 1000t)],
// w_k = 10000^(-k/(d/2)), k = 0..d/2-1.
Tensor time_features(real t, int d) {
  std::vector<real> f(size_t(d), real(0));
  const int half = d / 2;
  const double scaled = 1000.0 * double(t);
  for (int k = 0; k < half; ++k) {
    double w = std::exp(-std::log(10000.0) * double(k) / double(half));
    f[size_t(k)] = real(std::cos(scaled * w));
    f[size_t(half + k)] = real(std::sin(scaled * w));
  }
  return Tensor::from_data({1, d}, std::move(f));
}

// Linear layer in the W[out x in] convention: y = x·W^T + b, optionally with
// the LoRA delta for `name`.
Tensor linear(const ModelParams& params, const LoraAdapter* adapters, const std::string& name,
              const Tensor& x) {
  const Tensor& w = params.at(name + ".w");
  const Tensor& b = params.at(name + ".b");
  Tensor y;
  if (adapters != nullptr && adapters->has(name + ".w")) {
    const auto& [la, lb] = adapters->matrices.at(name + ".w");
    y = adapted_matmul(w, la, lb, adapters->config.alpha, adapters->config.rank, x);
  } else {
    y = matmul_nt(x, w);
  }
  return add_rows(y, b);
}

// x ⊙ (1 + scale) + shift with [1 x d] modulation vectors.
Tensor modulate(const Tensor& x, const Tensor& scale_vec, const Tensor& shift_vec) {
  return add_rows(mul_rows(x, add_scalar(scale_vec, real(1))), shift_vec);
}

} // namespace

int ModelConfig::resolved_vocab() const {
  return vocab_size > 0 ? vocab_size : Vocabulary::instance().size();
}

void ModelConfig::validate() const {
  ICL_CHECK(patch > 0 && d_model > 0 && heads > 0 && blocks > 0 && l_text > 0 && mlp_ratio > 0,
            "model config fields must be positive");
  ICL_CHECK(d_model % heads == 0, "d_model " << d_model << " not divisible by heads " << heads);
  ICL_CHECK(d_model % 2 == 0, "d_model must be even for the sinusoidal features");
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  ICL_CHECK(it != tensors.end(), "unknown parameter '" << name << "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  ICL_CHECK(it != tensors.end(), "unknown parameter '" << name << "'");
  return it->second;
}

int64_t ModelParams::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : tensors) {
    (void)name;
    n += t.numel();
  }
  return n;
}

void ModelParams::set_requires_grad(bool rg) {
  for (auto& [name, t] : tensors) {
    (void)name;
    t.set_requires_grad(rg);
  }
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : tensors) {
    (void)name;
    t.zero_grad();
  }
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int d = config.d_model;
  const int pd = config.patch_dim();
  const int v = config.resolved_vocab();
  const int ff = config.mlp_ratio * d;

  ModelParams p;
  p.config = config;

  // Insertion order fixes the rng draw order; the map sorts by name anyway,
  // but draws happen here, so this order is part of the init contract.
  auto matrix = [&](const std::string& name, int out, int in) {
    p.tensors[name] = rng_trunc_normal(rng, {out, in}, real(0.02));
  };
  auto bias = [&](const std::string& name, int n) { p.tensors[name] = Tensor::zeros({n}); };
  auto zeros2 = [&](const std::string& name, int out, int in) {
    p.tensors[name] = Tensor::zeros({out, in});
  };

  matrix("patch_embed.w", d, pd);
  bias("patch_embed.b", d);
  matrix("tok_emb", v, d);
  matrix("pos.text", config.l_text, d);
  matrix("pos.row", config.max_patch_rows, d);
  matrix("pos.col", config.max_patch_cols, d);
  matrix("modality.img", 1, d);
  matrix("modality.txt", 1, d);
  matrix("time_mlp.w1", d, d);
  bias("time_mlp.b1", d);
  matrix("time_mlp.w2", d, d);
  bias("time_mlp.b2", d);
  for (int i = 0; i < config.blocks; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    for (const char* m : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) matrix(b + m + ".w", d, d);
    for (const char* m : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) bias(b + m + ".b", d);
    matrix(b + "mlp.w1.w", ff, d);
    bias(b + "mlp.w1.b", ff);
    matrix(b + "mlp.w2.w", d, ff);
    bias(b + "mlp.w2.b", d);
    // Zero-initialized modulation: scale/shift/gate all start at 0, so each
    // block's residual branches contribute nothing at init.
    zeros2(b + "ada.w", 6 * d, d);
    bias(b + "ada.b", 6 * d);
  }
  matrix("head.w", pd, d);
  bias("head.b", pd);
  return p;
}

Tensor patchify(const Tensor& canvas, int patch) {
  ICL_CHECK(canvas.rank() == 3 && canvas.dim(0) == 3,
            "patchify: expected [3, h, w], got " << shape_str(canvas.shape()));
  const int64_t h = canvas.dim(1), w = canvas.dim(2);
  ICL_CHECK(patch > 0 && h % patch == 0 && w % patch == 0,
            "patchify: dims " << h << "x" << w << " not divisible by patch " << patch);
  const int64_t gr = h / patch, gc = w / patch;
  const int64_t n = gr * gc, pd = 3 * int64_t(patch) * patch;

  // Gather indices once; forward and backward are the same permutation.
  std::vector<int64_t> src_index(size_t(n * pd), 0);
  int64_t k = 0;
  for (int64_t r = 0; r < gr; ++r)
    for (int64_t c = 0; c < gc; ++c)
      for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t py = 0; py < patch; ++py)
          for (int64_t px = 0; px < patch; ++px)
            src_index[size_t(k++)] = (ch * h + r * patch + py) * w + c * patch + px;

  auto out_vals = std::vector<real>(size_t(n * pd));
  const real* src = canvas.value().data();
  for (size_t i = 0; i < out_vals.size(); ++i) out_vals[i] = src[size_t(src_index[i])];
  Tensor out = Tensor::from_data({n, pd}, std::move(out_vals));

  if (grad_enabled() && canvas.requires_grad()) {
    auto pc = canvas.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {pc};
    node->backprop = [pc, src_index](TensorNode& self) {
      pc->ensure_grad();
      real* dst = pc->grad.data();
      const real* g = self.grad.data();
      for (size_t i = 0; i < src_index.size(); ++i) dst[size_t(src_index[i])] += g[i];
    };
  }
  return out;
}

Tensor unpatchify(const Tensor& tokens, int patch, int height, int width) {
  ICL_CHECK(tokens.rank() == 2, "unpatchify: expected 2-D tokens");
  ICL_CHECK(patch > 0 && height % patch == 0 && width % patch == 0,
            "unpatchify: dims not divisible by patch");
  const int64_t gr = height / patch, gc = width / patch;
  const int64_t pd = 3 * int64_t(patch) * patch;
  ICL_CHECK(tokens.dim(0) == gr * gc && tokens.dim(1) == pd,
            "unpatchify: token shape " << shape_str(tokens.shape()) << " does not match "
                                       << height << "x" << width << " at patch " << patch);

  std::vector<int64_t> dst_index(size_t(tokens.numel()), 0);
  int64_t k = 0;
  for (int64_t r = 0; r < gr; ++r)
    for (int64_t c = 0; c < gc; ++c)
      for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t py = 0; py < patch; ++py)
          for (int64_t px = 0; px < patch; ++px)
            dst_index[size_t(k++)] = (ch * height + r * patch + py) * width + c * patch + px;

  auto out_vals = std::vector<real>(size_t(tokens.numel()));
  const real* src = tokens.value().data();
  for (size_t i = 0; i < out_vals.size(); ++i) out_vals[size_t(dst_index[i])] = src[i];
  Tensor out = Tensor::from_data({3, height, width}, std::move(out_vals));

  if (grad_enabled() && tokens.requires_grad()) {
    auto pt = tokens.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {pt};
    node->backprop = [pt, dst_index](TensorNode& self) {
      pt->ensure_grad();
      real* dst = pt->grad.data();
      const real* g = self.grad.data();
      for (size_t i = 0; i < dst_index.size(); ++i) dst[i] += g[size_t(dst_index[i])];
    };
  }
  return out;
}

TimeEmbed timestep_embed(const ModelParams& params, real t) {
  ICL_CHECK(t >= real(0) && t <= real(1), "timestep t = " << t << " outside [0, 1]");
  const int d = params.config.d_model;
  Tensor f = time_features(t, d);
  Tensor h = gelu(add_rows(matmul_nt(f, params.at("time_mlp.w1")), params.at("time_mlp.b1")));
  Tensor e = add_rows(matmul_nt(h, params.at("time_mlp.w2")), params.at("time_mlp.b2"));
  return TimeEmbed{t, e};
}

std::vector<std::string> lora_target_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (int i = 0; i < config.blocks; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    for (const char* m : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2"})
      names.push_back(b + m + ".w");
  }
  return names;
}

Canvas dit_forward(const ModelParams& params, const LoraAdapter* adapters, const Canvas& canvas,
                   real t, const TokenSeq& text) {
  const ModelConfig& cfg = params.config;
  cfg.validate();
  ICL_CHECK(canvas.pixels.defined() && canvas.pixels.rank() == 3 && canvas.pixels.dim(0) == 3,
            "forward: canvas pixels must be [3, h, w]");
  ICL_CHECK(text.length() == cfg.l_text,
            "forward: text length " << text.length() << " != L_text " << cfg.l_text);
  const int d = cfg.d_model;
  const int64_t gr = canvas.height / cfg.patch, gc = canvas.width / cfg.patch;
  ICL_CHECK(gr <= cfg.max_patch_rows && gc <= cfg.max_patch_cols,
            "forward: canvas exceeds positional tables (" << gr << "x" << gc << " patches)");
  const int64_t n_img = gr * gc;
  const int64_t n_txt = cfg.l_text;
  const int64_t n_all = n_img + n_txt;

  // Image stream: patch embedding + factored 2-D position + modality tag.
  Tensor raw = patchify(canvas.pixels, cfg.patch);
  Tensor x_img = add_rows(matmul_nt(raw, params.at("patch_embed.w")), params.at("patch_embed.b"));
  std::vector<int> row_ids(size_t(n_img), 0), col_ids(size_t(n_img), 0);
  for (int64_t i = 0; i < n_img; ++i) {
    row_ids[size_t(i)] = int(i / gc);
    col_ids[size_t(i)] = int(i % gc);
  }
  x_img = add(x_img, embedding_lookup(params.at("pos.row"), row_ids));
  x_img = add(x_img, embedding_lookup(params.at("pos.col"), col_ids));
  x_img = add_rows(x_img, params.at("modality.img"));

  // Text stream: token embedding + 1-D position + modality tag.
  for (int id : text.ids)
    ICL_CHECK(id >= 0 && id < cfg.resolved_vocab(), "forward: token id " << id << " out of range");
  Tensor x_txt = embedding_lookup(params.at("tok_emb"), text.ids);
  std::vector<int> pos_ids(size_t(n_txt), 0);
  for (int64_t i = 0; i < n_txt; ++i) pos_ids[size_t(i)] = int(i);
  x_txt = add(x_txt, embedding_lookup(params.at("pos.text"), pos_ids));
  x_txt = add_rows(x_txt, params.at("modality.txt"));

  Tensor x = concat_rows(x_img, x_txt);

  // Additive attention mask over keys: 0 for visible, -1e30 for pad text
  // positions (strictly after the first [EOS]).
  std::vector<real> maskv(size_t(n_all), real(0));
  const int eos = text.eos_pos();
  for (int64_t i = n_img + eos + 1; i < n_all; ++i) maskv[size_t(i)] = real(-1e30);
  Tensor key_mask = Tensor::from_data({1, n_all}, std::move(maskv));

  TimeEmbed te = timestep_embed(params, t);
  Tensor unit_gain = Tensor::full({d}, real(1));
  Tensor zero_bias = Tensor::zeros({d});
  const real attn_scale = real(1) / std::sqrt(real(cfg.head_dim()));

  for (int bi = 0; bi < cfg.blocks; ++bi) {
    const std::string b = "blocks." + std::to_string(bi) + ".";
    Tensor mod = add_rows(matmul_nt(gelu(te.embedding), params.at(b + "ada.w")),
                          params.at(b + "ada.b"));
    Tensor scale1 = slice_cols(mod, 0 * d, d);
    Tensor shift1 = slice_cols(mod, 1 * d, d);
    Tensor gate1 = slice_cols(mod, 2 * d, d);
    Tensor scale2 = slice_cols(mod, 3 * d, d);
    Tensor shift2 = slice_cols(mod, 4 * d, d);
    Tensor gate2 = slice_cols(mod, 5 * d, d);

    // Attention branch.
    Tensor h = modulate(layer_norm(x, unit_gain, zero_bias), scale1, shift1);
    Tensor q = linear(params, adapters, b + "attn.wq", h);
    Tensor k = linear(params, adapters, b + "attn.wk", h);
    Tensor v = linear(params, adapters, b + "attn.wv", h);
    std::vector<Tensor> heads;
    heads.reserve(size_t(cfg.heads));
    const int hd = cfg.head_dim();
    for (int hi = 0; hi < cfg.heads; ++hi) {
      Tensor qh = slice_cols(q, int64_t(hi) * hd, hd);
      Tensor kh = slice_cols(k, int64_t(hi) * hd, hd);
      Tensor vh = slice_cols(v, int64_t(hi) * hd, hd);
      Tensor scores = add_rows(scale(matmul_nt(qh, kh), attn_scale), key_mask);
      Tensor attn = softmax(scores, -1);
      heads.push_back(matmul(attn, vh));
    }
    Tensor o = linear(params, adapters, b + "attn.wo", concat_cols(heads));
    x = add(x, mul_rows(o, gate1));

    // MLP branch.
    Tensor m = modulate(layer_norm(x, unit_gain, zero_bias), scale2, shift2);
    m = linear(params, adapters, b + "mlp.w2", gelu(linear(params, adapters, b + "mlp.w1", m)));
    x = add(x, mul_rows(m, gate2));
  }

  Tensor y = layer_norm(slice_rows(x, 0, n_img), unit_gain, zero_bias);
  y = add_rows(matmul_nt(y, params.at("head.w")), params.at("head.b"));
  Tensor vel = unpatchify(y, cfg.patch, canvas.height, canvas.width);
  return Canvas::from_tensor(std::move(vel));
}

} // namespace icl
