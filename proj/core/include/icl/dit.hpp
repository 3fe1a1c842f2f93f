#pragma once

#include <map>
#include <string>
#include <vector>

#include "icl/canvas.hpp"
#include "icl/prompt.hpp"
#include "icl/rng.hpp"
#include "icl/tensor.hpp"

namespace icl {

struct LoraAdapter; // lora.hpp

struct ModelConfig {
  int patch = 4;
  int d_model = 128;
  int heads = 4;
  int blocks = 6;
  int l_text = TokenSeq::kDefaultLen;
  int mlp_ratio = 4;
  int vocab_size = 0;     // 0 -> size of the frozen vocabulary
  int max_patch_rows = 16; // largest supported canvas is 2x2 of 32x32 panels
  int max_patch_cols = 16;

  int head_dim() const { return d_model / heads; }
  int patch_dim() const { return 3 * patch * patch; }
  int resolved_vocab() const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// All weights, addressable by name. Names double as checkpoint keys and LoRA
// target names. Iteration over the map (sorted by name) fixes the parameter
// order everywhere: init, optimizer, checkpoints.
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;
  bool lora_merged = false; // set by merge(); guards against double-merging

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  int64_t param_count() const;
  void set_requires_grad(bool rg);
  void zero_grad();
};

// Deterministic weight layout for a config: truncated normal (std 0.02) for
// matrices, zeros for biases, zeros for the AdaLN modulation projection so
// every residual branch starts as the identity.
ModelParams init_params(const ModelConfig& config, Rng& rng);

// Canvas [3,H,W] -> [N x 3*patch^2] row-major patch tokens; channel-major
// within a patch. Differentiable (pure data movement).
Tensor patchify(const Tensor& canvas, int patch);
// Inverse; needs the target spatial dims.
Tensor unpatchify(const Tensor& tokens, int patch, int height, int width);

struct TimeEmbed {
  real t = 0;
  Tensor embedding; // [1 x d_model]
};

// Sinusoidal features of 1000*t (max period 10000, half cos / half sin)
// through the model's 2-layer MLP. t must lie in [0,1].
TimeEmbed timestep_embed(const ModelParams& params, real t);

// Full joint forward pass: patch tokens of the whole canvas and text tokens
// run through one bidirectional attention stack; AdaLN(scale/shift/gate from
// the timestep embedding) wraps attention and MLP in every block; the head
// reads image positions only and returns a velocity field with canvas shape.
// Pad text positions (strictly after the first [EOS]) are masked out of
// attention. `adapters` may be null; adapted matrices act as W + (alpha/r)BA.
Canvas dit_forward(const ModelParams& params, const LoraAdapter* adapters, const Canvas& canvas,
                   real t, const TokenSeq& text);

// Names of the matrices LoRA may target (attention + MLP projections).
std::vector<std::string> lora_target_names(const ModelConfig& config);

} // namespace icl
