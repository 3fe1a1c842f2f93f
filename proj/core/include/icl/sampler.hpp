#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "icl/canvas.hpp"
#include "icl/dit.hpp"
#include "icl/lora.hpp"
#include "icl/prompt.hpp"
#include "icl/rng.hpp"

namespace icl {

struct ImageSetRecord; // tasks.hpp

struct SamplerConfig {
  int steps = 20;
  real guidance = real(3.5);
  uint64_t seed = 0;

  void validate() const {
    ICL_CHECK(steps >= 1, "sampler steps must be >= 1");
    ICL_CHECK(guidance >= real(0), "guidance must be >= 0");
  }
};

// Panels to GENERATE are masked; unmasked panels are held to the reference.
struct InpaintSpec {
  Canvas reference;
  PanelMask mask;
  real strength = real(1); // SDEdit noising strength t0 in (0, 1]
};

// Straight-path interpolant z_t = (1-t)·x + t·eps (t=0 data, t=1 noise).
Canvas interpolate(const Canvas& x, const Canvas& eps, real t);

// Constant velocity along the straight path: v = eps - x.
Canvas velocity_target(const Canvas& x, const Canvas& eps);

// Flow-matching loss on one record's composed canvas:
//   t ~ U(0,1); with prob `prompt_dropout` the prompt becomes null_prompt();
//   eps ~ N(0,1); loss = mse(forward(z_t, t, text), eps - x).
// Draw order is fixed (t, dropout coin, eps) and part of the determinism
// contract.
Tensor fm_loss(const ModelParams& params, const LoraAdapter* adapters,
               const ImageSetRecord& record, Rng& rng, real prompt_dropout = real(0.1));

// Velocity field used by the integrator: v(z, t).
using VelocityFn = std::function<Canvas(const Canvas&, real)>;

struct SampleTrace {
  std::vector<real> times;        // grid point before each step
  std::vector<Canvas> v_cond;     // conditional velocity per step (CFG path only)
  std::vector<Canvas> v_uncond;   // unconditional velocity per step
  std::vector<Canvas> v_guided;   // applied velocity per step
};

// Euler integration of dz/dt along the grid t: 1 -> 0 (uniform, `steps`
// segments): z <- z - dt · v(z, t), starting from z1 ~ N(0,1); the result is
// clamped to [-1,1]. The velocity callback keeps the integrator testable
// against closed-form fields, independent of the model.
Canvas integrate_flow(const VelocityFn& velocity, int steps, int height, int width, Rng& rng,
                      SampleTrace* trace = nullptr);

// Classifier-free-guided velocity from the model:
//   g == 1 -> conditional branch only (exact collapse; the unconditional
//   forward is skipped), g == 0 -> unconditional only, otherwise
//   v_u + g·(v_c - v_u).
VelocityFn cfg_velocity(const ModelParams& params, const LoraAdapter* adapters,
                        const TokenSeq& text, real guidance, SampleTrace* trace = nullptr);

// Text-conditional generation over a layout-shaped canvas.
Canvas sample(const ModelParams& params, const LoraAdapter* adapters, const TokenSeq& text,
              const SamplerConfig& cfg, const PanelLayout& layout, SampleTrace* trace = nullptr);

// SDEdit-style masked inpainting: noise the reference to strength t0,
// integrate to 0, and after every step overwrite known (unmasked) pixels with
// interpolate(reference, fresh eps, t); the final output carries the
// reference's known pixels exactly. strength 0 returns the reference.
Canvas sdedit_inpaint(const ModelParams& params, const LoraAdapter* adapters,
                      const TokenSeq& text, const InpaintSpec& spec, const SamplerConfig& cfg);

} // namespace icl
