#include "icl/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "icl/tasks.hpp"

namespace icl {

namespace {

void check_same_dims(const Canvas& a, const Canvas& b, const char* op) {
  ICL_CHECK(a.height == b.height && a.width == b.width,
            op << ": canvas dims differ (" << a.height << "x" << a.width << " vs " << b.height
               << "x" << b.width << ")");
}

Canvas clamp_canvas(Canvas c) {
  for (real& v : c.pixels.value_mut()) v = std::clamp(v, real(-1), real(1));
  return c;
}

} // namespace

Canvas interpolate(const Canvas& x, const Canvas& eps, real t) {
  check_same_dims(x, eps, "interpolate");
  ICL_CHECK(t >= real(0) && t <= real(1), "interpolate: t = " << t << " outside [0, 1]");
  Canvas out = Canvas::zeros(x.height, x.width);
  const real* xv = x.pixels.value().data();
  const real* ev = eps.pixels.value().data();
  real* ov = out.pixels.value_mut().data();
  const real a = real(1) - t;
  for (int64_t i = 0; i < out.numel(); ++i) ov[i] = a * xv[i] + t * ev[i];
  return out;
}

Canvas velocity_target(const Canvas& x, const Canvas& eps) {
  check_same_dims(x, eps, "velocity_target");
  Canvas out = Canvas::zeros(x.height, x.width);
  const real* xv = x.pixels.value().data();
  const real* ev = eps.pixels.value().data();
  real* ov = out.pixels.value_mut().data();
  for (int64_t i = 0; i < out.numel(); ++i) ov[i] = ev[i] - xv[i];
  return out;
}

Tensor fm_loss(const ModelParams& params, const LoraAdapter* adapters,
               const ImageSetRecord& record, Rng& rng, real prompt_dropout) {
  ICL_CHECK(record.canvas.pixels.defined(), "fm_loss: record not finalized");
  // Fixed draw order: t, dropout coin, eps.
  const real t = real(rng.uniform());
  const bool drop = rng.uniform() < double(prompt_dropout);
  Canvas eps = Canvas::from_tensor(
      rng_normal(rng, {3, record.canvas.height, record.canvas.width}));
  Canvas zt = interpolate(record.canvas, eps, t);
  Canvas target = velocity_target(record.canvas, eps);
  const TokenSeq text = drop ? null_prompt(params.config.l_text) : record.tokens;
  Canvas pred = dit_forward(params, adapters, zt, t, text);
  return mse_loss(pred.pixels, target.pixels);
}

Canvas integrate_flow(const VelocityFn& velocity, int steps, int height, int width, Rng& rng,
                      SampleTrace* trace) {
  ICL_CHECK(steps >= 1, "integrate_flow: steps must be >= 1");
  NoGradGuard ng;
  Canvas z = Canvas::from_tensor(rng_normal(rng, {3, height, width}));
  const real dt = real(1) / real(steps);
  for (int i = 0; i < steps; ++i) {
    const real t = real(1) - real(i) * dt;
    Canvas v = velocity(z, t);
    if (trace) {
      trace->times.push_back(t);
      trace->v_guided.push_back(v);
    }
    real* zv = z.pixels.value_mut().data();
    const real* vv = v.pixels.value().data();
    for (int64_t k = 0; k < z.numel(); ++k) zv[k] -= dt * vv[k];
  }
  return clamp_canvas(std::move(z));
}

VelocityFn cfg_velocity(const ModelParams& params, const LoraAdapter* adapters,
                        const TokenSeq& text, real guidance, SampleTrace* trace) {
  const TokenSeq uncond = null_prompt(params.config.l_text);
  return [&params, adapters, text, uncond, guidance, trace](const Canvas& z, real t) -> Canvas {
    // Exact algebraic collapses: g == 1 is the conditional branch alone,
    // g == 0 the unconditional alone. Skipping the unused forward does not
    // disturb the rng stream (forwards draw nothing).
    if (guidance == real(1)) {
      Canvas vc = dit_forward(params, adapters, z, t, text);
      if (trace) {
        trace->v_cond.push_back(vc);
        trace->v_uncond.push_back(vc);
      }
      return vc;
    }
    if (guidance == real(0)) {
      Canvas vu = dit_forward(params, adapters, z, t, uncond);
      if (trace) {
        trace->v_cond.push_back(vu);
        trace->v_uncond.push_back(vu);
      }
      return vu;
    }
    Canvas vc = dit_forward(params, adapters, z, t, text);
    Canvas vu = dit_forward(params, adapters, z, t, uncond);
    Canvas out = Canvas::zeros(z.height, z.width);
    const real* c = vc.pixels.value().data();
    const real* u = vu.pixels.value().data();
    real* o = out.pixels.value_mut().data();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] = u[i] + guidance * (c[i] - u[i]);
    if (trace) {
      trace->v_cond.push_back(std::move(vc));
      trace->v_uncond.push_back(std::move(vu));
    }
    return out;
  };
}

Canvas sample(const ModelParams& params, const LoraAdapter* adapters, const TokenSeq& text,
              const SamplerConfig& cfg, const PanelLayout& layout, SampleTrace* trace) {
  cfg.validate();
  Rng rng(cfg.seed);
  VelocityFn v = cfg_velocity(params, adapters, text, cfg.guidance, trace);
  return integrate_flow(v, cfg.steps, layout.canvas_h(), layout.canvas_w(), rng, trace);
}

Canvas sdedit_inpaint(const ModelParams& params, const LoraAdapter* adapters,
                      const TokenSeq& text, const InpaintSpec& spec, const SamplerConfig& cfg) {
  cfg.validate();
  spec.mask.validate(/*require_nonempty=*/true);
  const PanelLayout& layout = spec.mask.layout;
  ICL_CHECK(spec.reference.height == layout.canvas_h() &&
                spec.reference.width == layout.canvas_w(),
            "sdedit_inpaint: reference dims do not match the mask layout");
  ICL_CHECK(spec.strength >= real(0) && spec.strength <= real(1),
            "sdedit_inpaint: strength must lie in [0, 1]");

  // strength -> 0 limit: no integration, the reference passes through.
  if (spec.strength == real(0)) return spec.reference;

  NoGradGuard ng;
  Rng rng(cfg.seed);
  const int h = spec.reference.height, w = spec.reference.width;

  Tensor gen_mask = mask_region(spec.mask); // 1 on panels to generate
  const real* m = gen_mask.value().data();
  bool any_known = false;
  for (int64_t i = 0; i < gen_mask.numel(); ++i) {
    if (m[i] == real(0)) {
      any_known = true;
      break;
    }
  }

  VelocityFn velocity = cfg_velocity(params, adapters, text, cfg.guidance, nullptr);

  // Integrate t0 -> 0 on the sub-grid of the uniform 1 -> 0 grid: step count
  // scales with t0 so dt matches plain sampling at t0 = 1.
  const int steps = std::max(1, int(std::ceil(double(cfg.steps) * double(spec.strength))));
  const real dt = spec.strength / real(steps);

  Canvas eps = Canvas::from_tensor(rng_normal(rng, {3, h, w}));
  Canvas z = interpolate(spec.reference, eps, spec.strength);

  for (int i = 0; i < steps; ++i) {
    const real t = spec.strength - real(i) * dt;
    Canvas v = velocity(z, t);
    real* zv = z.pixels.value_mut().data();
    const real* vv = v.pixels.value().data();
    for (int64_t k = 0; k < z.numel(); ++k) zv[k] -= dt * vv[k];

    // Replacement projection: re-noise the reference to the new time with
    // fresh noise and overwrite the known (unmasked) pixels.
    if (any_known) {
      const real tn = spec.strength - real(i + 1) * dt;
      Canvas eps2 = Canvas::from_tensor(rng_normal(rng, {3, h, w}));
      Canvas known = interpolate(spec.reference, eps2, std::max(tn, real(0)));
      const real* kv = known.pixels.value().data();
      for (int64_t k = 0; k < z.numel(); ++k)
        if (m[k] == real(0)) zv[k] = kv[k];
    }
  }

  z = clamp_canvas(std::move(z));
  // Final hard overwrite guarantees the conditional contract bit-exactly.
  if (any_known) {
    real* zv = z.pixels.value_mut().data();
    const real* rv = spec.reference.pixels.value().data();
    for (int64_t k = 0; k < z.numel(); ++k)
      if (m[k] == real(0)) zv[k] = rv[k];
  }
  return z;
}

} // namespace icl
