#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icl/checkpoint.hpp"
#include "icl/dataset.hpp"
#include "icl/dit.hpp"
#include "icl/lora.hpp"

namespace icl {

struct TrainConfig {
  enum class Phase { Base, Lora };
  Phase phase = Phase::Base;
  int64_t steps = 20000;
  int batch = 4;
  real lr = real(1e-4);
  real weight_decay = real(0.01);
  uint64_t seed = 0;
  real grad_clip = real(1);
  int64_t checkpoint_every = 0; // 0 = no periodic train-state checkpoints
  int64_t log_every = 100;
  real prompt_dropout = real(0.1);
  std::string resume; // train-state checkpoint to resume from

  static TrainConfig base_defaults();
  static TrainConfig lora_defaults();
  void validate() const;
};

// Adam with decoupled weight decay and bias correction. Moments mirror the
// trainable tensors exactly; frozen parameters never enter the state.
struct OptimizerState {
  static constexpr real kBeta1 = real(0.9);
  static constexpr real kBeta2 = real(0.999);
  static constexpr real kEps = real(1e-8);
  int64_t step = 0;
  std::map<std::string, std::pair<std::vector<real>, std::vector<real>>> moments; // m, v
};

// One update over named trainable tensors whose grads are populated.
// Global-norm clipping at cfg.grad_clip runs before the moment update.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& trainable,
               OptimizerState& state, real lr, real weight_decay, real grad_clip);

struct TrainResult {
  std::vector<real> loss_history; // one entry per optimization step
  real probe_loss_init = 0;  // mean fm_loss over the fixed probe draws at init
  real probe_loss_final = 0; // same draws, final weights
  bool loss_trend_flag = false; // 1000-step moving average rose on >5% of steps
  int64_t steps_run = 0;
  std::string checkpoint_path;
};

// Base pretraining from random init (or resume). Writes the final model
// checkpoint to out_ckpt, periodic train-state checkpoints next to it, and a
// JSONL log ({step, loss, lr, wall_ms}) to log_path when non-empty.
// A non-finite loss aborts with diagnostics.
TrainResult train_base(const TrainConfig& cfg, const ModelConfig& mcfg, const Dataset& data,
                       const std::string& out_ckpt, const std::string& log_path = "");

// In-Context LoRA tuning: the base is frozen (bitwise unchanged), only
// adapter A/B matrices train. Dataset sizes outside [20, 100] log a warning;
// sizes outside [1, 1000] are rejected.
TrainResult train_lora(const TrainConfig& cfg, const LoraConfig& lcfg, ModelParams& base,
                       const Dataset& data, const std::string& out_ckpt,
                       const std::string& log_path = "");

} // namespace icl
