#pragma once

#include <map>
#include <set>
#include <string>

#include "icl/dit.hpp"
#include "icl/tensor.hpp"

namespace icl {

struct LoraConfig {
  int rank = 16;
  real alpha = 16; // alpha = rank by default so rank changes keep scale 1
  std::set<std::string> targets; // empty -> all attention/MLP projections

  real scaling() const { return alpha / real(rank); }
  std::set<std::string> resolved_targets(const ModelConfig& model) const;
};

// Low-rank deltas over named base matrices W [out x in]:
//   ΔW = (alpha/r) · B · A,  A [r x in] ~ N(0, 0.02), B [out x r] = 0,
// so a fresh adapter is an exact no-op.
struct LoraAdapter {
  LoraConfig config;
  // target name -> pair; A first, B second.
  std::map<std::string, std::pair<Tensor, Tensor>> matrices;

  bool has(const std::string& name) const { return matrices.count(name) > 0; }
  void set_requires_grad(bool rg);
  void zero_grad();
  int64_t param_count() const;
};

LoraAdapter init_adapter(const LoraConfig& config, const ModelParams& params, Rng& rng);

// x [n x in] -> x·W^T + (alpha/r)·(x·A^T)·B^T, i.e. column-convention
// W·x + (alpha/r)·B·A·x. The base W never receives gradient here; A and B do.
Tensor adapted_matmul(const Tensor& w, const Tensor& a, const Tensor& b, real alpha, int rank,
                      const Tensor& x);

// W <- W + (alpha/r)·B·A for every target; returns a deep-copied parameter
// set with its lora_merged flag set. Merging into already-merged params
// throws (merging twice would add the delta twice).
ModelParams merge(const ModelParams& params, const LoraAdapter& adapter);

} // namespace icl
