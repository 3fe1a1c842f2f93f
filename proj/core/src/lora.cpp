#include "icl/lora.hpp"

#include <Eigen/Dense>

#include <algorithm>

namespace icl {

std::set<std::string> LoraConfig::resolved_targets(const ModelConfig& model) const {
  if (!targets.empty()) return targets;
  auto names = lora_target_names(model);
  return std::set<std::string>(names.begin(), names.end());
}

void LoraAdapter::set_requires_grad(bool rg) {
  for (auto& [name, ab] : matrices) {
    (void)name;
    ab.first.set_requires_grad(rg);
    ab.second.set_requires_grad(rg);
  }
}

void LoraAdapter::zero_grad() {
  for (auto& [name, ab] : matrices) {
    (void)name;
    ab.first.zero_grad();
    ab.second.zero_grad();
  }
}

int64_t LoraAdapter::param_count() const {
  int64_t n = 0;
  for (const auto& [name, ab] : matrices) {
    (void)name;
    n += ab.first.numel() + ab.second.numel();
  }
  return n;
}

LoraAdapter init_adapter(const LoraConfig& config, const ModelParams& params, Rng& rng) {
  ICL_CHECK(config.rank >= 1, "LoRA rank must be >= 1");
  LoraAdapter adapter;
  adapter.config = config;
  auto targets = config.resolved_targets(params.config);
  adapter.config.targets = targets;
  for (const auto& name : targets) {
    ICL_CHECK(params.has(name), "LoRA target '" << name << "' missing from model parameters");
    const Tensor& w = params.at(name);
    ICL_CHECK(w.rank() == 2, "LoRA target '" << name << "' is not a matrix");
    const int64_t out = w.dim(0), in = w.dim(1);
    ICL_CHECK(config.rank <= std::min(out, in),
              "LoRA rank " << config.rank << " exceeds min dim of target '" << name << "'");
    Tensor a = rng_normal(rng, {config.rank, in}, real(0.02));
    Tensor b = Tensor::zeros({out, config.rank});
    adapter.matrices[name] = {std::move(a), std::move(b)};
  }
  return adapter;
}

Tensor adapted_matmul(const Tensor& w, const Tensor& a, const Tensor& b, real alpha, int rank,
                      const Tensor& x) {
  ICL_CHECK(rank >= 1, "adapted_matmul: rank must be >= 1");
  ICL_CHECK(w.rank() == 2 && a.rank() == 2 && b.rank() == 2, "adapted_matmul: matrices expected");
  ICL_CHECK(a.dim(0) == rank && b.dim(1) == rank,
            "adapted_matmul: A must be [r x in], B [out x r]");
  ICL_CHECK(a.dim(1) == w.dim(1) && b.dim(0) == w.dim(0),
            "adapted_matmul: A/B do not match W " << shape_str(w.shape()));
  // The base matrix is frozen under adaptation: only A and B receive grads.
  Tensor base = matmul_nt(x, w.requires_grad() ? w.detach() : w);
  Tensor delta = matmul_nt(matmul_nt(x, a), b);
  return add(base, scale(delta, alpha / real(rank)));
}

ModelParams merge(const ModelParams& params, const LoraAdapter& adapter) {
  ICL_CHECK(!params.lora_merged, "merge: parameters already carry a merged adapter");
  ModelParams out;
  out.config = params.config;
  out.lora_merged = true;
  for (const auto& [name, t] : params.tensors) out.tensors[name] = t.clone();

  using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (const auto& [name, ab] : adapter.matrices) {
    ICL_CHECK(out.has(name), "merge: target '" << name << "' missing from model parameters");
    Tensor& w = out.at(name);
    const auto& [a, b] = ab;
    Eigen::Map<EMat> wm(w.value_mut().data(), w.dim(0), w.dim(1));
    Eigen::Map<const EMat> am(a.value().data(), a.dim(0), a.dim(1));
    Eigen::Map<const EMat> bm(b.value().data(), b.dim(0), b.dim(1));
    wm.noalias() += adapter.config.scaling() * (bm * am);
  }
  return out;
}

} // namespace icl
