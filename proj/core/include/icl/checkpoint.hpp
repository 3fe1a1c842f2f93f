#pragma once

#include <map>
#include <string>
#include <vector>

#include "icl/dit.hpp"
#include "icl/lora.hpp"
#include "icl/tensor.hpp"

namespace icl {

// Checkpoint container (bit-exact, versioned):
//   bytes 0..4   magic "ICLR1"
//   bytes 5..8   u32 little-endian header length H
//   bytes 9..8+H header JSON: {"version", "kind", "config",
//                "tensors": [{"name","shape","dtype":"f32","offset"}, ...]}
//   then the payload: little-endian 32-bit floats, tensors back to back in
//   manifest order; offsets are bytes from payload start and must be
//   contiguous and ascending. Loading resolves tensors by name, not order.
inline constexpr char kCheckpointMagic[5] = {'I', 'C', 'L', 'R', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;        // "model", "lora", "train_state"
  std::string config_json; // opaque config echo
  std::vector<std::string> order;
  std::map<std::string, Tensor> tensors;
};

// Writes atomically (temp file + rename). Tensor bytes are cast to f32 on
// the way out regardless of build precision.
void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

Checkpoint load_checkpoint(const std::string& path);

// Model / adapter conveniences. Model tensors are stored under their
// parameter names; adapter tensors as "lora.<target>.A" / "lora.<target>.B".
void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);
void save_lora(const std::string& path, const LoraAdapter& adapter, const ModelConfig& base);
LoraAdapter load_lora(const std::string& path);
// Model config echo stored inside an adapter checkpoint.
ModelConfig lora_base_config(const std::string& path);

std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);
std::string lora_config_json(const LoraConfig& config);
LoraConfig lora_config_from_json(const std::string& json_text);

} // namespace icl
