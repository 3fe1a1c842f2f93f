#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icl/dataset.hpp"
#include "icl/sampler.hpp"
#include "icl/trainer.hpp"

namespace icl {

// FNV-1a 64-bit, hex. Stable content fingerprint for manifests.
std::string fnv1a_hex(const void* data, size_t len);
std::string hash_file(const std::string& path);

// Everything needed to reproduce a run: command, fully resolved config,
// seed, inputs/outputs with content hashes. Written atomically next to the
// outputs as run_manifest.json. Wall time is informational and excluded from
// determinism comparisons.
struct RunManifest {
  std::string command;
  std::string config_json;
  uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // label -> path
  std::map<std::string, std::string> outputs; // label -> path
  double wall_ms = 0;

  void write(const std::string& path) const; // hashes inputs/outputs on write
};

struct GenDataResult {
  int sets = 0;
  int panel_files = 0;
  std::string manifest_path;
};
// task: palette | identity | effect | mixed. Layout is ignored for mixed.
GenDataResult run_gen_data(const std::string& task, const std::string& layout, int sets,
                           uint64_t seed, const std::string& out_dir);

TrainResult run_train_base(TrainConfig cfg, const ModelConfig& mcfg, const std::string& data_dir,
                           const std::string& out_ckpt);

TrainResult run_train_lora(TrainConfig cfg, const LoraConfig& lcfg, const std::string& base_ckpt,
                           const std::string& data_dir, const std::string& out_ckpt);

struct GenerateResult {
  std::string canvas_path;
  std::vector<std::string> panel_paths;
};
// Writes canvas.png, panel_<MARKER>.png per panel, prompt.json, and the run
// manifest into out_dir.
GenerateResult run_generate(const std::string& base_ckpt,
                            const std::optional<std::string>& lora_ckpt,
                            const std::string& prompt_path, const std::string& layout,
                            uint64_t seed, int steps, real guidance, const std::string& out_dir);

// reference: one canvas PNG path, or a comma-separated panel list in layout
// order. mask: comma-separated markers ("TL,TR" or full names).
GenerateResult run_inpaint(const std::string& base_ckpt,
                           const std::optional<std::string>& lora_ckpt,
                           const std::string& reference, const std::string& mask_spec,
                           real strength, const std::string& prompt_path,
                           const std::string& layout, uint64_t seed, int steps, real guidance,
                           const std::string& out_dir);

// Scans out_dir's set subdirectories (panel_<MARKER>.png groups), scores the
// task metric per set, and writes a ConsistencyReport JSON.
ConsistencyReport run_eval(const std::string& task, const std::string& dir,
                           const std::string& report_path);

// Shared helpers.
ModelParams load_base_checkpoint(const std::string& path);
LoraAdapter load_lora_checkpoint(const std::string& path, const ModelParams& base);

} // namespace icl
