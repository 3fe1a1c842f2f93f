#pragma once

#include <string>
#include <vector>

#include "icl/tasks.hpp"

namespace icl {

struct Dataset {
  std::string task; // "palette", "identity", "effect", or "mixed"
  std::vector<ImageSetRecord> records;
};

// Per-set rng forks keep generation order-independent and reproducible.
Dataset gen_task_dataset(TaskKind kind, const PanelLayout& layout, int sets, uint64_t seed);
Dataset gen_mixed_dataset(int sets, uint64_t seed);

// On-disk form: <dir>/set%04d_p%d.png panels plus <dir>/manifest.jsonl with
// one line per set: {"panels": [paths], "layout": "2x2", "prompt": {...},
// "task": "..."}.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

} // namespace icl
