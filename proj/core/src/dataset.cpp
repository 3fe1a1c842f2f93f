#include "icl/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "icl/png_io.hpp"

namespace icl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Dataset gen_task_dataset(TaskKind kind, const PanelLayout& layout, int sets, uint64_t seed) {
  ICL_CHECK(sets >= 1, "dataset needs at least one set");
  TaskSpec spec;
  spec.kind = kind;
  spec.layout = layout;
  spec.validate();
  Dataset ds;
  ds.task = task_name(kind);
  Rng master(seed);
  for (int i = 0; i < sets; ++i) {
    Rng r = master.fork(uint64_t(i));
    ds.records.push_back(gen_set(spec, r));
  }
  return ds;
}

Dataset gen_mixed_dataset(int sets, uint64_t seed) {
  ICL_CHECK(sets >= 1, "dataset needs at least one set");
  Dataset ds;
  ds.task = "mixed";
  Rng master(seed);
  for (int i = 0; i < sets; ++i) {
    Rng r = master.fork(uint64_t(i));
    ds.records.push_back(gen_corpus_set(r));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  ICL_CHECK_IO(!ec, "cannot create dataset directory '" << dir << "'");

  std::ostringstream manifest;
  char name[64];
  for (size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i];
    json line;
    json paths = json::array();
    for (size_t p = 0; p < rec.panels.size(); ++p) {
      std::snprintf(name, sizeof(name), "set%04zu_p%zu.png", i, p);
      write_png((fs::path(dir) / name).string(), rec.panels[p]);
      paths.push_back(name);
    }
    line["panels"] = paths;
    line["layout"] = rec.layout.grid_name();
    line["prompt"] = json::parse(prompt_to_json(rec.prompt));
    line["task"] = rec.task;
    manifest << line.dump() << "\n";
  }
  // Atomic manifest write: readers never see a half-written file.
  const std::string tmp = (fs::path(dir) / "manifest.jsonl.tmp").string();
  const std::string final_path = (fs::path(dir) / "manifest.jsonl").string();
  {
    std::ofstream os(tmp, std::ios::trunc);
    ICL_CHECK_IO(os.good(), "cannot write '" << tmp << "'");
    os << manifest.str();
  }
  fs::rename(tmp, final_path, ec);
  ICL_CHECK_IO(!ec, "rename failed for '" << final_path << "'");
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.jsonl").string();
  std::ifstream is(manifest_path);
  ICL_CHECK_IO(is.good(), "cannot open dataset manifest '" << manifest_path << "'");
  Dataset ds;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw RuntimeError("manifest line " + std::to_string(line_no) + " is not valid JSON: " +
                         e.what());
    }
    ImageSetRecord rec;
    rec.task = j.value("task", "");
    for (const auto& p : j.at("panels"))
      rec.panels.push_back(read_png((fs::path(dir) / p.get<std::string>()).string()));
    ICL_CHECK_IO(!rec.panels.empty(), "manifest line " << line_no << " has no panels");
    rec.layout = PanelLayout::make(j.at("layout").get<std::string>(), rec.panels[0].height,
                                   rec.panels[0].width);
    rec.prompt = prompt_from_json(j.at("prompt").dump());
    rec.finalize();
    ds.records.push_back(std::move(rec));
    if (ds.task.empty()) ds.task = ds.records.back().task;
  }
  ICL_CHECK_IO(!ds.records.empty(), "dataset '" << dir << "' is empty");
  return ds;
}

} // namespace icl
