#include "icl/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "icl/png_io.hpp"

namespace icl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream iss(s);
  while (std::getline(iss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  ICL_CHECK_IO(is.good(), "cannot open '" << path << "'");
  std::ostringstream oss;
  oss << is.rdbuf();
  return oss.str();
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    ICL_CHECK_IO(os.good(), "cannot write '" << tmp << "'");
    os << text;
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  ICL_CHECK_IO(!ec, "rename failed for '" << path << "'");
}

} // namespace

std::string fnv1a_hex(const void* data, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

std::string hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ICL_CHECK_IO(is.good(), "cannot hash '" << path << "'");
  std::ostringstream oss;
  oss << is.rdbuf();
  const std::string bytes = oss.str();
  return fnv1a_hex(bytes.data(), bytes.size());
}

void RunManifest::write(const std::string& path) const {
  json j;
  j["command"] = command;
  j["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  j["seed"] = seed;
  json in = json::object(), out = json::object();
  for (const auto& [label, p] : inputs) {
    in[label] = {{"path", p}, {"fnv1a64", fs::exists(p) ? hash_file(p) : "missing"}};
  }
  for (const auto& [label, p] : outputs) {
    out[label] = {{"path", p}, {"fnv1a64", fs::exists(p) ? hash_file(p) : "missing"}};
  }
  j["inputs"] = in;
  j["outputs"] = out;
  j["wall_ms"] = wall_ms;
  write_text_atomic(path, j.dump(2) + "\n");
}

GenDataResult run_gen_data(const std::string& task, const std::string& layout, int sets,
                           uint64_t seed, const std::string& out_dir) {
  ICL_CHECK(sets >= 1, "--sets must be >= 1");
  const auto start = Clock::now();
  Dataset ds;
  if (task == "mixed") {
    ds = gen_mixed_dataset(sets, seed);
  } else {
    ds = gen_task_dataset(task_from_name(task), PanelLayout::make(layout), sets, seed);
  }
  save_dataset(ds, out_dir);

  GenDataResult result;
  result.sets = sets;
  result.manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  for (const auto& rec : ds.records) result.panel_files += int(rec.panels.size());

  RunManifest manifest;
  manifest.command = "gen-data";
  json cfg;
  cfg["task"] = task;
  cfg["layout"] = layout;
  cfg["sets"] = sets;
  manifest.config_json = cfg.dump();
  manifest.seed = seed;
  manifest.outputs["manifest"] = result.manifest_path;
  manifest.wall_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  manifest.write((fs::path(out_dir) / "run_manifest.json").string());
  return result;
}

TrainResult run_train_base(TrainConfig cfg, const ModelConfig& mcfg, const std::string& data_dir,
                           const std::string& out_ckpt) {
  const auto start = Clock::now();
  cfg.phase = TrainConfig::Phase::Base;
  Dataset data = load_dataset(data_dir);
  const std::string log_path = out_ckpt + ".log.jsonl";
  TrainResult result = train_base(cfg, mcfg, data, out_ckpt, log_path);

  RunManifest manifest;
  manifest.command = "train-base";
  json cfg_json;
  cfg_json["train"] = json::parse([&] {
    json t;
    t["steps"] = cfg.steps;
    t["batch"] = cfg.batch;
    t["lr"] = double(cfg.lr);
    t["weight_decay"] = double(cfg.weight_decay);
    t["grad_clip"] = double(cfg.grad_clip);
    t["prompt_dropout"] = double(cfg.prompt_dropout);
    t["checkpoint_every"] = cfg.checkpoint_every;
    return t.dump();
  }());
  cfg_json["model"] = json::parse(model_config_json(mcfg));
  cfg_json["probe_loss_init"] = double(result.probe_loss_init);
  cfg_json["probe_loss_final"] = double(result.probe_loss_final);
  cfg_json["loss_trend_flag"] = result.loss_trend_flag;
  manifest.config_json = cfg_json.dump();
  manifest.seed = cfg.seed;
  manifest.inputs["dataset"] = (fs::path(data_dir) / "manifest.jsonl").string();
  manifest.outputs["checkpoint"] = out_ckpt;
  manifest.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  manifest.write(out_ckpt + ".run_manifest.json");
  return result;
}

TrainResult run_train_lora(TrainConfig cfg, const LoraConfig& lcfg, const std::string& base_ckpt,
                           const std::string& data_dir, const std::string& out_ckpt) {
  const auto start = Clock::now();
  cfg.phase = TrainConfig::Phase::Lora;
  ModelParams base = load_model(base_ckpt);
  Dataset data = load_dataset(data_dir);
  const std::string log_path = out_ckpt + ".log.jsonl";
  TrainResult result = train_lora(cfg, lcfg, base, data, out_ckpt, log_path);

  RunManifest manifest;
  manifest.command = "train-lora";
  json cfg_json;
  cfg_json["train"] = json::parse([&] {
    json t;
    t["steps"] = cfg.steps;
    t["batch"] = cfg.batch;
    t["lr"] = double(cfg.lr);
    t["weight_decay"] = double(cfg.weight_decay);
    t["grad_clip"] = double(cfg.grad_clip);
    t["prompt_dropout"] = double(cfg.prompt_dropout);
    return t.dump();
  }());
  cfg_json["lora"] = json::parse(lora_config_json(lcfg));
  cfg_json["probe_loss_init"] = double(result.probe_loss_init);
  cfg_json["probe_loss_final"] = double(result.probe_loss_final);
  manifest.config_json = cfg_json.dump();
  manifest.seed = cfg.seed;
  manifest.inputs["base"] = base_ckpt;
  manifest.inputs["dataset"] = (fs::path(data_dir) / "manifest.jsonl").string();
  manifest.outputs["adapter"] = out_ckpt;
  manifest.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  manifest.write(out_ckpt + ".run_manifest.json");
  return result;
}

ModelParams load_base_checkpoint(const std::string& path) { return load_model(path); }

LoraAdapter load_lora_checkpoint(const std::string& path, const ModelParams& base) {
  LoraAdapter adapter = load_lora(path);
  for (const auto& target : adapter.config.targets)
    ICL_CHECK_IO(base.has(target), "adapter target '" << target
                                                      << "' missing from the base checkpoint");
  return adapter;
}

namespace {

GenerateResult write_generation(const Canvas& canvas, const PanelLayout& layout,
                                const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  ICL_CHECK_IO(!ec, "cannot create output directory '" << out_dir << "'");
  GenerateResult result;
  result.canvas_path = (fs::path(out_dir) / "canvas.png").string();
  write_png(result.canvas_path, canvas);
  auto panels = split(canvas, layout);
  for (size_t i = 0; i < panels.size(); ++i) {
    const std::string p =
        (fs::path(out_dir) / ("panel_" + marker_name(layout.markers[i]) + ".png")).string();
    write_png(p, panels[i]);
    result.panel_paths.push_back(p);
  }
  return result;
}

} // namespace

GenerateResult run_generate(const std::string& base_ckpt,
                            const std::optional<std::string>& lora_ckpt,
                            const std::string& prompt_path, const std::string& layout,
                            uint64_t seed, int steps, real guidance, const std::string& out_dir) {
  const auto start = Clock::now();
  ModelParams base = load_base_checkpoint(base_ckpt);
  std::optional<LoraAdapter> adapter;
  if (lora_ckpt) adapter = load_lora_checkpoint(*lora_ckpt, base);

  const std::string prompt_text = read_text_file(prompt_path);
  PromptProgram prompt = prompt_from_json(prompt_text);
  PanelLayout l = PanelLayout::make(layout);
  TokenSeq text = tokenize(prompt, l, base.config.l_text);

  SamplerConfig cfg;
  cfg.steps = steps;
  cfg.guidance = guidance;
  cfg.seed = seed;
  Canvas canvas = sample(base, adapter ? &*adapter : nullptr, text, cfg, l);

  GenerateResult result = write_generation(canvas, l, out_dir);
  write_text_atomic((fs::path(out_dir) / "prompt.json").string(), prompt_to_json(prompt) + "\n");

  RunManifest manifest;
  manifest.command = "generate";
  json cfg_json;
  cfg_json["layout"] = layout;
  cfg_json["steps"] = steps;
  cfg_json["guidance"] = double(guidance);
  manifest.config_json = cfg_json.dump();
  manifest.seed = seed;
  manifest.inputs["base"] = base_ckpt;
  if (lora_ckpt) manifest.inputs["lora"] = *lora_ckpt;
  manifest.inputs["prompt"] = prompt_path;
  manifest.outputs["canvas"] = result.canvas_path;
  for (size_t i = 0; i < result.panel_paths.size(); ++i)
    manifest.outputs["panel_" + marker_name(l.markers[i])] = result.panel_paths[i];
  manifest.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  manifest.write((fs::path(out_dir) / "run_manifest.json").string());
  return result;
}

GenerateResult run_inpaint(const std::string& base_ckpt,
                           const std::optional<std::string>& lora_ckpt,
                           const std::string& reference, const std::string& mask_spec,
                           real strength, const std::string& prompt_path,
                           const std::string& layout, uint64_t seed, int steps, real guidance,
                           const std::string& out_dir) {
  const auto start = Clock::now();
  ModelParams base = load_base_checkpoint(base_ckpt);
  std::optional<LoraAdapter> adapter;
  if (lora_ckpt) adapter = load_lora_checkpoint(*lora_ckpt, base);

  PanelLayout l = PanelLayout::make(layout);

  // Reference: one canvas, or panels in layout order.
  auto paths = split_list(reference);
  ICL_CHECK(!paths.empty(), "--reference is empty");
  Canvas ref;
  if (paths.size() == 1) {
    ref = read_png(paths[0]);
    ICL_CHECK(ref.height == l.canvas_h() && ref.width == l.canvas_w(),
              "reference canvas is " << ref.height << "x" << ref.width << ", layout "
                                     << layout << " wants " << l.canvas_h() << "x"
                                     << l.canvas_w());
  } else {
    ICL_CHECK(int(paths.size()) == l.panel_count(),
              "reference lists " << paths.size() << " panels for a " << layout << " layout");
    std::vector<Canvas> panels;
    for (const auto& p : paths) panels.push_back(read_png(p));
    ref = compose(panels, l);
  }

  PanelMask mask;
  mask.layout = l;
  for (const auto& m : split_list(mask_spec)) mask.masked.insert(marker_from_name(m));
  mask.validate(/*require_nonempty=*/true);

  PromptProgram prompt = prompt_from_json(read_text_file(prompt_path));
  TokenSeq text = tokenize(prompt, l, base.config.l_text);

  SamplerConfig cfg;
  cfg.steps = steps;
  cfg.guidance = guidance;
  cfg.seed = seed;
  InpaintSpec spec;
  spec.reference = ref;
  spec.mask = mask;
  spec.strength = strength;
  Canvas canvas = sdedit_inpaint(base, adapter ? &*adapter : nullptr, text, spec, cfg);

  GenerateResult result = write_generation(canvas, l, out_dir);
  write_text_atomic((fs::path(out_dir) / "prompt.json").string(), prompt_to_json(prompt) + "\n");

  RunManifest manifest;
  manifest.command = "inpaint";
  json cfg_json;
  cfg_json["layout"] = layout;
  cfg_json["mask"] = mask_spec;
  cfg_json["strength"] = double(strength);
  cfg_json["steps"] = steps;
  cfg_json["guidance"] = double(guidance);
  manifest.config_json = cfg_json.dump();
  manifest.seed = seed;
  manifest.inputs["base"] = base_ckpt;
  if (lora_ckpt) manifest.inputs["lora"] = *lora_ckpt;
  manifest.inputs["reference"] = reference;
  manifest.inputs["prompt"] = prompt_path;
  manifest.outputs["canvas"] = result.canvas_path;
  manifest.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  manifest.write((fs::path(out_dir) / "run_manifest.json").string());
  return result;
}

namespace {

// A generated set directory: panel_<MARKER>.png files plus optional
// prompt.json (needed by the effect metric).
struct EvalSet {
  std::string dir;
  PanelLayout layout;
  std::vector<Canvas> panels; // layout order
  std::optional<PromptProgram> prompt;
};

std::optional<EvalSet> read_eval_set(const fs::path& dir) {
  std::map<Marker, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("panel_", 0) == 0 && name.size() > 10 &&
        name.substr(name.size() - 4) == ".png") {
      const std::string marker = name.substr(6, name.size() - 10);
      files[marker_from_name(marker)] = entry.path().string();
    }
  }
  if (files.empty()) return std::nullopt;

  // Infer the grid from the marker set.
  PanelLayout layout;
  for (const char* grid : {"2x2", "1x2", "2x1", "1x1"}) {
    PanelLayout candidate = PanelLayout::make(grid);
    if (files.size() == candidate.markers.size() &&
        std::all_of(candidate.markers.begin(), candidate.markers.end(),
                    [&](Marker m) { return files.count(m) > 0; })) {
      layout = candidate;
      break;
    }
  }
  ICL_CHECK_IO(layout.panel_count() > 0, "cannot infer layout from panels in '"
                                             << dir.string() << "'");

  EvalSet set;
  set.dir = dir.string();
  for (Marker m : layout.markers) set.panels.push_back(read_png(files[m]));
  layout.panel_h = set.panels[0].height;
  layout.panel_w = set.panels[0].width;
  set.layout = layout;
  const fs::path prompt_path = dir / "prompt.json";
  if (fs::exists(prompt_path))
    set.prompt = prompt_from_json(read_text_file(prompt_path.string()));
  return set;
}

} // namespace

ConsistencyReport run_eval(const std::string& task, const std::string& dir,
                           const std::string& report_path) {
  ICL_CHECK_IO(fs::is_directory(dir), "'" << dir << "' is not a directory");
  TaskKind kind = task_from_name(task);

  std::vector<fs::path> set_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) set_dirs.push_back(entry.path());
  }
  std::sort(set_dirs.begin(), set_dirs.end());

  // Set-level pass thresholds (implementation constants, echoed in the report):
  // palette: max pairwise hue distance < 30 degrees; identity: all panels
  // classify to one signature; effect: rmse(transform(first), second) <= 0.1.
  constexpr real kHueThreshold = 30;
  constexpr real kIdentityThreshold = real(0.995);
  constexpr real kEffectRmse = real(0.1);

  ConsistencyReport report;
  report.task = task;
  switch (kind) {
    case TaskKind::Palette: report.threshold = kHueThreshold; break;
    case TaskKind::Identity: report.threshold = kIdentityThreshold; break;
    case TaskKind::Effect: report.threshold = kEffectRmse; break;
  }

  json sets_json = json::array();
  double mean_acc = 0;
  int passes = 0;
  for (const auto& sd : set_dirs) {
    auto set = read_eval_set(sd);
    if (!set) continue;
    json entry;
    entry["dir"] = sd.filename().string();
    real value = 0;
    bool pass = false;
    bool defined = true;
    try {
      switch (kind) {
        case TaskKind::Palette:
          value = hue_consistency(set->panels);
          pass = value < kHueThreshold;
          break;
        case TaskKind::Identity: {
          IdentityScore score = identity_rate(set->panels);
          value = score.rate;
          pass = score.rate >= kIdentityThreshold;
          if (score.low_confidence) {
            report.low_confidence = true;
            entry["low_confidence"] = true;
          }
          break;
        }
        case TaskKind::Effect: {
          ICL_CHECK(set->panels.size() == 2, "effect eval needs two panels");
          ICL_CHECK_IO(set->prompt.has_value(),
                       "effect eval needs prompt.json in '" << sd.string() << "'");
          auto it = set->prompt->overall.find(Attr::Effect);
          ICL_CHECK_IO(it != set->prompt->overall.end(),
                       "prompt in '" << sd.string() << "' carries no EFFECT attribute");
          value = effect_fidelity(set->panels[0], set->panels[1], it->second);
          pass = value <= kEffectRmse;
          break;
        }
      }
    } catch (const InvalidArgument& e) {
      // Undefined metric (e.g. a panel with no qualifying pixels): the set
      // fails and is flagged, never silently dropped.
      defined = false;
      value = std::numeric_limits<real>::quiet_NaN();
      pass = false;
      entry["undefined"] = e.what();
      ++report.undefined_sets;
    }
    entry["value"] = defined ? json(double(value)) : json();
    entry["pass"] = pass;
    sets_json.push_back(entry);
    report.per_set.push_back(value);
    report.per_set_pass.push_back(pass);
    if (defined) mean_acc += double(value);
    if (pass) ++passes;
  }
  report.count = int(report.per_set.size());
  ICL_CHECK_IO(report.count > 0, "no evaluable sets found in '" << dir << "'");
  const int defined_count = report.count - report.undefined_sets;
  report.aggregate_mean = defined_count > 0 ? real(mean_acc / defined_count) : real(0);
  report.pass_rate = real(passes) / real(report.count);

  json j;
  j["task"] = task;
  j["count"] = report.count;
  j["threshold"] = double(report.threshold);
  j["pass_rate"] = double(report.pass_rate);
  j["aggregate_mean"] = double(report.aggregate_mean);
  j["undefined_sets"] = report.undefined_sets;
  j["low_confidence"] = report.low_confidence;
  j["sets"] = sets_json;
  write_text_atomic(report_path, j.dump(2) + "\n");
  return report;
}

} // namespace icl
