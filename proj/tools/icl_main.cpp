// icl: dataset generation, base/LoRA training, sampling, inpainting, and
// consistency evaluation for the panel-set diffusion toy.
//
// Exit codes: 0 success, 1 runtime failure (I/O, bad files, numerics),
// 2 usage error (bad flags or values). Logs go to stderr; machine-readable
// output goes to files only.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "icl/checkpoint.hpp"
#include "icl/pipeline.hpp"

namespace {

using json = nlohmann::json;

// --config file (JSON) sits between built-in defaults and explicit flags:
// flags > config file > defaults.
struct TrainFlags {
  std::string config_path;
  std::string data_dir;
  std::string base_ckpt;
  std::string out_path;
  int64_t steps = -1;
  int batch = -1;
  double lr = -1;
  int rank = -1;
  double alpha = -1;
  int64_t seed = -1;
  int64_t checkpoint_every = -1;
  std::string resume;
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is.good()) throw icl::RuntimeError("cannot open config file '" + path + "'");
  json j;
  is >> j;
  return j;
}

icl::TrainConfig resolve_train_config(const TrainFlags& flags, bool lora) {
  icl::TrainConfig cfg =
      lora ? icl::TrainConfig::lora_defaults() : icl::TrainConfig::base_defaults();
  json file = load_config_file(flags.config_path);
  if (file.contains("train")) {
    const json& t = file["train"];
    cfg.steps = t.value("steps", cfg.steps);
    cfg.batch = t.value("batch", cfg.batch);
    cfg.lr = icl::real(t.value("lr", double(cfg.lr)));
    cfg.weight_decay = icl::real(t.value("weight_decay", double(cfg.weight_decay)));
    cfg.seed = t.value("seed", cfg.seed);
    cfg.grad_clip = icl::real(t.value("grad_clip", double(cfg.grad_clip)));
    cfg.checkpoint_every = t.value("checkpoint_every", cfg.checkpoint_every);
    cfg.log_every = t.value("log_every", cfg.log_every);
    cfg.prompt_dropout = icl::real(t.value("prompt_dropout", double(cfg.prompt_dropout)));
  }
  if (flags.steps >= 0) cfg.steps = flags.steps;
  if (flags.batch >= 0) cfg.batch = flags.batch;
  if (flags.lr >= 0) cfg.lr = icl::real(flags.lr);
  if (flags.seed >= 0) cfg.seed = uint64_t(flags.seed);
  if (flags.checkpoint_every >= 0) cfg.checkpoint_every = flags.checkpoint_every;
  cfg.resume = flags.resume;
  return cfg;
}

icl::ModelConfig resolve_model_config(const TrainFlags& flags) {
  icl::ModelConfig cfg;
  json file = load_config_file(flags.config_path);
  if (file.contains("model")) cfg = icl::model_config_from_json(file["model"].dump());
  return cfg;
}

icl::LoraConfig resolve_lora_config(const TrainFlags& flags) {
  icl::LoraConfig cfg;
  json file = load_config_file(flags.config_path);
  if (file.contains("lora")) cfg = icl::lora_config_from_json(file["lora"].dump());
  if (flags.rank >= 1) cfg.rank = flags.rank;
  if (flags.alpha >= 0) cfg.alpha = icl::real(flags.alpha);
  if (cfg.alpha <= 0) cfg.alpha = icl::real(cfg.rank); // alpha = r keeps scale 1
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"panel-set diffusion toy: in-context LoRA pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gd_task = "palette", gd_layout = "2x2", gd_out;
  int gd_sets = 64;
  int64_t gd_seed = 0;
  gen->add_option("--task", gd_task, "palette | identity | effect | mixed");
  gen->add_option("--layout", gd_layout, "2x2 | 1x2 | 2x1 | 1x1");
  gen->add_option("--sets", gd_sets, "number of image sets");
  gen->add_option("--seed", gd_seed, "rng seed");
  gen->add_option("--out", gd_out, "output directory")->required();

  // train-base / train-lora
  TrainFlags tb, tl;
  auto* train_base_cmd = app.add_subcommand("train-base", "pretrain the base model");
  train_base_cmd->add_option("--config", tb.config_path, "JSON config file");
  train_base_cmd->add_option("--data", tb.data_dir, "dataset directory")->required();
  train_base_cmd->add_option("--steps", tb.steps, "optimization steps (default 20000)");
  train_base_cmd->add_option("--batch", tb.batch, "batch size (default 4)");
  train_base_cmd->add_option("--lr", tb.lr, "learning rate (default 1e-4)");
  train_base_cmd->add_option("--seed", tb.seed, "rng seed");
  train_base_cmd->add_option("--checkpoint-every", tb.checkpoint_every,
                             "periodic train-state checkpoints");
  train_base_cmd->add_option("--resume", tb.resume, "train-state checkpoint to resume");
  train_base_cmd->add_option("--out", tb.out_path, "output checkpoint path")->required();

  auto* train_lora_cmd = app.add_subcommand("train-lora", "tune a LoRA adapter");
  train_lora_cmd->add_option("--config", tl.config_path, "JSON config file");
  train_lora_cmd->add_option("--data", tl.data_dir, "dataset directory (20-100 sets)")->required();
  train_lora_cmd->add_option("--base", tl.base_ckpt, "base model checkpoint")->required();
  train_lora_cmd->add_option("--rank", tl.rank, "LoRA rank (default 16)");
  train_lora_cmd->add_option("--alpha", tl.alpha, "LoRA alpha (default = rank)");
  train_lora_cmd->add_option("--steps", tl.steps, "optimization steps (default 5000)");
  train_lora_cmd->add_option("--batch", tl.batch, "batch size (default 4)");
  train_lora_cmd->add_option("--lr", tl.lr, "learning rate (default 1e-3)");
  train_lora_cmd->add_option("--seed", tl.seed, "rng seed");
  train_lora_cmd->add_option("--checkpoint-every", tl.checkpoint_every,
                             "periodic train-state checkpoints");
  train_lora_cmd->add_option("--resume", tl.resume, "train-state checkpoint to resume");
  train_lora_cmd->add_option("--out", tl.out_path, "output adapter path")->required();

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "sample an image set from a prompt");
  std::string g_base, g_lora, g_prompt, g_layout = "2x2", g_out;
  int64_t g_seed = 0;
  int g_steps = 20;
  double g_guidance = 3.5;
  gen_cmd->add_option("--base", g_base, "base model checkpoint")->required();
  gen_cmd->add_option("--lora", g_lora, "adapter checkpoint (optional)");
  gen_cmd->add_option("--prompt", g_prompt, "prompt JSON file")->required();
  gen_cmd->add_option("--layout", g_layout, "2x2 | 1x2 | 2x1 | 1x1");
  gen_cmd->add_option("--seed", g_seed, "rng seed");
  gen_cmd->add_option("--steps", g_steps, "sampling steps (default 20)");
  gen_cmd->add_option("--guidance", g_guidance, "guidance scale (default 3.5)");
  gen_cmd->add_option("--out", g_out, "output directory")->required();

  // inpaint
  auto* inp_cmd = app.add_subcommand("inpaint", "regenerate masked panels from a reference");
  std::string i_base, i_lora, i_ref, i_mask, i_prompt, i_layout = "2x2", i_out;
  double i_strength = 1.0, i_guidance = 3.5;
  int64_t i_seed = 0;
  int i_steps = 20;
  inp_cmd->add_option("--base", i_base, "base model checkpoint")->required();
  inp_cmd->add_option("--lora", i_lora, "adapter checkpoint (optional)");
  inp_cmd->add_option("--reference", i_ref, "canvas PNG or comma-separated panel PNGs")
      ->required();
  inp_cmd->add_option("--mask", i_mask, "panels to generate, e.g. \"TL,TR\"")->required();
  inp_cmd->add_option("--strength", i_strength, "SDEdit noising strength t0 (default 1.0)");
  inp_cmd->add_option("--prompt", i_prompt, "prompt JSON file")->required();
  inp_cmd->add_option("--layout", i_layout, "2x2 | 1x2 | 2x1 | 1x1");
  inp_cmd->add_option("--seed", i_seed, "rng seed");
  inp_cmd->add_option("--steps", i_steps, "sampling steps (default 20)");
  inp_cmd->add_option("--guidance", i_guidance, "guidance scale (default 3.5)");
  inp_cmd->add_option("--out", i_out, "output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score generated sets with the task metric");
  std::string e_task, e_dir, e_report;
  eval_cmd->add_option("--task", e_task, "palette | identity | effect")->required();
  eval_cmd->add_option("--dir", e_dir, "directory of generated set subdirectories")->required();
  eval_cmd->add_option("--report", e_report, "output report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      auto result = icl::run_gen_data(gd_task, gd_layout, gd_sets, uint64_t(gd_seed), gd_out);
      std::cerr << "wrote " << result.sets << " sets (" << result.panel_files << " panels) to "
                << gd_out << "\n";
    } else if (*train_base_cmd) {
      auto cfg = resolve_train_config(tb, false);
      auto result = icl::run_train_base(cfg, resolve_model_config(tb), tb.data_dir, tb.out_path);
      std::cerr << "checkpoint " << result.checkpoint_path << " (probe loss "
                << result.probe_loss_init << " -> " << result.probe_loss_final << ")\n";
    } else if (*train_lora_cmd) {
      auto cfg = resolve_train_config(tl, true);
      auto result = icl::run_train_lora(cfg, resolve_lora_config(tl), tl.base_ckpt, tl.data_dir,
                                        tl.out_path);
      std::cerr << "adapter " << result.checkpoint_path << " (probe loss "
                << result.probe_loss_init << " -> " << result.probe_loss_final << ")\n";
    } else if (*gen_cmd) {
      std::optional<std::string> lora;
      if (!g_lora.empty()) lora = g_lora;
      auto result = icl::run_generate(g_base, lora, g_prompt, g_layout, uint64_t(g_seed), g_steps,
                                      icl::real(g_guidance), g_out);
      std::cerr << "wrote " << result.canvas_path << " and " << result.panel_paths.size()
                << " panels\n";
    } else if (*inp_cmd) {
      std::optional<std::string> lora;
      if (!i_lora.empty()) lora = i_lora;
      auto result =
          icl::run_inpaint(i_base, lora, i_ref, i_mask, icl::real(i_strength), i_prompt, i_layout,
                           uint64_t(i_seed), i_steps, icl::real(i_guidance), i_out);
      std::cerr << "wrote " << result.canvas_path << " and " << result.panel_paths.size()
                << " panels\n";
    } else if (*eval_cmd) {
      auto report = icl::run_eval(e_task, e_dir, e_report);
      std::cerr << "eval " << e_task << ": pass rate " << report.pass_rate << " over "
                << report.count << " sets -> " << e_report << "\n";
    }
  } catch (const icl::InvalidArgument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
