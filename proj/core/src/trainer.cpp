#include "icl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "icl/sampler.hpp"

namespace icl {

using json = nlohmann::ordered_json;

namespace {

constexpr int kProbeCount = 64;
constexpr int64_t kTrendWindow = 1000;

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string train_config_json(const TrainConfig& c) {
  json j;
  j["phase"] = c.phase == TrainConfig::Phase::Base ? "base" : "lora";
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["lr"] = double(c.lr);
  j["weight_decay"] = double(c.weight_decay);
  j["seed"] = c.seed;
  j["grad_clip"] = double(c.grad_clip);
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["prompt_dropout"] = double(c.prompt_dropout);
  return j.dump();
}

// Mean fm_loss over a fixed probe stream: same fork, same draws, so the
// init/final comparison is noise-free.
real probe_loss(const ModelParams& params, const LoraAdapter* adapters, const Dataset& data,
                const Rng& probe_base, real prompt_dropout) {
  NoGradGuard ng;
  Rng rng = probe_base;
  double total = 0;
  for (int i = 0; i < kProbeCount; ++i) {
    const auto& rec = data.records[rng.uniform_index(data.records.size())];
    total += double(fm_loss(params, adapters, rec, rng, prompt_dropout).item());
  }
  return real(total / kProbeCount);
}

struct LogSink {
  std::ofstream file;
  Clock::time_point start = Clock::now();

  explicit LogSink(const std::string& path) {
    if (!path.empty()) {
      file.open(path, std::ios::trunc);
      ICL_CHECK_IO(file.good(), "cannot open training log '" << path << "'");
    }
  }
  void log(int64_t step, real loss, real lr) {
    json j;
    j["step"] = step;
    j["loss"] = double(loss);
    j["lr"] = double(lr);
    j["wall_ms"] = ms_since(start);
    if (file.is_open()) file << j.dump() << "\n" << std::flush;
    std::cerr << "[train] step " << step << " loss " << loss << "\n";
  }
};

bool moving_average_flag(const std::vector<real>& history) {
  if (int64_t(history.size()) < 2 * kTrendWindow) return false;
  double window_sum = 0;
  for (int64_t i = 0; i < kTrendWindow; ++i) window_sum += double(history[size_t(i)]);
  double prev = window_sum / double(kTrendWindow);
  int64_t rises = 0, total = 0;
  for (int64_t i = kTrendWindow; i < int64_t(history.size()); ++i) {
    window_sum += double(history[size_t(i)]) - double(history[size_t(i - kTrendWindow)]);
    const double ma = window_sum / double(kTrendWindow);
    if (ma > prev) ++rises;
    ++total;
    prev = ma;
  }
  return total > 0 && double(rises) / double(total) > 0.05;
}

struct RngSnapshot {
  uint64_t state;
  bool have_spare;
  double spare;

  static RngSnapshot of(const Rng& rng) { return {rng.state(), rng.have_spare(), rng.spare()}; }
  void apply(Rng& rng) const { rng.restore(state, have_spare, spare); }
  json to_json() const {
    json j;
    j["state"] = state;
    j["have_spare"] = have_spare;
    j["spare"] = spare;
    return j;
  }
  static RngSnapshot from_json(const json& j) {
    return {j.at("state").get<uint64_t>(), j.at("have_spare").get<bool>(),
            j.at("spare").get<double>()};
  }
};

} // namespace

TrainConfig TrainConfig::base_defaults() {
  TrainConfig c;
  c.phase = Phase::Base;
  c.steps = 20000;
  c.batch = 4;
  c.lr = real(1e-4);
  c.weight_decay = real(0.01);
  return c;
}

TrainConfig TrainConfig::lora_defaults() {
  TrainConfig c;
  c.phase = Phase::Lora;
  c.steps = 5000;
  c.batch = 4;
  c.lr = real(1e-3);
  c.weight_decay = real(0);
  return c;
}

void TrainConfig::validate() const {
  ICL_CHECK(steps >= 0, "steps must be >= 0");
  ICL_CHECK(batch >= 1, "batch must be >= 1");
  ICL_CHECK(lr > 0, "learning rate must be positive");
  ICL_CHECK(weight_decay >= 0, "weight decay must be >= 0");
  ICL_CHECK(grad_clip >= 0, "grad clip must be >= 0");
  ICL_CHECK(prompt_dropout >= 0 && prompt_dropout < 1, "prompt dropout must lie in [0, 1)");
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& trainable,
               OptimizerState& state, real lr, real weight_decay, real grad_clip) {
  // Global-norm clip before the moment update.
  double norm_sq = 0;
  for (const auto& [name, t] : trainable) {
    (void)name;
    if (!t.has_grad()) continue;
    for (real g : t.grad()) norm_sq += double(g) * double(g);
  }
  const double norm = std::sqrt(norm_sq);
  real clip_scale = real(1);
  if (grad_clip > 0 && norm > double(grad_clip)) clip_scale = real(double(grad_clip) / norm);

  state.step += 1;
  const real b1 = OptimizerState::kBeta1, b2 = OptimizerState::kBeta2;
  const real bc1 = real(1) - real(std::pow(double(b1), double(state.step)));
  const real bc2 = real(1) - real(std::pow(double(b2), double(state.step)));

  for (const auto& [name, t] : trainable) {
    Tensor tensor = t;
    const int64_t n = tensor.numel();
    auto& [m, v] = state.moments[name];
    if (m.empty()) {
      m.assign(size_t(n), real(0));
      v.assign(size_t(n), real(0));
    }
    ICL_CHECK(int64_t(m.size()) == n, "optimizer state shape drift for '" << name << "'");

    auto grads = tensor.grad_mut(); // zeros if backward never touched it
    auto vals = tensor.value_mut();
    for (int64_t i = 0; i < n; ++i) {
      const real g = grads[size_t(i)] * clip_scale;
      m[size_t(i)] = b1 * m[size_t(i)] + (real(1) - b1) * g;
      v[size_t(i)] = b2 * v[size_t(i)] + (real(1) - b2) * g * g;
      const real mhat = m[size_t(i)] / bc1;
      const real vhat = v[size_t(i)] / bc2;
      real p = vals[size_t(i)];
      p -= lr * weight_decay * p; // decoupled decay
      p -= lr * mhat / (std::sqrt(vhat) + OptimizerState::kEps);
      vals[size_t(i)] = p;
    }
  }
}

namespace {

// Core loop shared by both phases. `trainable` are the updated tensors;
// params/adapters feed fm_loss. Returns the loss history.
struct LoopArgs {
  const TrainConfig* cfg;
  const Dataset* data;
  const ModelParams* params;
  const LoraAdapter* adapters; // null in base phase
  std::vector<std::pair<std::string, Tensor>> trainable;
  std::string out_ckpt;
  std::string log_path;
  // State-checkpoint payload writer (phase-specific config echo).
  std::function<void(const std::string& path, int64_t step, const RngSnapshot& rng,
                     const OptimizerState& state)>
      save_state;
};

std::vector<real> run_loop(LoopArgs& args, Rng& train_rng, OptimizerState& opt, int64_t start_step) {
  const TrainConfig& cfg = *args.cfg;
  LogSink sink(args.log_path);
  std::vector<real> history;
  history.reserve(size_t(cfg.steps));

  for (int64_t step = start_step; step < cfg.steps; ++step) {
    for (auto& [name, t] : args.trainable) {
      (void)name;
      t.zero_grad();
    }
    real batch_loss = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& rec = args.data->records[train_rng.uniform_index(args.data->records.size())];
      Tensor loss = fm_loss(*args.params, args.adapters, rec, train_rng, cfg.prompt_dropout);
      const real value = loss.item();
      if (!std::isfinite(value)) {
        throw RuntimeError("non-finite loss " + std::to_string(double(value)) + " at step " +
                           std::to_string(step) + " (batch element " + std::to_string(b) + ")");
      }
      backward(scale(loss, real(1) / real(cfg.batch)));
      batch_loss += value / real(cfg.batch);
    }
    adam_step(args.trainable, opt, cfg.lr, cfg.weight_decay, cfg.grad_clip);
    history.push_back(batch_loss);

    const int64_t done = step + 1;
    if (cfg.log_every > 0 && (done % cfg.log_every == 0 || done == cfg.steps))
      sink.log(done, batch_loss, cfg.lr);
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.steps) {
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), ".step%06lld", (long long)done);
      args.save_state(args.out_ckpt + suffix, done, RngSnapshot::of(train_rng), opt);
    }
  }
  return history;
}

void save_opt_tensors(std::vector<std::pair<std::string, Tensor>>& out,
                      const std::vector<std::pair<std::string, Tensor>>& trainable,
                      const OptimizerState& opt) {
  for (const auto& [name, t] : trainable) out.emplace_back(name, t);
  for (const auto& [name, mv] : opt.moments) {
    out.emplace_back("opt.m." + name,
                     Tensor::from_data({int64_t(mv.first.size())},
                                       std::vector<real>(mv.first.begin(), mv.first.end())));
    out.emplace_back("opt.v." + name,
                     Tensor::from_data({int64_t(mv.second.size())},
                                       std::vector<real>(mv.second.begin(), mv.second.end())));
  }
}

void restore_opt_state(OptimizerState& opt, const Checkpoint& ckpt,
                       const std::vector<std::pair<std::string, Tensor>>& trainable) {
  for (const auto& [name, t] : trainable) {
    auto m = ckpt.tensors.find("opt.m." + name);
    auto v = ckpt.tensors.find("opt.v." + name);
    ICL_CHECK_IO(m != ckpt.tensors.end() && v != ckpt.tensors.end(),
                 "train-state checkpoint lacks optimizer moments for '" << name << "'");
    auto mv = m->second.value();
    auto vv = v->second.value();
    ICL_CHECK_IO(int64_t(mv.size()) == t.numel(), "optimizer moment shape drift for '" << name
                                                                                       << "'");
    opt.moments[name] = {std::vector<real>(mv.begin(), mv.end()),
                         std::vector<real>(vv.begin(), vv.end())};
  }
}

} // namespace

TrainResult train_base(const TrainConfig& cfg, const ModelConfig& mcfg, const Dataset& data,
                       const std::string& out_ckpt, const std::string& log_path) {
  cfg.validate();
  ICL_CHECK(cfg.phase == TrainConfig::Phase::Base, "train_base called with a lora config");
  ICL_CHECK(!data.records.empty(), "empty dataset");

  Rng master(cfg.seed);
  Rng init_rng = master.fork(0);
  Rng train_rng = master.fork(1);
  Rng probe_rng = master.fork(2);

  ModelParams params = init_params(mcfg, init_rng);
  OptimizerState opt;
  int64_t start_step = 0;

  if (!cfg.resume.empty()) {
    Checkpoint ckpt = load_checkpoint(cfg.resume);
    ICL_CHECK_IO(ckpt.kind == "train_state", "'" << cfg.resume << "' is not a train-state checkpoint");
    json meta = json::parse(ckpt.config_json);
    ICL_CHECK_IO(meta.value("phase", "") == "base", "resume checkpoint is not a base-phase state");
    for (auto& [name, t] : params.tensors) {
      auto it = ckpt.tensors.find(name);
      ICL_CHECK_IO(it != ckpt.tensors.end(), "resume checkpoint lacks parameter '" << name << "'");
      ICL_CHECK_IO(it->second.shape() == t.shape(), "resume shape drift for '" << name << "'");
      t = it->second;
    }
    start_step = meta.at("step").get<int64_t>();
    opt.step = start_step;
    RngSnapshot::from_json(meta.at("rng")).apply(train_rng);
    std::vector<std::pair<std::string, Tensor>> trainable(params.tensors.begin(),
                                                          params.tensors.end());
    restore_opt_state(opt, ckpt, trainable);
  }

  params.set_requires_grad(true);

  LoopArgs args;
  args.cfg = &cfg;
  args.data = &data;
  args.params = &params;
  args.adapters = nullptr;
  args.trainable.assign(params.tensors.begin(), params.tensors.end());
  args.out_ckpt = out_ckpt;
  args.log_path = log_path;
  const std::string model_cfg_json = model_config_json(mcfg);
  args.save_state = [&](const std::string& path, int64_t step, const RngSnapshot& rng,
                        const OptimizerState& state) {
    json meta;
    meta["phase"] = "base";
    meta["step"] = step;
    meta["rng"] = rng.to_json();
    meta["model"] = json::parse(model_cfg_json);
    meta["train"] = json::parse(train_config_json(cfg));
    std::vector<std::pair<std::string, Tensor>> tensors;
    save_opt_tensors(tensors, args.trainable, state);
    save_checkpoint(path, "train_state", meta.dump(), tensors);
  };

  TrainResult result;
  result.probe_loss_init = probe_loss(params, nullptr, data, probe_rng, cfg.prompt_dropout);
  result.loss_history = run_loop(args, train_rng, opt, start_step);
  result.probe_loss_final = probe_loss(params, nullptr, data, probe_rng, cfg.prompt_dropout);
  result.loss_trend_flag = moving_average_flag(result.loss_history);
  if (result.loss_trend_flag)
    std::cerr << "[train] warning: loss moving average rose on >5% of steps\n";
  result.steps_run = cfg.steps - start_step;
  result.checkpoint_path = out_ckpt;

  params.set_requires_grad(false);
  save_model(out_ckpt, params);
  return result;
}

TrainResult train_lora(const TrainConfig& cfg, const LoraConfig& lcfg, ModelParams& base,
                       const Dataset& data, const std::string& out_ckpt,
                       const std::string& log_path) {
  cfg.validate();
  ICL_CHECK(cfg.phase == TrainConfig::Phase::Lora, "train_lora called with a base config");
  const size_t n = data.records.size();
  ICL_CHECK(n >= 1 && n <= 1000, "lora dataset size " << n << " outside [1, 1000]");
  if (n < 20 || n > 100)
    std::cerr << "[train] warning: " << n << " tuning sets is outside the intended 20-100 range\n";

  Rng master(cfg.seed);
  Rng init_rng = master.fork(0);
  Rng train_rng = master.fork(1);
  Rng probe_rng = master.fork(2);

  base.set_requires_grad(false); // freeze: adapters train, the base never moves
  LoraAdapter adapter = init_adapter(lcfg, base, init_rng);
  OptimizerState opt;
  int64_t start_step = 0;

  auto adapter_tensors = [&adapter]() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, ab] : adapter.matrices) {
      out.emplace_back("lora." + name + ".A", ab.first);
      out.emplace_back("lora." + name + ".B", ab.second);
    }
    return out;
  };

  if (!cfg.resume.empty()) {
    Checkpoint ckpt = load_checkpoint(cfg.resume);
    ICL_CHECK_IO(ckpt.kind == "train_state", "'" << cfg.resume << "' is not a train-state checkpoint");
    json meta = json::parse(ckpt.config_json);
    ICL_CHECK_IO(meta.value("phase", "") == "lora", "resume checkpoint is not a lora-phase state");
    for (auto& [name, ab] : adapter.matrices) {
      auto a = ckpt.tensors.find("lora." + name + ".A");
      auto b = ckpt.tensors.find("lora." + name + ".B");
      ICL_CHECK_IO(a != ckpt.tensors.end() && b != ckpt.tensors.end(),
                   "resume checkpoint lacks adapter '" << name << "'");
      ab.first = a->second;
      ab.second = b->second;
    }
    start_step = meta.at("step").get<int64_t>();
    opt.step = start_step;
    RngSnapshot::from_json(meta.at("rng")).apply(train_rng);
    restore_opt_state(opt, ckpt, adapter_tensors());
  }

  adapter.set_requires_grad(true);

  LoopArgs args;
  args.cfg = &cfg;
  args.data = &data;
  args.params = &base;
  args.adapters = &adapter;
  args.trainable = adapter_tensors();
  args.out_ckpt = out_ckpt;
  args.log_path = log_path;
  args.save_state = [&](const std::string& path, int64_t step, const RngSnapshot& rng,
                        const OptimizerState& state) {
    json meta;
    meta["phase"] = "lora";
    meta["step"] = step;
    meta["rng"] = rng.to_json();
    meta["lora"] = json::parse(lora_config_json(adapter.config));
    meta["base_model"] = json::parse(model_config_json(base.config));
    meta["train"] = json::parse(train_config_json(cfg));
    std::vector<std::pair<std::string, Tensor>> tensors;
    save_opt_tensors(tensors, args.trainable, state);
    save_checkpoint(path, "train_state", meta.dump(), tensors);
  };

  TrainResult result;
  result.probe_loss_init = probe_loss(base, &adapter, data, probe_rng, cfg.prompt_dropout);
  result.loss_history = run_loop(args, train_rng, opt, start_step);
  result.probe_loss_final = probe_loss(base, &adapter, data, probe_rng, cfg.prompt_dropout);
  result.loss_trend_flag = moving_average_flag(result.loss_history);
  result.steps_run = cfg.steps - start_step;
  result.checkpoint_path = out_ckpt;

  adapter.set_requires_grad(false);
  save_lora(out_ckpt, adapter, base.config);
  return result;
}

} // namespace icl
