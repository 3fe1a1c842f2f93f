#include "icl/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace icl {

using json = nlohmann::ordered_json;

namespace {

void write_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

} // namespace

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  json header;
  header["version"] = kCheckpointVersion;
  header["kind"] = kind;
  header["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  json manifest = json::array();
  uint64_t offset = 0;
  {
    std::map<std::string, bool> seen;
    for (const auto& [name, t] : tensors) {
      ICL_CHECK(!seen.count(name), "save_checkpoint: duplicate tensor name '" << name << "'");
      seen[name] = true;
      json entry;
      entry["name"] = name;
      entry["shape"] = t.shape();
      entry["dtype"] = "f32";
      entry["offset"] = offset;
      manifest.push_back(entry);
      offset += uint64_t(t.numel()) * 4;
    }
  }
  header["tensors"] = manifest;
  const std::string header_text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    ICL_CHECK_IO(os.good(), "cannot open '" << tmp << "' for writing");
    os.write(kCheckpointMagic, 5);
    write_u32_le(os, uint32_t(header_text.size()));
    os.write(header_text.data(), std::streamsize(header_text.size()));
    std::vector<float> buffer;
    for (const auto& [name, t] : tensors) {
      (void)name;
      buffer.resize(size_t(t.numel()));
      auto vals = t.value();
      for (int64_t i = 0; i < t.numel(); ++i) buffer[size_t(i)] = float(vals[size_t(i)]);
      // Little-endian floats; this code targets little-endian hosts.
      os.write(reinterpret_cast<const char*>(buffer.data()),
               std::streamsize(buffer.size() * sizeof(float)));
    }
    ICL_CHECK_IO(os.good(), "write failed for '" << tmp << "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  ICL_CHECK_IO(!ec, "rename '" << tmp << "' -> '" << path << "' failed: " << ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ICL_CHECK_IO(is.good(), "cannot open checkpoint '" << path << "'");
  char magic[5];
  is.read(magic, 5);
  ICL_CHECK_IO(is.gcount() == 5 && std::memcmp(magic, kCheckpointMagic, 5) == 0,
               "'" << path << "' is not a checkpoint (bad magic)");
  const uint32_t header_len = read_u32_le(is);
  ICL_CHECK_IO(is.good(), "truncated checkpoint header in '" << path << "'");
  std::string header_text(header_len, '\0');
  is.read(header_text.data(), header_len);
  ICL_CHECK_IO(is.gcount() == std::streamsize(header_len),
               "truncated checkpoint header in '" << path << "'");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    throw RuntimeError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  ICL_CHECK_IO(header.value("version", -1) == kCheckpointVersion,
               "checkpoint version mismatch in '" << path << "' (got "
                                                  << header.value("version", -1) << ", want "
                                                  << kCheckpointVersion << ")");
  Checkpoint ckpt;
  ckpt.kind = header.value("kind", "");
  ckpt.config_json = header["config"].dump();

  uint64_t expected_offset = 0;
  struct Entry {
    std::string name;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Entry> entries;
  for (const auto& e : header["tensors"]) {
    Entry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<Shape>();
    entry.offset = e.at("offset").get<uint64_t>();
    ICL_CHECK_IO(e.at("dtype").get<std::string>() == "f32",
                 "unsupported dtype for tensor '" << entry.name << "'");
    ICL_CHECK_IO(entry.offset == expected_offset,
                 "manifest offsets not contiguous at tensor '" << entry.name << "'");
    expected_offset += uint64_t(shape_numel(entry.shape)) * 4;
    ICL_CHECK_IO(!ckpt.tensors.count(entry.name),
                 "duplicate tensor '" << entry.name << "' in checkpoint");
    ckpt.tensors[entry.name] = Tensor(); // placeholder, filled below
    entries.push_back(std::move(entry));
  }

  for (const auto& entry : entries) {
    const int64_t count = shape_numel(entry.shape);
    std::vector<float> buffer(size_t(count), 0.f);
    is.read(reinterpret_cast<char*>(buffer.data()), std::streamsize(buffer.size() * 4));
    ICL_CHECK_IO(is.gcount() == std::streamsize(buffer.size() * 4),
                 "truncated payload at tensor '" << entry.name << "' in '" << path << "'");
    std::vector<real> vals(size_t(count), real(0));
    for (int64_t i = 0; i < count; ++i) vals[size_t(i)] = real(buffer[size_t(i)]);
    ckpt.tensors[entry.name] = Tensor::from_data(entry.shape, std::move(vals));
    ckpt.order.push_back(entry.name);
  }
  // Trailing junk would make the container ambiguous.
  char extra;
  is.read(&extra, 1);
  ICL_CHECK_IO(is.gcount() == 0, "checkpoint '" << path << "' has bytes past the payload");
  return ckpt;
}

// ---- config JSON ------------------------------------------------------------

std::string model_config_json(const ModelConfig& c) {
  json j;
  j["patch"] = c.patch;
  j["d_model"] = c.d_model;
  j["heads"] = c.heads;
  j["blocks"] = c.blocks;
  j["l_text"] = c.l_text;
  j["mlp_ratio"] = c.mlp_ratio;
  j["vocab_size"] = c.resolved_vocab();
  j["max_patch_rows"] = c.max_patch_rows;
  j["max_patch_cols"] = c.max_patch_cols;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  ModelConfig c;
  c.patch = j.value("patch", c.patch);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.blocks = j.value("blocks", c.blocks);
  c.l_text = j.value("l_text", c.l_text);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.vocab_size = j.value("vocab_size", 0);
  c.max_patch_rows = j.value("max_patch_rows", c.max_patch_rows);
  c.max_patch_cols = j.value("max_patch_cols", c.max_patch_cols);
  c.validate();
  return c;
}

std::string lora_config_json(const LoraConfig& c) {
  json j;
  j["rank"] = c.rank;
  j["alpha"] = double(c.alpha);
  j["targets"] = c.targets;
  return j.dump();
}

LoraConfig lora_config_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  LoraConfig c;
  c.rank = j.value("rank", c.rank);
  c.alpha = real(j.value("alpha", double(c.alpha)));
  if (j.contains("targets"))
    c.targets = std::set<std::string>(j["targets"].begin(), j["targets"].end());
  return c;
}

// ---- model / adapter conveniences ------------------------------------------

void save_model(const std::string& path, const ModelParams& params) {
  json cfg = json::parse(model_config_json(params.config));
  cfg["lora_merged"] = params.lora_merged;
  std::vector<std::pair<std::string, Tensor>> tensors(params.tensors.begin(),
                                                      params.tensors.end());
  save_checkpoint(path, "model", cfg.dump(), tensors);
}

ModelParams load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  ICL_CHECK_IO(ckpt.kind == "model", "'" << path << "' holds a '" << ckpt.kind
                                         << "' checkpoint, expected 'model'");
  ModelParams params;
  params.config = model_config_from_json(ckpt.config_json);
  params.lora_merged = json::parse(ckpt.config_json).value("lora_merged", false);
  params.tensors = std::move(ckpt.tensors);
  return params;
}

void save_lora(const std::string& path, const LoraAdapter& adapter, const ModelConfig& base) {
  json cfg;
  cfg["lora"] = json::parse(lora_config_json(adapter.config));
  cfg["base_model"] = json::parse(model_config_json(base));
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [name, ab] : adapter.matrices) {
    tensors.emplace_back("lora." + name + ".A", ab.first);
    tensors.emplace_back("lora." + name + ".B", ab.second);
  }
  save_checkpoint(path, "lora", cfg.dump(), tensors);
}

LoraAdapter load_lora(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  ICL_CHECK_IO(ckpt.kind == "lora", "'" << path << "' holds a '" << ckpt.kind
                                        << "' checkpoint, expected 'lora'");
  json cfg = json::parse(ckpt.config_json);
  LoraAdapter adapter;
  adapter.config = lora_config_from_json(cfg.at("lora").dump());
  for (const auto& target : adapter.config.targets) {
    auto a = ckpt.tensors.find("lora." + target + ".A");
    auto b = ckpt.tensors.find("lora." + target + ".B");
    ICL_CHECK_IO(a != ckpt.tensors.end() && b != ckpt.tensors.end(),
                 "adapter checkpoint missing tensors for target '" << target << "'");
    adapter.matrices[target] = {a->second, b->second};
  }
  return adapter;
}

ModelConfig lora_base_config(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  json cfg = json::parse(ckpt.config_json);
  ICL_CHECK_IO(cfg.contains("base_model"), "adapter checkpoint lacks a base_model echo");
  return model_config_from_json(cfg["base_model"].dump());
}

} // namespace icl
