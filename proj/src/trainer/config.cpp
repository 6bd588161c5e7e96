#include "mmfuse/trainer/config.hpp"

#include <cmath>

namespace mmfuse::trainer {

using fusion::ConfigError;
using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (accumulation_every == 0) throw ConfigError("accumulation_every must be >= 1");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
}

void RunConfig::validate() const {
  fusion.validate();
  train.validate();
  if (heads.mlp_hidden == 0) throw ConfigError("mlp_hidden must be >= 1");
  if (uses_decoder()) {
    if (heads.decoder.layers == 0) throw ConfigError("decoder_layers must be >= 1");
    if (heads.decoder.heads == 0 || fusion.hidden_dim % heads.decoder.heads != 0) {
      throw ConfigError("decoder_heads must divide hidden_dim");
    }
  }
}

namespace {

const char* yes_no(bool b) { return b ? "Yes" : "No"; }

bool read_yes_no(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "Yes") return true;
    if (s == "No") return false;
  }
  throw ConfigError(key + ": expected \"Yes\" or \"No\", got " + v.dump());
}

std::size_t read_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(key + ": expected a non-negative integer, got " + v.dump());
  }
  return v.get<std::size_t>();
}

double read_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key + ": expected a number, got " + v.dump());
  return v.get<double>();
}

std::string read_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key + ": expected a string, got " + v.dump());
  return v.get<std::string>();
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& f = c.fusion;
  json backbones = json::array();
  if (f.use_image_patch) backbones.push_back("IMAGE_PATCH");
  if (f.use_object) backbones.push_back("OBJECT");
  return json{
      {"encoder_variant", std::string(fusion::to_string(f.variant))},
      {"pooling", std::string(fusion::to_string(f.pooling))},
      {"proj_align", yes_no(c.losses.align)},
      {"contrastive", yes_no(c.losses.contrastive)},
      {"multi_task", yes_no(c.multi_task)},
      {"backbones", backbones},
      {"hidden_dim", f.hidden_dim},
      {"shared_layers", f.shared.layers},
      {"shared_heads", f.shared.heads},
      {"image_patch_layers", f.image_patch.layers},
      {"image_patch_heads", f.image_patch.heads},
      {"object_layers", f.object.layers},
      {"object_heads", f.object.heads},
      {"text_layers", f.text.layers},
      {"text_heads", f.text.heads},
      {"ff_multiplier", f.ff_multiplier},
      {"dropout", f.dropout},
      {"decoder_layers", c.heads.decoder.layers},
      {"decoder_heads", c.heads.decoder.heads},
      {"mlp_hidden", c.heads.mlp_hidden},
      {"batch_size", c.train.batch_size},
      {"epochs", c.train.epochs},
      {"lr", c.train.lr},
      {"accumulation_every", c.train.accumulation_every},
      {"weight_decay", c.train.weight_decay},
      {"clip_norm", c.train.clip_norm},
      {"momentum", c.train.momentum},
      {"eps", c.train.eps},
      {"seed", c.train.seed},
  };
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  auto& f = c.fusion;
  for (const auto& [key, v] : j.items()) {
    if (key == "encoder_variant") {
      f.variant = fusion::encoder_variant_from_string(read_string(v, key));
    } else if (key == "pooling") {
      f.pooling = fusion::pooling_from_string(read_string(v, key));
    } else if (key == "proj_align") {
      c.losses.align = read_yes_no(v, key);
    } else if (key == "contrastive") {
      c.losses.contrastive = read_yes_no(v, key);
    } else if (key == "multi_task") {
      c.multi_task = read_yes_no(v, key);
    } else if (key == "backbones") {
      if (!v.is_array()) throw ConfigError("backbones: expected an array");
      f.use_image_patch = f.use_object = false;
      for (const auto& b : v) {
        const std::string name = read_string(b, key);
        if (name == "IMAGE_PATCH") f.use_image_patch = true;
        else if (name == "OBJECT") f.use_object = true;
        else throw ConfigError("backbones: unknown backbone '" + name + "'");
      }
      if (!f.use_image_patch && !f.use_object) {
        throw ConfigError("backbones: need IMAGE_PATCH, OBJECT or both");
      }
    } else if (key == "hidden_dim") {
      f.hidden_dim = read_count(v, key);
    } else if (key == "shared_layers") {
      f.shared.layers = read_count(v, key);
    } else if (key == "shared_heads") {
      f.shared.heads = read_count(v, key);
    } else if (key == "image_patch_layers") {
      f.image_patch.layers = read_count(v, key);
    } else if (key == "image_patch_heads") {
      f.image_patch.heads = read_count(v, key);
    } else if (key == "object_layers") {
      f.object.layers = read_count(v, key);
    } else if (key == "object_heads") {
      f.object.heads = read_count(v, key);
    } else if (key == "text_layers") {
      f.text.layers = read_count(v, key);
    } else if (key == "text_heads") {
      f.text.heads = read_count(v, key);
    } else if (key == "ff_multiplier") {
      f.ff_multiplier = read_count(v, key);
    } else if (key == "dropout") {
      f.dropout = read_number(v, key);
    } else if (key == "decoder_layers") {
      c.heads.decoder.layers = read_count(v, key);
    } else if (key == "decoder_heads") {
      c.heads.decoder.heads = read_count(v, key);
    } else if (key == "mlp_hidden") {
      c.heads.mlp_hidden = read_count(v, key);
    } else if (key == "batch_size") {
      c.train.batch_size = read_count(v, key);
    } else if (key == "epochs") {
      c.train.epochs = read_count(v, key);
    } else if (key == "lr") {
      c.train.lr = read_number(v, key);
    } else if (key == "accumulation_every") {
      c.train.accumulation_every = read_count(v, key);
    } else if (key == "weight_decay") {
      c.train.weight_decay = read_number(v, key);
    } else if (key == "clip_norm") {
      c.train.clip_norm = read_number(v, key);
    } else if (key == "momentum") {
      c.train.momentum = read_number(v, key);
    } else if (key == "eps") {
      c.train.eps = read_number(v, key);
    } else if (key == "seed") {
      c.train.seed = read_count(v, key);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace mmfuse::trainer
