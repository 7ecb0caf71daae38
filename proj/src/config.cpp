#include "deca/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "deca/error.hpp"

namespace deca {

using nlohmann::json;

namespace {

template <typename V>
void read(const json& doc, const char* key, V& out) {
  const auto it = doc.find(key);
  if (it == doc.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& doc, const std::set<std::string>& known, const std::string& where) {
  require(doc.is_object(), ErrorKind::Config, where + " must be a JSON object");
  for (const auto& [key, _] : doc.items())
    require(known.count(key) > 0, ErrorKind::Config, "unknown config key '" + key + "' in " + where);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {{"variant", to_string(m.variant)},
          {"joints", m.joints},
          {"input_height", m.input_height},
          {"input_width", m.input_width},
          {"recon_height", m.recon_height},
          {"recon_width", m.recon_width},
          {"encoder_channels", m.encoder_channels},
          {"encoder_strides", m.encoder_strides},
          {"capsule_types", m.capsule_types},
          {"decoder_hidden", m.decoder_hidden},
          {"dropout", m.dropout},
          {"routing",
           {{"iterations", m.routing.iterations},
            {"prior_strength", m.routing.prior_strength},
            {"inv_temperature", m.routing.inv_temperature},
            {"coordinate_addition", m.routing.coordinate_addition}}},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"max_steps", t.max_steps},
          {"seed", t.seed},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"clip_norm", t.clip_norm},
          {"depth_threshold", t.depth_threshold},
          {"inverse_graphics", to_string(t.inverse_graphics)}};
}

RunConfig run_config_from_json(const json& doc) {
  reject_unknown(doc,
                 {"variant", "joints", "input_height", "input_width", "recon_height", "recon_width",
                  "encoder_channels", "encoder_strides", "capsule_types", "decoder_hidden", "dropout", "routing",
                  "learning_rate", "weight_decay", "batch_size", "epochs", "max_steps", "seed", "adam_beta1",
                  "adam_beta2", "adam_eps", "clip_norm", "depth_threshold", "inverse_graphics"},
                 "config");
  RunConfig c;
  auto& m = c.model;
  auto& t = c.train;
  std::string variant = to_string(m.variant), mode = to_string(t.inverse_graphics);
  read(doc, "variant", variant);
  m.variant = parse_variant(variant);
  read(doc, "joints", m.joints);
  read(doc, "input_height", m.input_height);
  read(doc, "input_width", m.input_width);
  read(doc, "recon_height", m.recon_height);
  read(doc, "recon_width", m.recon_width);
  read(doc, "encoder_channels", m.encoder_channels);
  read(doc, "encoder_strides", m.encoder_strides);
  read(doc, "capsule_types", m.capsule_types);
  read(doc, "decoder_hidden", m.decoder_hidden);
  read(doc, "dropout", m.dropout);
  if (doc.contains("routing")) {
    const json& r = doc.at("routing");
    reject_unknown(r, {"iterations", "prior_strength", "inv_temperature", "coordinate_addition"}, "routing");
    read(r, "iterations", m.routing.iterations);
    read(r, "prior_strength", m.routing.prior_strength);
    read(r, "inv_temperature", m.routing.inv_temperature);
    read(r, "coordinate_addition", m.routing.coordinate_addition);
  }
  read(doc, "learning_rate", t.learning_rate);
  read(doc, "weight_decay", t.weight_decay);
  read(doc, "batch_size", t.batch_size);
  read(doc, "epochs", t.epochs);
  read(doc, "max_steps", t.max_steps);
  read(doc, "seed", t.seed);
  read(doc, "adam_beta1", t.adam_beta1);
  read(doc, "adam_beta2", t.adam_beta2);
  read(doc, "adam_eps", t.adam_eps);
  read(doc, "clip_norm", t.clip_norm);
  read(doc, "depth_threshold", t.depth_threshold);
  read(doc, "inverse_graphics", mode);
  t.inverse_graphics = parse_inverse_graphics_mode(mode);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

void apply_env_overrides(RunConfig& config) {
  const char* seed = std::getenv("DECA_SEED");
  if (seed == nullptr || *seed == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(seed, &end, 10);
  require(errno == 0 && end != seed && *end == '\0' && seed[0] != '-', ErrorKind::Config,
          std::string("DECA_SEED is not an unsigned integer: '") + seed + "'");
  config.train.seed = v;
}

}  // namespace deca
