#include "streamgate/config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "streamgate/errors.hpp"

namespace streamgate {
namespace {

using nlohmann::json;

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " config must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + section + " config");
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + " has the wrong type");
  }
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"k_layers", c.k_layers},
          {"d_ff", c.d_ff},             {"speak_hidden", c.speak_hidden},
          {"d_video", c.d_video},       {"d_audio", c.d_audio},
          {"vocab_size", c.vocab_size}, {"theta_base", c.theta_base},
          {"rope_partition", {c.partition.n_t, c.partition.n_h, c.partition.n_w}}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  constexpr const char* s = "model";
  check_keys(j, s,
             {"d_model", "n_layers", "n_heads", "k_layers", "d_ff", "speak_hidden", "d_video", "d_audio",
              "vocab_size", "theta_base", "rope_partition"});
  read(j, "d_model", c.d_model, s);
  read(j, "n_layers", c.n_layers, s);
  read(j, "n_heads", c.n_heads, s);
  read(j, "k_layers", c.k_layers, s);
  read(j, "d_ff", c.d_ff, s);
  read(j, "speak_hidden", c.speak_hidden, s);
  read(j, "d_video", c.d_video, s);
  read(j, "d_audio", c.d_audio, s);
  read(j, "vocab_size", c.vocab_size, s);
  read(j, "theta_base", c.theta_base, s);
  if (j.contains("rope_partition")) {
    std::vector<int> p;
    read(j, "rope_partition", p, s);
    if (p.size() != 3) throw ConfigError("model.rope_partition must list three pair counts (t, h, w)");
    c.partition = {p[0], p[1], p[2]};
  }
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"stage", c.stage},
          {"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lambda", c.lambda},
          {"w_pos", c.w_pos ? json(*c.w_pos) : json("auto")},
          {"qa_mix_ratio", c.qa_mix_ratio},
          {"seed", c.seed},
          {"freeze_projections", c.freeze_projections},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"grad_clip", c.grad_clip},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_path", c.checkpoint_path}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  constexpr const char* s = "train";
  check_keys(j, s,
             {"stage", "learning_rate", "steps", "batch_size", "lambda", "w_pos", "qa_mix_ratio", "seed",
              "freeze_projections", "weight_decay", "beta1", "beta2", "adam_eps", "grad_clip", "checkpoint_every",
              "checkpoint_path"});
  read(j, "stage", c.stage, s);
  read(j, "learning_rate", c.learning_rate, s);
  read(j, "steps", c.steps, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "lambda", c.lambda, s);
  if (auto it = j.find("w_pos"); it != j.end()) {
    if (it->is_string() && it->get<std::string>() == "auto")
      c.w_pos.reset();
    else if (it->is_number())
      c.w_pos = it->get<double>();
    else
      throw ConfigError("train.w_pos must be a number or \"auto\"");
  }
  read(j, "qa_mix_ratio", c.qa_mix_ratio, s);
  read(j, "seed", c.seed, s);
  read(j, "freeze_projections", c.freeze_projections, s);
  read(j, "weight_decay", c.weight_decay, s);
  read(j, "beta1", c.beta1, s);
  read(j, "beta2", c.beta2, s);
  read(j, "adam_eps", c.adam_eps, s);
  read(j, "grad_clip", c.grad_clip, s);
  read(j, "checkpoint_every", c.checkpoint_every, s);
  read(j, "checkpoint_path", c.checkpoint_path, s);
  return c;
}

json to_json(const TriggerPolicy& p) {
  return {{"window", p.window},
          {"threshold", p.threshold},
          {"token_budget", p.token_budget},
          {"cooldown_units", p.cooldown_units},
          {"mode", std::string(to_string(p.mode))},
          {"smoothing", std::string(to_string(p.smoothing))}};
}

TriggerPolicy policy_from_json(const json& j, TriggerPolicy p) {
  constexpr const char* s = "policy";
  check_keys(j, s, {"window", "threshold", "token_budget", "cooldown_units", "mode", "smoothing"});
  read(j, "window", p.window, s);
  read(j, "threshold", p.threshold, s);
  read(j, "token_budget", p.token_budget, s);
  read(j, "cooldown_units", p.cooldown_units, s);
  std::string text;
  if (j.contains("mode")) {
    read(j, "mode", text, s);
    p.mode = parse_trigger_mode(text);
  }
  if (j.contains("smoothing")) {
    read(j, "smoothing", text, s);
    p.smoothing = parse_smoothing(text);
  }
  return p;
}

json to_json(const FeatureDims& d) {
  return {{"d_video", d.d_video}, {"d_audio", d.d_audio}, {"grid_h", d.grid_h}, {"grid_w", d.grid_w}};
}

FeatureDims dims_from_json(const json& j, FeatureDims d) {
  constexpr const char* s = "dims";
  check_keys(j, s, {"d_video", "d_audio", "grid_h", "grid_w"});
  read(j, "d_video", d.d_video, s);
  read(j, "d_audio", d.d_audio, s);
  read(j, "grid_h", d.grid_h, s);
  read(j, "grid_w", d.grid_w, s);
  return d;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  policy.validate();
  if (dims.d_video < 1 || dims.d_audio < 1 || dims.grid_h < 1 || dims.grid_w < 1)
    throw ConfigError("feature dims must be positive");
  if (dims.d_video != model.d_video || dims.d_audio != model.d_audio)
    throw ConfigError("model d_video/d_audio must match the stream feature dims");
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  check_keys(j, "run", {"model", "train", "policy", "dims", "seed"});
  if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
  if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
  if (j.contains("policy")) c.policy = policy_from_json(j["policy"], c.policy);
  if (j.contains("dims")) c.dims = dims_from_json(j["dims"], c.dims);
  read(j, "seed", c.seed, "run");
  return c;
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"policy", to_json(c.policy)},
          {"dims", to_json(c.dims)},
          {"seed", c.seed}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c = run_config_from_json(read_json_file(path));
  c.validate();
  return c;
}

}  // namespace streamgate
