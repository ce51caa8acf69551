#include "rlt/config.hpp"

#include <fstream>

#include "rlt/errors.hpp"
#include "rlt/lora.hpp"

namespace rlt {

namespace {

template <class F>
void fields(ModelConfig& c, F&& f) {
  f("layers", c.layers);
  f("d_model", c.d_model);
  f("heads", c.heads);
  f("ffn_mult", c.ffn_mult);
  f("text_len", c.text_len);
  f("vocab", c.vocab);
  f("frames", c.frames);
  f("height", c.height);
  f("width", c.width);
  f("channels", c.channels);
  f("temporal_factor", c.temporal_factor);
  f("patch", c.patch);
  f("timesteps", c.timesteps);
  f("beta_start", c.beta_start);
  f("beta_end", c.beta_end);
}

template <class F>
void fields(TrainConfig& c, F&& f) {
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("iterations", c.iterations);
  f("lambda_m", c.lambda_m);
  f("lambda_1", c.lambda_1);
  f("tau", c.tau);
  f("n_pos", c.n_pos);
  f("n_neg", c.n_neg);
  f("bank_capacity", c.bank_capacity);
  f("prompt_dropout", c.prompt_dropout);
  f("seed", c.seed);
  f("rank", c.rank);
  f("lora_scale", c.lora_scale);
  f("placement", c.placement);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("adam_eps", c.adam_eps);
  f("checkpoint_every", c.checkpoint_every);
}

template <class F>
void fields(DataConfig& c, F&& f) {
  f("relation", c.relation);
  f("count", c.count);
  f("seed", c.seed);
  f("shape1", c.shape1);
  f("shape2", c.shape2);
}

template <class C>
nlohmann::json dump(C c) {
  nlohmann::json j = nlohmann::json::object();
  fields(c, [&](const char* name, const auto& v) { j[name] = v; });
  return j;
}

template <class C>
C parse(const nlohmann::json& j, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  C c;
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    fields(c, [&](const char* name, auto& field) {
      if (key != name) return;
      found = true;
      using T = std::decay_t<decltype(field)>;
      try {
        if constexpr (std::is_unsigned_v<T>) {
          if (!value.is_number_unsigned()) throw ConfigError("");
        }
        field = value.template get<T>();
      } catch (const std::exception&) {
        throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
      }
    });
    if (!found) throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string("train.") + name + " must be positive");
  };
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0)) throw ConfigError(std::string("train.") + name + " must be >= 0");
  };
  positive(lr, "lr");
  nonneg(weight_decay, "weight_decay");
  nonneg(lambda_m, "lambda_m");
  nonneg(lambda_1, "lambda_1");
  positive(tau, "tau");
  positive(lora_scale, "lora_scale");
  positive(adam_eps, "adam_eps");
  if (!(prompt_dropout >= 0.0 && prompt_dropout < 1.0)) {
    throw ConfigError("train.prompt_dropout must lie in [0, 1)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (n_pos < 1 || n_neg < 1) throw ConfigError("train.n_pos and train.n_neg must be >= 1");
  if (bank_capacity < 1) throw ConfigError("train.bank_capacity must be >= 1");
  if (rank < 1) throw ConfigError("train.rank must be >= 1");
  Placement::parse(placement);
}

nlohmann::json to_json(const ModelConfig& c) { return dump(c); }
nlohmann::json to_json(const TrainConfig& c) { return dump(c); }
nlohmann::json to_json(const DataConfig& c) { return dump(c); }
nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", to_json(c.data)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) { return parse<ModelConfig>(j, "model"); }
TrainConfig train_config_from_json(const nlohmann::json& j) { return parse<TrainConfig>(j, "train"); }
DataConfig data_config_from_json(const nlohmann::json& j) { return parse<DataConfig>(j, "data"); }

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") c.model = model_config_from_json(value);
    else if (key == "train") c.train = train_config_from_json(value);
    else if (key == "data") c.data = data_config_from_json(value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("override '" + dotted_key + "' must be section.key");
  const std::string section = dotted_key.substr(0, dot), key = dotted_key.substr(dot + 1);
  nlohmann::json j = to_json(cfg);
  if (!j.contains(section)) throw ConfigError("unknown config key '" + section + "'");
  if (!j[section].contains(key)) throw ConfigError("unknown config key '" + dotted_key + "'");
  nlohmann::json& slot = j[section][key];
  if (slot.is_string()) {
    slot = value;
  } else {
    try {
      slot = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("override '" + dotted_key + "': cannot parse '" + value + "'");
    }
  }
  cfg = run_config_from_json(j);
}

}  // namespace rlt
