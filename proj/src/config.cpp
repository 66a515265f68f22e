#include <lec/config.hpp>

#include <json.hpp>

#include <fstream>
#include <functional>
#include <map>

using json = nlohmann::ordered_json;

namespace lec {

namespace {

struct Field {
  std::function<void(Config&, const json&)> set;
  std::function<json(const Config&)> get;
};

template <typename T, typename Get>
void assign(Config& c, const json& v, const char* key, const char* kind, Get&& get) {
  try {
    get(c) = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' must be " + kind);
  }
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    auto num = [&m](const char* key, auto ref) {
      m[key] = {[key, ref](Config& c, const json& v) {
                  if (!v.is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number");
                  ref(c) = v.get<double>();
                },
                [ref](const Config& c) { return json(ref(const_cast<Config&>(c))); }};
    };
    auto integer = [&m](const char* key, auto ref) {
      m[key] = {[key, ref](Config& c, const json& v) {
                  if (!v.is_number_integer()) throw ConfigError(std::string("config key '") + key + "' must be an integer");
                  ref(c) = v.get<int64_t>();
                },
                [ref](const Config& c) { return json(ref(const_cast<Config&>(c))); }};
    };
    auto boolean = [&m](const char* key, auto ref) {
      m[key] = {[key, ref](Config& c, const json& v) {
                  if (!v.is_boolean()) throw ConfigError(std::string("config key '") + key + "' must be a boolean");
                  ref(c) = v.get<bool>();
                },
                [ref](const Config& c) { return json(ref(const_cast<Config&>(c))); }};
    };
    auto str = [&m](const char* key, auto ref) {
      m[key] = {[key, ref](Config& c, const json& v) {
                  if (!v.is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
                  ref(c) = v.get<std::string>();
                },
                [ref](const Config& c) { return json(ref(const_cast<Config&>(c))); }};
    };

    num("lr", [](Config& c) -> double& { return c.lr; });
    integer("batch_size", [](Config& c) -> int& { return c.batch_size; });
    integer("epochs", [](Config& c) -> int& { return c.epochs; });
    num("weight_decay", [](Config& c) -> double& { return c.weight_decay; });
    m["seed"] = {[](Config& c, const json& v) {
                   if (!v.is_number_integer() || v.get<int64_t>() < 0)
                     throw ConfigError("config key 'seed' must be a non-negative integer");
                   c.seed = v.get<uint64_t>();
                 },
                 [](const Config& c) { return json(c.seed); }};
    integer("T_max", [](Config& c) -> int& { return c.T_max; });
    num("eta", [](Config& c) -> double& { return c.eta; });
    integer("m_blocks", [](Config& c) -> int& { return c.m_blocks; });
    boolean("use_vob", [](Config& c) -> bool& { return c.use_vob; });
    boolean("use_cmb", [](Config& c) -> bool& { return c.use_cmb; });
    boolean("use_gmm_loss", [](Config& c) -> bool& { return c.use_gmm_loss; });
    boolean("use_reg_loss", [](Config& c) -> bool& { return c.use_reg_loss; });
    integer("threads", [](Config& c) -> int& { return c.threads; });
    integer("encoder.window_len", [](Config& c) -> int& { return c.window_len; });
    num("gmm.beta", [](Config& c) -> double& { return c.gmm_beta; });
    num("loss.lambda", [](Config& c) -> double& { return c.lambda; });
    num("loss.gamma", [](Config& c) -> double& { return c.gamma; });
    str("infer.score_source", [](Config& c) -> std::string& { return c.score_source; });
    num("infer.r_cls", [](Config& c) -> double& { return c.r_cls; });
    num("infer.r_ano", [](Config& c) -> double& { return c.r_ano; });
    num("infer.nms_iou", [](Config& c) -> double& { return c.nms_iou; });
    integer("infer.gap", [](Config& c) -> int& { return c.gap; });
    integer("synth.C", [](Config& c) -> int& { return c.synth.C; });
    integer("synth.d", [](Config& c) -> int& { return c.synth.d; });
    integer("synth.n_train", [](Config& c) -> int& { return c.synth.n_train; });
    integer("synth.n_test", [](Config& c) -> int& { return c.synth.n_test; });
    num("synth.noise", [](Config& c) -> double& { return c.synth.noise; });
    num("synth.rho", [](Config& c) -> double& { return c.synth.rho; });
    num("synth.fps", [](Config& c) -> double& { return c.synth.fps; });
    integer("synth.snippet_len", [](Config& c) -> int& { return c.synth.snippet_len; });
    str("data.train_manifest", [](Config& c) -> std::string& { return c.train_manifest; });
    str("data.test_manifest", [](Config& c) -> std::string& { return c.test_manifest; });
    return m;
  }();
  return f;
}

// canonical snapshot order
const char* kOrder[] = {
    "lr", "batch_size", "epochs", "weight_decay", "seed", "T_max", "eta",
    "m_blocks", "use_vob", "use_cmb", "use_gmm_loss", "use_reg_loss", "threads",
    "encoder.window_len", "gmm.beta", "loss.lambda", "loss.gamma",
    "infer.score_source", "infer.r_cls", "infer.r_ano", "infer.nms_iou",
    "infer.gap", "synth.C", "synth.d", "synth.n_train", "synth.n_test",
    "synth.noise", "synth.rho", "synth.fps", "synth.snippet_len",
    "data.train_manifest", "data.test_manifest"};

}  // namespace

Config parse_config(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": JSON parse error: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");

  Config c;
  const auto& defs = fields();
  for (const auto& [key, value] : j.items()) {
    auto it = defs.find(key);
    if (it == defs.end()) throw ConfigError(origin + ": unknown config key '" + key + "'");
    it->second.set(c, value);
  }
  validate_config(c);
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open config file");
  std::string text((std::istreambuf_iterator<char>(is)), {});
  return parse_config(text, path);
}

std::string config_to_json(const Config& c) {
  json j;
  const auto& defs = fields();
  for (const char* key : kOrder) j[key] = defs.at(key).get(c);
  return j.dump(2) + "\n";
}

void validate_config(const Config& c) {
  auto bad = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
  if (!(c.lr >= 0)) bad("lr must be >= 0");
  if (c.batch_size < 1) bad("batch_size must be >= 1");
  if (c.epochs < 0) bad("epochs must be >= 0");
  if (!(c.weight_decay >= 0)) bad("weight_decay must be >= 0");
  if (c.T_max < 1) bad("T_max must be >= 1");
  if (!(c.eta >= 0 && c.eta <= 1)) bad("eta must be in [0,1]");
  if (c.m_blocks < 0) bad("m_blocks must be >= 0");
  if (c.threads < 1) bad("threads must be >= 1");
  if (c.window_len < 1) bad("encoder.window_len must be >= 1");
  if (!(c.gmm_beta > 0)) bad("gmm.beta must be positive");
  if (!(c.lambda >= 0)) bad("loss.lambda must be >= 0");
  if (!(c.gamma >= 0)) bad("loss.gamma must be >= 0");
  if (c.score_source != "sm" && c.score_source != "aware")
    bad("infer.score_source must be 'sm' or 'aware'");
  if (!(c.r_cls >= 0 && c.r_cls <= 1)) bad("infer.r_cls must be in [0,1]");
  if (!(c.r_ano >= 0 && c.r_ano <= 1)) bad("infer.r_ano must be in [0,1]");
  if (!(c.nms_iou > 0 && c.nms_iou <= 1)) bad("infer.nms_iou must be in (0,1]");
  if (c.gap < 0) bad("infer.gap must be >= 0");
  if (c.synth.C < 2) bad("synth.C must be >= 2");
  if (c.synth.d < 8) bad("synth.d must be >= 8");
  if (c.synth.n_train < 1 || c.synth.n_test < 1) bad("synth split sizes must be >= 1");
  if (!(c.synth.noise >= 0)) bad("synth.noise must be >= 0");
  if (!(c.synth.rho >= 0 && c.synth.rho <= 1)) bad("synth.rho must be in [0,1]");
  if (!(c.synth.fps > 0)) bad("synth.fps must be positive");
  if (c.synth.snippet_len < 1) bad("synth.snippet_len must be >= 1");
}

}  // namespace lec
