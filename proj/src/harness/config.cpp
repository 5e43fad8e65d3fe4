#include "duo/harness/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "duo/errors.hpp"

namespace duo::harness {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("integer out of range: '" + v + "'");
  }
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated list");
  return out;
}

template <class E>
E parse_enum(const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (v == name) return e;
    names += names.empty() ? name : std::string("|") + name;
  }
  throw ConfigError("expected one of " + names + ", got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_uint(v); }},
      {"corruption",
       [](ExperimentConfig& c, const std::string& v) {
         try {
           c.corruption.kind = toy::parse_corruption(v);
         } catch (const ContractViolation& e) {
           throw ConfigError(e.what());
         }
       }},
      {"severity", [](ExperimentConfig& c, const std::string& v) { c.corruption.severity = static_cast<int>(parse_uint(v)); }},
      {"stream_length", [](ExperimentConfig& c, const std::string& v) { c.stream_length = parse_uint(v); }},
      {"output_dir", [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }},
      {"objective",
       [](ExperimentConfig& c, const std::string& v) {
         try {
           c.adapt.objective = parse_objective(v);
         } catch (const ContractViolation& e) {
           throw ConfigError(e.what());
         }
       }},
      {"lambda", [](ExperimentConfig& c, const std::string& v) { c.adapt.lambda = parse_double(v); }},
      {"alpha", [](ExperimentConfig& c, const std::string& v) { c.adapt.focal.alpha = parse_double(v); }},
      {"gamma", [](ExperimentConfig& c, const std::string& v) { c.adapt.focal.gamma = parse_double(v); }},
      {"beta", [](ExperimentConfig& c, const std::string& v) { c.adapt.beta = parse_double(v); }},
      {"lr", [](ExperimentConfig& c, const std::string& v) { c.adapt.lr = parse_double(v); }},
      {"momentum", [](ExperimentConfig& c, const std::string& v) { c.adapt.momentum = parse_double(v); }},
      {"batch_size", [](ExperimentConfig& c, const std::string& v) { c.adapt.batch_size = parse_uint(v); }},
      {"use_cfl", [](ExperimentConfig& c, const std::string& v) { c.adapt.use_cfl = parse_bool(v); }},
      {"use_ncl", [](ExperimentConfig& c, const std::string& v) { c.adapt.use_ncl = parse_bool(v); }},
      {"mask",
       [](ExperimentConfig& c, const std::string& v) {
         c.adapt.mask = parse_enum<MaskMode>(v, {{"score", MaskMode::score}, {"ones", MaskMode::ones}});
       }},
      {"pixel_reduction",
       [](ExperimentConfig& c, const std::string& v) {
         c.adapt.pixel_reduction =
             parse_enum<PixelReduction>(v, {{"mean", PixelReduction::mean}, {"sum", PixelReduction::sum}});
       }},
      {"params",
       [](ExperimentConfig& c, const std::string& v) {
         c.adapt.params =
             parse_enum<ParamSubset>(v, {{"all", ParamSubset::all}, {"norm_and_head", ParamSubset::norm_and_head}});
       }},
      {"checkpoint", [](ExperimentConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"cache_dir", [](ExperimentConfig& c, const std::string& v) { c.cache_dir = v; }},
      {"train_if_missing", [](ExperimentConfig& c, const std::string& v) { c.train_if_missing = parse_bool(v); }},
      {"train_seed", [](ExperimentConfig& c, const std::string& v) { c.train.seed = parse_uint(v); }},
      {"train_steps", [](ExperimentConfig& c, const std::string& v) { c.train.steps = static_cast<int>(parse_uint(v)); }},
      {"train_batch_size", [](ExperimentConfig& c, const std::string& v) { c.train.batch_size = parse_uint(v); }},
      {"train_lr", [](ExperimentConfig& c, const std::string& v) { c.train.lr = parse_double(v); }},
      {"scene_min_objects",
       [](ExperimentConfig& c, const std::string& v) { c.train.scene.min_objects = static_cast<int>(parse_uint(v)); }},
      {"scene_max_objects",
       [](ExperimentConfig& c, const std::string& v) { c.train.scene.max_objects = static_cast<int>(parse_uint(v)); }},
      {"sweep_lambda", [](ExperimentConfig& c, const std::string& v) { c.sweep_lambda = parse_list(v); }},
      {"sweep_alpha", [](ExperimentConfig& c, const std::string& v) { c.sweep_alpha = parse_list(v); }},
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (corruption.severity < 1 || corruption.severity > 5) throw ConfigError("severity must be in 1..5");
  if (adapt.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (stream_length == 0 || stream_length % adapt.batch_size != 0)
    throw ConfigError("stream_length must be a positive multiple of batch_size");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  for (double l : sweep_lambda)
    if (!(l >= 0)) throw ConfigError("sweep_lambda entries must be >= 0");
  for (double a : sweep_alpha)
    if (!(a > 0)) throw ConfigError("sweep_alpha entries must be > 0");
  try {
    adapt.validate();
    train.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("line " + std::to_string(number) + ": unknown key '" + key + "'");
    try {
      it->second(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + " (" + key + "): " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* s = std::getenv("DUO_SEED")) {
    try {
      cfg.seed = parse_uint(trim(s));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("DUO_SEED: ") + e.what());
    }
  }
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  const AdaptConfig& a = cfg.adapt;
  return {
      {"seed", cfg.seed},
      {"corruption", toy::to_string(cfg.corruption.kind)},
      {"severity", cfg.corruption.severity},
      {"stream_length", cfg.stream_length},
      {"objective", to_string(a.objective)},
      {"lambda", a.lambda},
      {"alpha", a.focal.alpha},
      {"gamma", a.focal.gamma},
      {"beta", a.beta},
      {"lr", a.lr},
      {"momentum", a.momentum},
      {"batch_size", a.batch_size},
      {"use_cfl", a.use_cfl},
      {"use_ncl", a.use_ncl},
      {"mask", a.mask == MaskMode::score ? "score" : "ones"},
      {"pixel_reduction", a.pixel_reduction == PixelReduction::mean ? "mean" : "sum"},
      {"params", a.params == ParamSubset::all ? "all" : "norm_and_head"},
      {"train_fingerprint", cfg.train.fingerprint()},
  };
}

}  // namespace duo::harness
