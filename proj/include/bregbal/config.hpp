#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "bregbal/errors.hpp"
#include "bregbal/sim.hpp"

namespace bregbal {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline nlohmann::json toml_scalar(const std::string& raw, int line_no) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError("empty value at line " + std::to_string(line_no));
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"')
      throw ConfigError("unterminated string at line " + std::to_string(line_no));
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  try {
    if (v.find_first_of(".eE") != std::string::npos &&
        v.find_first_not_of("+-0123456789.eE") == std::string::npos)
      return std::stod(v);
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
    return std::stod(v);
  } catch (...) {
    throw ConfigError("cannot parse value '" + v + "' at line " + std::to_string(line_no));
  }
}

}  // namespace detail

// Minimal TOML reader covering the flat key = value subset used by the
// scenario files: strings, numbers, booleans, one-line scalar arrays, and
// [section] headers that prefix keys with "section.".
inline nlohmann::json parse_toml_subset(std::istream& in) {
  nlohmann::json out = nlohmann::json::object();
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("bad section header at line " + std::to_string(line_no));
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at line " + std::to_string(line_no));
    std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key at line " + std::to_string(line_no));
    if (!section.empty()) key = section + "." + key;
    std::string value = detail::trim(line.substr(eq + 1));
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']')
        throw ConfigError("unterminated array at line " + std::to_string(line_no));
      nlohmann::json arr = nlohmann::json::array();
      std::string inner = value.substr(1, value.size() - 2);
      std::string item;
      std::istringstream items(inner);
      while (std::getline(items, item, ','))
        if (!detail::trim(item).empty()) arr.push_back(detail::toml_scalar(item, line_no));
      out[key] = arr;
    } else {
      out[key] = detail::toml_scalar(value, line_no);
    }
  }
  return out;
}

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    try {
      return nlohmann::json::parse(in);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
  }
  return parse_toml_subset(in);
}

inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  ScenarioConfig cfg;
  auto get = [&j](const char* key) -> const nlohmann::json* {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
  };
  try {
    if (auto* v = get("n")) cfg.n = v->get<int>();
    if (auto* v = get("sigma2")) cfg.sigma2 = v->get<double>();
    if (auto* v = get("rho")) cfg.rho = v->get<double>();
    if (auto* v = get("treat_scenario")) cfg.treat_scenario = v->get<std::string>().at(0);
    if (auto* v = get("outcome_scenario")) cfg.outcome_scenario = v->get<std::string>().at(0);
    if (auto* v = get("effect_type")) {
      const std::string s = v->get<std::string>();
      if (s == "constant")
        cfg.effect_type = EffectType::Constant;
      else if (s == "linear")
        cfg.effect_type = EffectType::Linear;
      else
        throw ConfigError("effect_type must be 'constant' or 'linear'");
    }
    if (auto* v = get("replications")) cfg.replications = v->get<int>();
    if (auto* v = get("base_seed")) cfg.base_seed = v->get<std::uint64_t>();
    if (auto* v = get("seed")) cfg.base_seed = v->get<std::uint64_t>();
    if (auto* v = get("threads")) cfg.threads = v->get<int>();
    if (auto* v = get("methods")) {
      cfg.methods.clear();
      for (const auto& m : *v) cfg.methods.push_back(method_from_name(m.get<std::string>()));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid scenario config: ") + e.what());
  }
  if (cfg.treat_scenario != 'a' && cfg.treat_scenario != 'b')
    throw ConfigError("treat_scenario must be 'a' or 'b'");
  if (cfg.outcome_scenario != 'a' && cfg.outcome_scenario != 'b')
    throw ConfigError("outcome_scenario must be 'a' or 'b'");
  if (cfg.n < 2) throw ConfigError("n must be >= 2");
  if (cfg.replications < 1) throw ConfigError("replications must be >= 1");
  if (cfg.sigma2 <= 0.0) throw ConfigError("sigma2 must be > 0");
  if (cfg.rho <= -1.0 || cfg.rho >= 1.0) throw ConfigError("rho must be in (-1, 1)");
  return cfg;
}

}  // namespace bregbal
