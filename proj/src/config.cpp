#include "avobj/config.hpp"

#include <fstream>

namespace avobj {

Json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open " + path);
  Json j;
  try {
    is >> j;
  } catch (const Json::parse_error& e) {
    throw config_error("parse error in " + path + ": " + e.what());
  }
  return j;
}

void save_json_file(const std::string& path, const Json& j, int indent) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open " + path + " for writing");
  os << j.dump(indent) << "\n";
  if (!os) throw data_error("short write to " + path);
}

void apply_override(Json& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw config_error("override must be key.path=value, got '" + assignment +
                       "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;
  }

  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty())
      throw config_error("empty key segment in override '" + assignment + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw config_error("override path '" + path +
                         "' descends through a non-object");
    start = dot + 1;
  }
}

void merge_config(Json& base, const Json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      merge_config(base[key], value);
    else
      base[key] = value;
  }
}

}  // namespace avobj
