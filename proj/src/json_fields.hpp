#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "geoedit/errors.hpp"

namespace geoedit::detail {

// Config objects are strict: every key must be known to the reader.
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + what);
  }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, T& out, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + "." + key + ": " + e.what());
  }
}

}  // namespace geoedit::detail
