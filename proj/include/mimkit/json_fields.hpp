// Copyright 2026 The mimkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Field-level JSON readers that report the offending key path.

#include <set>
#include <string>

#include "json.hpp"
#include "mimkit/errors.hpp"

namespace mimkit::json_fields {

using nlohmann::json;

template <typename V>
V get(const json& j, const std::string& section, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
      if (!j.at(key).is_number_unsigned()) throw ConfigError("expected a non-negative integer");
    } else if constexpr (std::is_same_v<V, bool>) {
      if (!j.at(key).is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!j.at(key).is_number()) throw ConfigError("expected a number");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!j.at(key).is_string()) throw ConfigError("expected a string");
    }
    return j.at(key).get<V>();
  } catch (const std::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
inline void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(section + "." + key + ": unknown field");
  }
}

}  // namespace mimkit::json_fields
