// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "json.hpp"

namespace podar {

/// Raised for config values that are present but invalid or unknown.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Rejects keys outside `allowed` so that typos do not silently fall back
/// to defaults.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

/// Reads j[key] into out when present, naming the key on a type error.
template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (it->is_number_integer() && !it->is_number_unsigned())
            throw ConfigError(where + "." + key + ": must be non-negative");
        if (it->is_number_float()) throw ConfigError(where + "." + key + ": must be an integer");
    }
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type (got " + std::string(it->type_name()) + ")");
    }
}

}  // namespace podar
