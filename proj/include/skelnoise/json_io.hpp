#pragma once

#include <json.hpp>

// Like NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT, but the functions are
// not inline, so a header can declare them and one .cpp define them.
#define SKELNOISE_JSON_DEFINE(Type, ...)                                                            \
  void to_json(nlohmann::json& nlohmann_json_j, const Type& nlohmann_json_t) {                       \
    NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(NLOHMANN_JSON_TO, __VA_ARGS__))                         \
  }                                                                                                  \
  void from_json(const nlohmann::json& nlohmann_json_j, Type& nlohmann_json_t) {                     \
    const Type nlohmann_json_default_obj{};                                                          \
    NLOHMANN_JSON_EXPAND(NLOHMANN_JSON_PASTE(NLOHMANN_JSON_FROM_WITH_DEFAULT, __VA_ARGS__))          \
  }
