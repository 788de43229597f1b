// SPDX-License-Identifier: Apache-2.0
//
// JSON (de)serialization of the configuration structs. Readers are strict:
// unknown keys and type mismatches raise ConfigError naming "section.key".

#pragma once

#include <concepts>
#include <set>
#include <string>
#include <string_view>

#include "json.hpp"
#include "prefixbridge/generate.hpp"
#include "prefixbridge/lm.hpp"
#include "prefixbridge/mapper.hpp"
#include "prefixbridge/trainer.hpp"

namespace pfx {

using Json = nlohmann::json;

/// Reads typed fields out of one JSON object, then rejects leftovers.
class JsonFields {
public:
    JsonFields(const Json& object, std::string section);

    template <std::unsigned_integral U>
    void read(const char* key, U& out) {
        if (const Json* v = find(key)) {
            if (!v->is_number_unsigned()) {
                throw_type(key, "a non-negative integer");
            }
            out = v->get<U>();
        }
    }
    void read(const char* key, double& out);
    void read(const char* key, bool& out);
    void read(const char* key, std::string& out);
    /// Throws ConfigError for the first key that was never read.
    void finish() const;

    std::string path(std::string_view key) const;

private:
    const Json* find(const char* key);
    [[noreturn]] void throw_type(const char* key, const char* expected) const;

    const Json& object_;
    std::string section_;
    std::set<std::string> seen_;
};

Json to_json(const LMConfig& c);
Json to_json(const MapperConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const PretrainConfig& c);
Json to_json(const DecodeConfig& c);

void from_json(const Json& j, std::string_view section, LMConfig& c);
void from_json(const Json& j, std::string_view section, MapperConfig& c);
void from_json(const Json& j, std::string_view section, TrainConfig& c);
void from_json(const Json& j, std::string_view section, PretrainConfig& c);
void from_json(const Json& j, std::string_view section, DecodeConfig& c);

}  // namespace pfx
