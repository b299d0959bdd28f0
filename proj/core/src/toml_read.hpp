/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

// Strict typed reads from toml++ nodes. Every failure is a ConfigError that
// names the document, the key and the source line.

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <fmt/format.h>
#include <toml.hpp>

#include "evotaxo/errors.hpp"

namespace evotaxo::detail {

class TomlReader {
public:
    explicit TomlReader(std::string_view document) : doc_(document) {}

    [[noreturn]] void fail(const toml::node& n, std::string_view key, std::string_view what) const {
        throw ConfigError(fmt::format("{}: '{}' {} (line {})", doc_, key, what, n.source().begin.line));
    }

    toml::table parse(std::string_view text) const {
        try {
            return toml::parse(text);
        } catch (const toml::parse_error& e) {
            throw ConfigError(fmt::format("{}: {} (line {})", doc_, e.description(), e.source().begin.line));
        }
    }

    void reject_unknown(const toml::table& t, std::initializer_list<std::string_view> known,
                        std::string_view context) const {
        for (const auto& [k, v] : t)
            if (std::find(known.begin(), known.end(), k.str()) == known.end())
                fail(v, k.str(), fmt::format("is not a known key in {}", context));
    }

    template <typename T>
    T number(const toml::node& n, std::string_view key) const {
        if constexpr (std::is_floating_point_v<T>) {
            if (auto v = n.value<double>()) return *v;
        } else {
            if (const auto* i = n.as_integer()) {
                if constexpr (std::is_unsigned_v<T>)
                    if (i->get() < 0) fail(n, key, "must be non-negative");
                return static_cast<T>(i->get());
            }
        }
        fail(n, key, "has the wrong type");
    }

    bool boolean(const toml::node& n, std::string_view key) const {
        if (const auto* b = n.as_boolean()) return b->get();
        fail(n, key, "must be a boolean");
    }

    std::string string(const toml::node& n, std::string_view key) const {
        if (const auto* s = n.as_string()) return s->get();
        fail(n, key, "must be a string");
    }

    std::vector<std::string> strings(const toml::node& n, std::string_view key) const {
        const auto* arr = n.as_array();
        if (!arr) fail(n, key, "must be an array of strings");
        std::vector<std::string> out;
        for (const auto& e : *arr) out.push_back(string(e, key));
        return out;
    }

    const toml::table& table(const toml::node& n, std::string_view key) const {
        if (const auto* t = n.as_table()) return *t;
        fail(n, key, "must be a table");
    }

    const toml::array& tables(const toml::node& n, std::string_view key) const {
        const auto* arr = n.as_array();
        if (!arr || (!arr->empty() && !arr->is_array_of_tables())) fail(n, key, "must be an array of tables");
        return *arr;
    }

private:
    std::string doc_;
};

}  // namespace evotaxo::detail
