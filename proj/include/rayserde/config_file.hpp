// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rayserde {

/// Minimal TOML subset: `[section]` headers, `key = value` pairs, `#` comments.
/// Values are numbers, booleans, "strings" or flat [arrays] of those.
/// Keys are addressed as "section.key" ("key" for the top level).
class ConfigFile {
public:
    static ConfigFile parse(const std::string& text);
    static ConfigFile load(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    std::vector<std::string> keys() const;

    std::optional<std::string> get_string(const std::string& key) const;
    std::optional<double> get_double(const std::string& key) const;
    std::optional<long long> get_int(const std::string& key) const;
    std::optional<bool> get_bool(const std::string& key) const;
    std::optional<std::vector<double>> get_doubles(const std::string& key) const;

private:
    struct Entry {
        std::string raw;
        int line = 0;
    };
    const Entry* find(const std::string& key) const;

    std::map<std::string, Entry> values_;
};

}  // namespace rayserde
