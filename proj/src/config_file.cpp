// SPDX-License-Identifier: Apache-2.0

#include "rayserde/config_file.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "rayserde/error.hpp"

namespace rayserde {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
            return false;
        }
    }
    return true;
}

double to_double(const std::string& raw, const std::string& key, int line) {
    const std::string t = trim(raw);
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used == t.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(fmt::format("{} (line {}): expected a number, got '{}'", key, line, t));
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string body = trim(strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') {
                throw ConfigError(fmt::format("line {}: unterminated section header", lineno));
            }
            section = trim(body.substr(1, body.size() - 2));
            if (!valid_name(section)) {
                throw ConfigError(fmt::format("line {}: bad section name '{}'", lineno, section));
            }
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(fmt::format("line {}: expected 'key = value'", lineno));
        }
        const std::string name = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (!valid_name(name)) {
            throw ConfigError(fmt::format("line {}: bad key '{}'", lineno, name));
        }
        if (value.empty()) throw ConfigError(fmt::format("line {}: missing value", lineno));
        const std::string key = section.empty() ? name : section + "." + name;
        if (cfg.values_.count(key) != 0) {
            throw ConfigError(fmt::format("line {}: duplicate key '{}'", lineno, key));
        }
        cfg.values_[key] = {value, lineno};
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("config: cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::vector<std::string> ConfigFile::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

std::optional<std::string> ConfigFile::get_string(const std::string& key) const {
    const Entry* e = find(key);
    if (e == nullptr) return std::nullopt;
    const std::string& r = e->raw;
    if (r.size() >= 2 && r.front() == '"' && r.back() == '"') return r.substr(1, r.size() - 2);
    throw ConfigError(fmt::format("{} (line {}): expected a quoted string", key, e->line));
}

std::optional<double> ConfigFile::get_double(const std::string& key) const {
    const Entry* e = find(key);
    if (e == nullptr) return std::nullopt;
    return to_double(e->raw, key, e->line);
}

std::optional<long long> ConfigFile::get_int(const std::string& key) const {
    const Entry* e = find(key);
    if (e == nullptr) return std::nullopt;
    const double v = to_double(e->raw, key, e->line);
    if (v != std::floor(v) || std::abs(v) > 9.0e15) {
        throw ConfigError(fmt::format("{} (line {}): expected an integer", key, e->line));
    }
    return static_cast<long long>(v);
}

std::optional<bool> ConfigFile::get_bool(const std::string& key) const {
    const Entry* e = find(key);
    if (e == nullptr) return std::nullopt;
    if (e->raw == "true") return true;
    if (e->raw == "false") return false;
    throw ConfigError(fmt::format("{} (line {}): expected true or false", key, e->line));
}

std::optional<std::vector<double>> ConfigFile::get_doubles(const std::string& key) const {
    const Entry* e = find(key);
    if (e == nullptr) return std::nullopt;
    const std::string& r = e->raw;
    if (r.size() < 2 || r.front() != '[' || r.back() != ']') {
        throw ConfigError(fmt::format("{} (line {}): expected [a, b, ...]", key, e->line));
    }
    std::vector<double> out;
    std::stringstream ss(r.substr(1, r.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) continue;
        out.push_back(to_double(item, key, e->line));
    }
    return out;
}

}  // namespace rayserde
