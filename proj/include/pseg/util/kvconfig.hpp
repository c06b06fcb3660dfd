#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "pseg/common.hpp"

namespace pseg::util {

namespace detail {

inline std::string trim(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Flat `key = value` configuration with dotted key names, one entry per
/// line (`train.lambda = 0.9`). Lines whose first non-space character is
/// `#` are comments. Later entries override earlier ones, which is also how
/// command-line overrides are applied on top of a file.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig parse_string(const std::string& text) {
        KvConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": expected key = value, got '" + t + "'");
            const std::string key = detail::trim(t.substr(0, eq));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = detail::trim(t.substr(eq + 1));
        }
        return cfg;
    }

    static KvConfig parse_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        try {
            return parse_string(buf.str());
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::map<std::string, std::string>& entries() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    /// A string value that must be present.
    std::string require_string(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required config key: " + key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        char* end = nullptr;
        const double v = std::strtod(it->second.c_str(), &end);
        if (it->second.empty() || end == nullptr || *end != '\0')
            throw ConfigError("config key " + key + ": expected a number, got '" + it->second +
                              "'");
        return v;
    }

    std::int64_t get_i64(const std::string& key, std::int64_t fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        char* end = nullptr;
        const long long v = std::strtoll(it->second.c_str(), &end, 10);
        if (it->second.empty() || end == nullptr || *end != '\0')
            throw ConfigError("config key " + key + ": expected an integer, got '" + it->second +
                              "'");
        return static_cast<std::int64_t>(v);
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        const std::int64_t v = get_i64(key, static_cast<std::int64_t>(fallback));
        if (has(key) && v < 0)
            throw ConfigError("config key " + key + ": expected a non-negative integer");
        return static_cast<std::uint64_t>(v);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key " + key + ": expected true/false, got '" + it->second +
                          "'");
    }

    /// Rejects any key outside `allowed`, listing every offender.
    void require_known(const std::set<std::string>& allowed) const {
        std::string unknown;
        for (const auto& [key, value] : values_) {
            if (allowed.count(key)) continue;
            if (!unknown.empty()) unknown += ", ";
            unknown += key;
        }
        if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
    }

    /// Sorted `key = value` lines, suitable for echoing into an output
    /// directory and re-feeding through parse_file.
    std::string render() const {
        std::string out;
        for (const auto& [key, value] : values_) {
            out += key;
            out += " = ";
            out += value;
            out += '\n';
        }
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace pseg::util
