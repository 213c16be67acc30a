#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "fieldlab/config.hpp"

namespace fieldlab::cli {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.')
            return false;
    return true;
}

Config::Value parse_scalar(const std::string& raw, std::int64_t line_no) {
    std::string v = trim(raw);
    if (v.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    bool looks_float = v.find('.') != std::string::npos || v.find('e') != std::string::npos ||
                       v.find('E') != std::string::npos;
    try {
        std::size_t used = 0;
        if (looks_float) {
            double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return d;
        }
        std::int64_t i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value '" + v + "'");
    }
}

Config::Value parse_value(const std::string& raw, std::int64_t line_no) {
    std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']')
            throw ConfigError("config line " + std::to_string(line_no) + ": unterminated list");
        std::string inner = v.substr(1, v.size() - 2);
        std::vector<std::string> parts;
        std::string cur;
        bool in_string = false;
        for (char c : inner) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                parts.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!trim(cur).empty()) parts.push_back(cur);
        std::vector<double> nums;
        std::vector<std::string> strs;
        bool any_str = false, any_num = false;
        for (const auto& p : parts) {
            Config::Value s = parse_scalar(p, line_no);
            if (std::holds_alternative<std::string>(s)) {
                any_str = true;
                strs.push_back(std::get<std::string>(s));
            } else if (std::holds_alternative<double>(s)) {
                any_num = true;
                nums.push_back(std::get<double>(s));
            } else if (std::holds_alternative<std::int64_t>(s)) {
                any_num = true;
                nums.push_back(static_cast<double>(std::get<std::int64_t>(s)));
            } else {
                throw ConfigError("config line " + std::to_string(line_no) + ": unsupported list entry");
            }
        }
        if (any_str && any_num)
            throw ConfigError("config line " + std::to_string(line_no) + ": mixed list types");
        if (any_str) return strs;
        return nums;
    }
    return parse_scalar(v, line_no);
}

}  // namespace

Config Config::parse(const std::string& text) {
    Config cfg;
    cfg.raw_ = text;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = trim(strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
            section = trim(s.substr(1, s.size() - 2));
            if (!valid_key(section))
                throw ConfigError("config line " + std::to_string(line_no) + ": bad section name '" +
                                  section + "'");
            continue;
        }
        std::size_t eq = std::string::npos;
        bool in_string = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') in_string = !in_string;
            if (s[i] == '=' && !in_string) {
                eq = i;
                break;
            }
        }
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        if (!valid_key(key))
            throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
        std::string full = section.empty() ? key : section + "." + key;
        if (cfg.values_.count(full))
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + full + "'");
        cfg.values_[full] = parse_value(s.substr(eq + 1), line_no);
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

void Config::record(const std::string& key, const nlohmann::json& v) const {
    touched_[key] = true;
    effective_[key] = v;
}

template <typename T>
std::optional<T> Config::typed(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (const T* v = std::get_if<T>(&it->second)) return *v;
    return std::nullopt;
}

double Config::get_num(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it != values_.end()) {
        if (const double* d = std::get_if<double>(&it->second)) {
            record(key, *d);
            return *d;
        }
        if (const std::int64_t* i = std::get_if<std::int64_t>(&it->second)) {
            record(key, *i);
            return static_cast<double>(*i);
        }
        throw ConfigError("config key '" + key + "' is not a number");
    }
    record(key, fallback);
    return fallback;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it != values_.end()) {
        if (const std::int64_t* i = std::get_if<std::int64_t>(&it->second)) {
            record(key, *i);
            return *i;
        }
        throw ConfigError("config key '" + key + "' is not an integer");
    }
    record(key, fallback);
    return fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it != values_.end()) {
        if (const bool* b = std::get_if<bool>(&it->second)) {
            record(key, *b);
            return *b;
        }
        throw ConfigError("config key '" + key + "' is not a boolean");
    }
    record(key, fallback);
    return fallback;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it != values_.end()) {
        if (const std::string* s = std::get_if<std::string>(&it->second)) {
            record(key, *s);
            return *s;
        }
        throw ConfigError("config key '" + key + "' is not a string");
    }
    record(key, fallback);
    return fallback;
}

std::vector<double> Config::get_num_list(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it != values_.end()) {
        if (const auto* v = std::get_if<std::vector<double>>(&it->second)) {
            record(key, *v);
            return *v;
        }
        throw ConfigError("config key '" + key + "' is not a numeric list");
    }
    record(key, fallback);
    return fallback;
}

std::vector<std::string> Config::get_str_list(const std::string& key,
                                              std::vector<std::string> fallback) const {
    auto it = values_.find(key);
    if (it != values_.end()) {
        if (const auto* v = std::get_if<std::vector<std::string>>(&it->second)) {
            record(key, *v);
            return *v;
        }
        throw ConfigError("config key '" + key + "' is not a string list");
    }
    record(key, fallback);
    return fallback;
}

void Config::override_int(const std::string& key, std::int64_t value) { values_[key] = value; }

void Config::require_consumed() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : values_)
        if (!touched_.count(key)) unknown.push_back(key);
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace fieldlab::cli
