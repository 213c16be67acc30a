#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace fieldlab::cli {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Declarative key-value configuration with [dotted.section] tables.
/// Every lookup records the effective value (default included), so a run can
/// serialize its fully materialized configuration; unread keys are treated as
/// configuration mistakes and rejected.
class Config {
  public:
    using Value = std::variant<double, std::int64_t, bool, std::string, std::vector<double>,
                               std::vector<std::string>>;

    static Config parse(const std::string& text);
    static Config parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    double get_num(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::vector<double> get_num_list(const std::string& key, std::vector<double> fallback) const;
    std::vector<std::string> get_str_list(const std::string& key,
                                          std::vector<std::string> fallback) const;

    /// Force a value (used by sweeps to pin the seed per run).
    void override_int(const std::string& key, std::int64_t value);

    /// Raises listing every key that was never read by the experiment.
    void require_consumed() const;

    /// Every key the run looked at, with the value actually used.
    nlohmann::json materialized() const { return effective_; }

    const std::string& raw_text() const { return raw_; }

  private:
    std::map<std::string, Value> values_;
    mutable std::map<std::string, bool> touched_;
    mutable nlohmann::json effective_;
    std::string raw_;

    template <typename T>
    std::optional<T> typed(const std::string& key) const;
    void record(const std::string& key, const nlohmann::json& v) const;
};

std::uint64_t fnv1a_hash(const std::string& bytes);
std::string hash_hex(std::uint64_t h);

}  // namespace fieldlab::cli
