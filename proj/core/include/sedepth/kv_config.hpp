#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace sedepth {

using KvPairs = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
/// Throws ConfigError naming the line on malformed input.
KvPairs parse_kv_text(const std::string& text);
KvPairs read_kv_file(const std::filesystem::path& path);
std::string format_kv(const KvPairs& pairs);

/// Splits a `key=value` override.
std::pair<std::string, std::string> split_override(const std::string& assignment);

/// Binds string keys to typed fields so that config files and `--set`
/// overrides share one type-checked path.
class KvBinder {
public:
    void bind(std::string key, std::int64_t& field);
    void bind(std::string key, std::uint64_t& field);
    void bind(std::string key, double& field);
    void bind(std::string key, bool& field);
    void bind(std::string key, std::string& field);

    bool has(const std::string& key) const;
    /// Throws ConfigError(key) for unknown keys or values of the wrong type.
    void set(const std::string& key, const std::string& value);
    void apply(const KvPairs& pairs);
    KvPairs dump() const;

private:
    using Slot = std::variant<std::int64_t*, std::uint64_t*, double*, bool*, std::string*>;
    std::vector<std::pair<std::string, Slot>> slots_;

    const Slot* find(const std::string& key) const;
};

std::string format_double(double value);

}  // namespace sedepth
