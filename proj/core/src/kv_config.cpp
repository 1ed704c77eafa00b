#include "sedepth/kv_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sedepth/errors.hpp"

namespace sedepth {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError(key, "expected an integer, got '" + value + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    // from_chars for double is available in libstdc++ 11+.
    double out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError(key, "expected a real number, got '" + value + "'");
    }
    return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no" || value == "off") {
        return false;
    }
    throw ConfigError(key, "expected a boolean, got '" + value + "'");
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

KvPairs parse_kv_text(const std::string& text) {
    KvPairs out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no), "expected 'key = value', got '" + body + "'");
        }
        std::string key = trim(body.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no), "empty key");
        }
        out.emplace_back(std::move(key), trim(body.substr(eq + 1)));
    }
    return out;
}

KvPairs read_kv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(path.string(), "cannot open config file");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
}

std::string format_kv(const KvPairs& pairs) {
    std::string out;
    for (const auto& [k, v] : pairs) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

std::pair<std::string, std::string> split_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(assignment, "override must look like key=value");
    }
    return {trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1))};
}

void KvBinder::bind(std::string key, std::int64_t& field) { slots_.emplace_back(std::move(key), &field); }
void KvBinder::bind(std::string key, std::uint64_t& field) { slots_.emplace_back(std::move(key), &field); }
void KvBinder::bind(std::string key, double& field) { slots_.emplace_back(std::move(key), &field); }
void KvBinder::bind(std::string key, bool& field) { slots_.emplace_back(std::move(key), &field); }
void KvBinder::bind(std::string key, std::string& field) { slots_.emplace_back(std::move(key), &field); }

const KvBinder::Slot* KvBinder::find(const std::string& key) const {
    for (const auto& [k, slot] : slots_) {
        if (k == key) {
            return &slot;
        }
    }
    return nullptr;
}

bool KvBinder::has(const std::string& key) const { return find(key) != nullptr; }

void KvBinder::set(const std::string& key, const std::string& value) {
    const Slot* slot = find(key);
    if (slot == nullptr) {
        throw ConfigError(key, "unknown key");
    }
    std::visit(
        [&](auto* field) {
            using T = std::remove_pointer_t<decltype(field)>;
            if constexpr (std::is_same_v<T, std::int64_t> || std::is_same_v<T, std::uint64_t>) {
                *field = parse_integer<T>(key, value);
            } else if constexpr (std::is_same_v<T, double>) {
                *field = parse_real(key, value);
            } else if constexpr (std::is_same_v<T, bool>) {
                *field = parse_flag(key, value);
            } else {
                *field = value;
            }
        },
        *slot);
}

void KvBinder::apply(const KvPairs& pairs) {
    for (const auto& [k, v] : pairs) {
        set(k, v);
    }
}

KvPairs KvBinder::dump() const {
    KvPairs out;
    out.reserve(slots_.size());
    for (const auto& [k, slot] : slots_) {
        std::string value = std::visit(
            [](auto* field) -> std::string {
                using T = std::remove_pointer_t<decltype(field)>;
                if constexpr (std::is_same_v<T, double>) {
                    return format_double(*field);
                } else if constexpr (std::is_same_v<T, bool>) {
                    return *field ? "true" : "false";
                } else if constexpr (std::is_same_v<T, std::string>) {
                    return *field;
                } else {
                    return std::to_string(*field);
                }
            },
            slot);
        out.emplace_back(k, std::move(value));
    }
    return out;
}

}  // namespace sedepth
