#include "tsq/config.hpp"

#include <cstdio>
#include <sstream>

#include "tsq/binio.hpp"
#include "tsq/errors.hpp"
#include "tsq/hash.hpp"

namespace tsq::config {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

} // namespace

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash_pos = line.find('#'); hash_pos != std::string::npos) {
            line.erase(hash_pos);
        }
        const std::string stripped = trim(line);
        if (stripped.empty()) {
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        std::string key = trim(std::string_view(stripped).substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        kv[std::move(key)] = trim(std::string_view(stripped).substr(eq + 1));
    }
    return kv;
}

KeyValues load_key_values(const std::filesystem::path &path) {
    return parse_key_values(read_file_text(path));
}

std::string to_text(const KeyValues &kv) {
    std::string out;
    for (const auto &[k, v] : kv) {
        out += k + " = " + v + "\n";
    }
    return out;
}

std::uint64_t hash(const KeyValues &kv) { return fnv1a64(to_text(kv)); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t RunConfig::hash() const { return fnv1a64("command = " + command + "\n" + to_text(values)); }

std::string RunConfig::text() const { return "command = " + command + "\n" + to_text(values); }

} // namespace tsq::config
