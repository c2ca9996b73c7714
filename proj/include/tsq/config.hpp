#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace tsq::config {

/// Ordered so the canonical text (and therefore the hash) is stable.
using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; `#` starts a comment; blank lines ignored.
/// ConfigError on a line without '=' or with an empty key.
KeyValues parse_key_values(std::string_view text);
KeyValues load_key_values(const std::filesystem::path &path);

/// Canonical `key = value\n` listing in key order.
std::string to_text(const KeyValues &kv);

std::uint64_t hash(const KeyValues &kv);
std::string hex64(std::uint64_t v);

/// Resolved configuration of one command invocation.
struct RunConfig {
    std::string command;
    KeyValues values;

    std::uint64_t hash() const;
    std::string text() const;
};

} // namespace tsq::config
